"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``MFLPATHS_BACKEND=python`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

_FORCE_PY = os.environ.get("MFLPATHS_BACKEND", "").lower() in ("python", "py", "numpy")

_impl = _pykernels
BACKEND = "python"
if not _FORCE_PY:
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

_num_threads = 1


def set_num_threads(n: int) -> None:
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def sqdist(X, Y):
    """Pairwise squared Euclidean distances, shape ``(len(X), len(Y))``."""
    return _impl.sqdist(_c(X), _c(Y), _num_threads)


def lse_rows(C, f, logw, tau):
    return _impl.lse_rows(_c(C), _c(f), _c(logw), float(tau), _num_threads)


def softmin_grad(X, Y, C, f, logw, tau):
    return _impl.softmin_grad(_c(X), _c(Y), _c(C), _c(f), _c(logw), float(tau), _num_threads)


def pair_dist_sum(X, wx, Y, wy):
    return _impl.pair_dist_sum(_c(X), _c(wx), _c(Y), _c(wy), _num_threads)


def use_backend(name: str) -> str:
    """Switch backend at runtime (``"cython"`` or ``"python"``); returns the previous one."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl, BACKEND = _pykernels, "python"
    elif name == "cython":
        from . import _ckernels

        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def scaling_iterations(Kq, KpT, s, la, lb, ca, cb, p, u0, damp, tau, inv_rho, tol, max_iter, absorb):
    """Run scaling-form Sinkhorn sweeps in place on ``s, la, lb``.

    Returns ``(status, iterations)`` with status 0 converged, 1 a scaling
    left ``exp(+-absorb)``, 2 non-finite values, 3 iteration budget spent.
    """
    return _impl.scaling_iterations(_c(Kq), _c(KpT), s, la, lb, _c(ca), _c(cb), _c(p), _c(u0), float(damp),
                                    float(tau), float(inv_rho), float(tol), int(max_iter), float(absorb))
