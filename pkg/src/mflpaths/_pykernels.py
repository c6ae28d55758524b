"""Pure numpy implementations of the hot reductions.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature; :mod:`mflpaths.kernels` picks one at import time.
"""
import numpy as np


def sqdist(X, Y, num_threads=1):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def lse_rows(C, f, logw, tau, num_threads=1):
    """``out_i = log sum_j exp((f_j - C_ij) / tau + logw_j)``."""
    A = (f[None, :] - C) * (1.0 / tau) + logw[None, :]
    mx = A.max(axis=1)
    finite = np.isfinite(mx)
    safe = np.where(finite, mx, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(A - safe[:, None]).sum(axis=1))
    out[~finite] = -np.inf
    return out


def softmin_grad(X, Y, C, f, logw, tau, num_threads=1):
    """Row log-sum-exp and the softmax-weighted mean of ``x_i - y_j``."""
    A = (f[None, :] - C) * (1.0 / tau) + logw[None, :]
    mx = A.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(A - mx).sum(axis=1))
    W = np.exp(A - lse[:, None])
    grad = X * W.sum(axis=1, keepdims=True) - W @ Y
    return lse, grad


def pair_dist_sum(X, wx, Y, wy, num_threads=1):
    """``sum_ij wx_i wy_j |x_i - y_j|``."""
    D = np.sqrt(sqdist(X, Y))
    return float(wx @ D @ wy)


def scaling_iterations(Kq, KpT, s, la, lb, ca, cb, p, u0, damp, tau, inv_rho, tol, max_iter, absorb):
    live = p > 0
    it = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while it < max_iter:
            it += 1
            la[:] = np.where(live, -damp * np.log(s) - ca, 0.0)
            ea = np.exp(la)
            lb[:] = -damp * np.log(KpT @ ea) - cb
            s[:] = Kq @ np.exp(lb)
            target = p if inv_rho == 0.0 else p * np.exp(-(u0 + tau * la) * inv_rho)
            viol = np.abs(p * ea * s - target)[live].sum()
            big = max(np.abs(la).max(), np.abs(lb).max())
            if not (big < np.inf and viol < np.inf):
                return 2, it
            if viol <= tol:
                return 0, it
            if big > absorb:
                return 1, it
    return 3, it
