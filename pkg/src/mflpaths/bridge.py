"""Entropic optimal transport between weighted point clouds.

Balanced and KL-relaxed (unbalanced) Sinkhorn iterations in the log domain,
extension of the dual potentials off the support, their gradients, and
recovery of the optimal coupling.

Duals follow the convention ``gamma_ij = p_i q_j exp((u_i + v_j - c_ij) / tau)``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import InputError
from .types import GrowthPrior, normalize_weights


@dataclass(frozen=True)
class CostSpec:
    """Half squared Euclidean cost divided by ``scale``."""

    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError(f"cost scale must be positive, got {self.scale}")

    def matrix(self, X, Y) -> np.ndarray:
        return 0.5 * kernels.sqdist(X, Y) / self.scale

    def __call__(self, x, y) -> float:
        diff = np.asarray(x, float) - np.asarray(y, float)
        return 0.5 * float(diff @ diff) / self.scale


@dataclass
class BridgeSolution:
    u: np.ndarray
    v: np.ndarray
    tau: float
    source: np.ndarray
    target: np.ndarray
    p: np.ndarray
    q: np.ndarray
    cost: CostSpec
    rho: float = math.inf
    converged: bool = True
    marginal_violation: float = 0.0
    n_iter: int = 0
    C: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def balanced(self) -> bool:
        return math.isinf(self.rho)

    @property
    def damping(self) -> float:
        return damping_factor(self.rho, self.tau)

    def cost_matrix(self) -> np.ndarray:
        if self.C is None:
            self.C = self.cost.matrix(self.source, self.target)
        return self.C


@dataclass
class Coupling:
    matrix: np.ndarray
    converged: bool = True

    @property
    def row_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    @property
    def mass(self) -> float:
        return float(self.matrix.sum())


def damping_factor(rho: float, tau: float) -> float:
    return 1.0 if math.isinf(rho) else rho / (rho + tau)


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def sinkhorn_unbalanced(source, target, cost: CostSpec = CostSpec(), tau: float = 1.0,
                        rho: float = math.inf, p=None, q=None, tol: float = 1e-6,
                        max_iter: int = 10_000, warm_start=None) -> BridgeSolution:
    """Solve the KL-relaxed entropic transport problem by damped log-domain Sinkhorn.

    Each half-step is the balanced softmin update scaled by ``rho / (rho + tau)``.
    With ``rho = inf`` the factor is exactly one and the problem is balanced;
    the duals are then shifted so that ``<u, p> = <v, q>``.

    Iteration stops once the L1 violation of the row marginal optimality
    condition is at most ``tol``; the column condition holds exactly after
    every column update. Hitting ``max_iter`` returns ``converged=False``.
    """
    X = np.ascontiguousarray(source, dtype=float)
    Y = np.ascontiguousarray(target, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    p = normalize_weights(p, X.shape[0])
    q = normalize_weights(q, Y.shape[0])
    C = cost.matrix(X, Y)
    if not np.all(np.isfinite(C)):
        raise InputError("cost matrix has non-finite entries")
    CT = np.ascontiguousarray(C.T)
    logp, logq = _log(p), _log(q)
    damp = damping_factor(rho, tau)
    inv_rho = 0.0 if math.isinf(rho) else 1.0 / rho

    v = np.zeros(Y.shape[0])
    if warm_start is not None:
        wv = np.asarray(warm_start[1], dtype=float)
        if wv.shape == v.shape and np.all(np.isfinite(wv)):
            v = wv.copy()

    v, it = _scaling_loop(C, CT, p, q, logp, logq, v, tau, damp, inv_rho, tol, max_iter)
    # one closing iteration in the log domain: the returned pair is an exact
    # softmin pair and the violation is measured on it
    u = -damp * tau * kernels.lse_rows(C, v, logq, tau)
    v = -damp * tau * kernels.lse_rows(CT, u, logp, tau)
    r = kernels.lse_rows(C, v, logq, tau)
    with np.errstate(over="ignore"):
        row = np.exp(logp + u / tau + r)
    viol = float(np.abs(row - p * np.exp(-u * inv_rho)).sum())
    if not np.isfinite(viol):
        raise InputError("Sinkhorn iterates became non-finite")
    converged = viol <= tol
    if math.isinf(rho):
        u, v = gauge_fix(u, v, p, q)
    return BridgeSolution(u=u, v=v, tau=float(tau), source=X, target=Y, p=p, q=q, cost=cost,
                          rho=float(rho), converged=converged, marginal_violation=viol,
                          n_iter=it, C=C)


_ABSORB = 40.0


def _scaling_loop(C, CT, p, q, logp, logq, v, tau, damp, inv_rho, tol, max_iter):
    """Sinkhorn iterations on scalings ``a, b`` around log potentials ``u0, v0``.

    The kernel ``exp((u0_i + v0_j - C_ij) / tau)`` is rebuilt whenever a
    scaling leaves ``exp(+-_ABSORB)``, so each iteration costs two mat-vecs.
    Returns the column potential and the iteration count.
    """
    n, k = C.shape
    v0 = v
    la, lb = np.zeros(n), np.zeros(k)
    used = 0
    while True:
        u0 = -damp * tau * kernels.lse_rows(C, v0, logq, tau)
        with np.errstate(under="ignore"):
            K = np.exp((u0[:, None] + v0[None, :] - C) / tau)
        Kq = K * q[None, :]
        KpT = np.ascontiguousarray(K.T * p[None, :])
        s = Kq.sum(axis=1)
        lb[:] = 0.0
        status, it = kernels.scaling_iterations(Kq, KpT, s, la, lb, (1.0 - damp) * u0 / tau,
                                                (1.0 - damp) * v0 / tau, p, u0, damp, tau, inv_rho,
                                                tol, max_iter - used, _ABSORB)
        used += it
        if status == 2:
            # a row or column of the cached kernel underflowed; take one exact
            # log-domain iteration instead and recentre around it
            u = -damp * tau * kernels.lse_rows(C, v0, logq, tau)
            v0 = -damp * tau * kernels.lse_rows(CT, u, logp, tau)
            if used >= max_iter:
                return v0, used
            continue
        v0 = v0 + tau * lb
        if status != 1 or used >= max_iter:
            return v0, used


def sinkhorn_balanced(source, target, cost: CostSpec = CostSpec(), tau: float = 1.0, p=None, q=None,
                      tol: float = 1e-6, max_iter: int = 10_000, warm_start=None) -> BridgeSolution:
    """Balanced entropic OT; the ``rho = inf`` case of :func:`sinkhorn_unbalanced`."""
    return sinkhorn_unbalanced(source, target, cost, tau, math.inf, p, q, tol, max_iter, warm_start)


def gauge_fix(u, v, p, q):
    """Shift ``(u + k, v - k)`` so that the two weighted means agree."""
    kappa = 0.5 * (float(v @ q) - float(u @ p))
    return u + kappa, v - kappa


def tilt_marginals(mu_points, mu_weights, nu_points, nu_weights, growth: GrowthPrior,
                   dt: float, t_start: float = 0.0, t_end: float = 0.0, sign: float = 1.0):
    """Reweight bridge endpoints by a prior growth rate and renormalize.

    With ``sign=1`` the source weights are multiplied by ``exp(-g dt / 2)`` and
    the target weights by ``exp(+g dt / 2)``; ``sign=-1`` swaps the two factors.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    mu_w = normalize_weights(mu_weights, np.atleast_2d(mu_points).shape[0])
    nu_w = normalize_weights(nu_weights, np.atleast_2d(nu_points).shape[0])
    gs = growth(t_start, mu_points)
    gt = growth(t_end, nu_points)
    ls = _log(mu_w) - sign * gs * dt / 2.0
    lt = _log(nu_w) + sign * gt * dt / 2.0
    if not (np.all(ls < 700) and np.all(lt < 700)):
        raise InputError("growth tilt overflows; rescale the growth rate or the time step")
    return _softmax(ls), _softmax(lt)


def _softmax(logw):
    mx = np.max(logw)
    w = np.exp(logw - mx)
    return w / w.sum()


def _side(solution: BridgeSolution, side: str):
    if side == "source":
        return solution.target, solution.v, solution.q
    if side == "target":
        return solution.source, solution.u, solution.p
    raise ValueError(f"side must be 'source' or 'target', got {side!r}")


def extend_potentials(solution: BridgeSolution, query, side: str = "source") -> np.ndarray:
    """Evaluate the smooth extension of a dual potential at arbitrary points.

    ``side="source"`` gives ``phi(x) = -tau log sum_j exp((v_j - c(x, y_j)) / tau) q_j``
    (times the damping factor for unbalanced problems); ``side="target"`` gives
    the symmetric ``psi``.
    """
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    other, dual, w = _side(solution, side)
    C = solution.cost.matrix(Q, other)
    return -solution.damping * solution.tau * kernels.lse_rows(C, dual, _log(w), solution.tau)


def potential_gradient(solution: BridgeSolution, query, side: str = "source", values: bool = False):
    """Gradient of :func:`extend_potentials`: a softmax average of ``(x - y_j) / scale``.

    With ``values=True`` returns ``(potential values, gradients)``.
    """
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    other, dual, w = _side(solution, side)
    C = solution.cost.matrix(Q, other)
    lse, grad = kernels.softmin_grad(Q, other, C, dual, _log(w), solution.tau)
    damp = solution.damping
    grad = damp * grad / solution.cost.scale
    if values:
        return -damp * solution.tau * lse, grad
    return grad


def recover_coupling(solution: BridgeSolution) -> Coupling:
    """Dense plan ``p_i q_j exp((u_i + v_j - c_ij) / tau)``."""
    if not solution.converged:
        warnings.warn("recovering a coupling from an unconverged Sinkhorn solve", RuntimeWarning,
                      stacklevel=2)
    C = solution.cost_matrix()
    with np.errstate(divide="ignore"):
        logg = (solution.u[:, None] + solution.v[None, :] - C) / solution.tau
        G = np.exp(logg + _log(solution.p)[:, None] + _log(solution.q)[None, :])
    return Coupling(G, converged=solution.converged)


def _kl(a, b):
    """Mass-corrected KL divergence between nonnegative vectors (or matrices)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pos = a > 0
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])) - a.sum() + b.sum())


def transport_objective(gamma, C, p, q, tau, rho=math.inf) -> float:
    """Evaluate the primal objective at an arbitrary plan.

    ``<C, gamma> + tau KL(gamma | p x q)`` plus ``rho KL`` marginal penalties
    when ``rho`` is finite.
    """
    gamma = np.asarray(gamma, float)
    val = float(np.sum(C * gamma)) + tau * _kl(gamma, np.outer(p, q))
    if not math.isinf(rho):
        val += rho * _kl(gamma.sum(axis=1), p) + rho * _kl(gamma.sum(axis=0), q)
    return val


def primal_value(solution: BridgeSolution) -> float:
    """Optimal transport value.

    Balanced problems use the dual identity ``<u, p> + <v, q>``; relaxed ones
    evaluate the primal objective on the recovered plan.
    """
    if solution.balanced:
        return float(solution.u @ solution.p + solution.v @ solution.q)
    gamma = recover_coupling(solution).matrix
    return transport_objective(gamma, solution.cost_matrix(), solution.p, solution.q,
                               solution.tau, solution.rho)


def dump_solution_csv(solution: BridgeSolution, path) -> None:
    """Debug dump of duals and the dense plan in long format."""
    G = recover_coupling(solution).matrix
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "u_i", "v_j", "gamma_ij"])
        for i in range(G.shape[0]):
            for j in range(G.shape[1]):
                w.writerow([i, j, repr(float(solution.u[i])), repr(float(solution.v[j])), repr(float(G[i, j]))])
