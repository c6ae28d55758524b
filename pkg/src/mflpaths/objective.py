"""The reduced objective ``F = G + tau H`` and its first variation.

``G`` adds the data-fit term to the bridge costs between consecutive
clouds; ``H`` (minus the differential entropy) is only estimated for
reporting and never enters the particle updates.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from . import kernels
from .bridge import BridgeSolution, primal_value, potential_gradient
from .errors import MFLError
from .types import MarginalState, ProblemConfig, Snapshot, SnapshotSeries


def _kernel_logits(cloud, points, sigma):
    # rows: data points, columns: particles
    return 0.5 * kernels.sqdist(points, cloud) / sigma**2


def fit_value(cloud, snapshot: Snapshot, sigma: float) -> float:
    """Soft-min negative log-likelihood of the observed points under the cloud."""
    cloud = np.atleast_2d(np.asarray(cloud, float))
    m = cloud.shape[0]
    C = _kernel_logits(cloud, snapshot.points, sigma)
    lse = kernels.lse_rows(C, np.zeros(m), np.full(m, -math.log(m)), 1.0)
    return float(-(snapshot.weights @ lse))


def _fit_parts(cloud, snapshot, sigma):
    m = cloud.shape[0]
    C = _kernel_logits(cloud, snapshot.points, sigma)
    lse = kernels.lse_rows(C, np.zeros(m), np.full(m, -math.log(m)), 1.0)
    # softmax over particles for each data point, weighted by the data weights
    P = np.exp(-C - math.log(m) - lse[:, None]) * snapshot.weights[:, None]
    return P, lse


def fit_gradient(cloud, snapshot: Snapshot, sigma: float, delta_t: float, lam: float,
                 values: bool = False):
    """Gradient of the fit first variation at every particle.

    Equals ``m * (delta_t / lam) * grad fit_value``. With ``values=True`` also
    returns the first-variation values ``-(delta_t/lam) sum_y w_y g(x-y)/(g*mu)(y)``.
    """
    cloud = np.atleast_2d(np.asarray(cloud, float))
    m = cloud.shape[0]
    P, _ = _fit_parts(cloud, snapshot, sigma)
    mass = P.sum(axis=0)
    coef = m * delta_t / lam
    grad = coef * (cloud * mass[:, None] - P.T @ snapshot.points) / sigma**2
    if values:
        return -coef * mass, grad
    return grad


def pooled_data(series: SnapshotSeries):
    """All observations with time-mixture weights ``w / T``."""
    pts = np.concatenate([s.points for s in series])
    w = np.concatenate([s.weights for s in series]) / series.T
    return pts, w


def confine_value_and_gradient(clouds, series: SnapshotSeries, confine_sigma: float):
    """Confining potential that penalizes particles far from every observation.

    Returns the value averaged over all particles of all clouds and the
    first-variation gradients (``T m`` times the per-particle partials), i.e.
    ``(1/T) sum_y pi_y(x) (x - y) / sigma^2`` with softmax weights over the pooled data.
    """
    clouds = np.asarray(clouds, float)
    T, m, d = clouds.shape
    pts, w = pooled_data(series)
    flat = clouds.reshape(T * m, d)
    C = 0.5 * kernels.sqdist(flat, pts) / confine_sigma**2
    lse, grad = kernels.softmin_grad(flat, pts, C, np.zeros(len(w)), np.log(w), 1.0)
    value = float(-lse.mean())
    return value, (grad / (T * confine_sigma**2)).reshape(T, m, d), (-lse / T).reshape(T, m)


@dataclass
class FirstVariation:
    """Per-particle values and gradients of the first variation, split by origin."""

    values: np.ndarray
    gradients: np.ndarray
    parts: dict = field(default_factory=dict)


def first_variation(state: MarginalState, series: SnapshotSeries, bridges: Sequence[BridgeSolution],
                    config: ProblemConfig, sigma: Optional[float] = None) -> FirstVariation:
    """Assemble fit, forward-bridge, backward-bridge and confinement parts.

    Bridge ``i`` joins cloud ``i`` (source) to cloud ``i+1`` (target). The
    first cloud has no backward part and the last no forward part.
    """
    X = state.clouds
    T, m, d = X.shape
    if len(bridges) != T - 1:
        raise MFLError(f"expected {T - 1} bridges, got {len(bridges)}")
    sigma = config.sigma if sigma is None else sigma
    sig_eff = sigma * math.sqrt(config.fit_scale)
    t = series.times
    dts = series.delta_t
    parts = {name: (np.zeros((T, m)), np.zeros((T, m, d))) for name in ("fit", "forward", "backward", "confine")}
    for i in range(T):
        val, grad = fit_gradient(X[i], series[i], sig_eff, dts[i], config.lam, values=True)
        parts["fit"][0][i], parts["fit"][1][i] = val, grad
        if i < T - 1:
            h = t[i + 1] - t[i]
            val, grad = potential_gradient(bridges[i], X[i], side="source", values=True)
            parts["forward"][0][i], parts["forward"][1][i] = val / h, grad / h
        if i > 0:
            h = t[i] - t[i - 1]
            val, grad = potential_gradient(bridges[i - 1], X[i], side="target", values=True)
            parts["backward"][0][i], parts["backward"][1][i] = val / h, grad / h
    if config.confine_sigma is not None:
        _, grad, vals = confine_value_and_gradient(X, series, config.confine_sigma)
        parts["confine"] = (vals, grad)
    values = sum(p[0] for p in parts.values())
    gradients = sum(p[1] for p in parts.values())
    return FirstVariation(values=values, gradients=gradients, parts=parts)


def kl_entropy(points, k: int = 4) -> float:
    """Kozachenko-Leonenko k-nearest-neighbour estimate of differential entropy."""
    X = np.atleast_2d(np.asarray(points, float))
    n, d = X.shape
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    dist, _ = cKDTree(X).query(X, k=k + 1)
    eps = dist[:, k]
    eps = np.maximum(eps, np.finfo(float).tiny)
    log_vd = (d / 2) * math.log(math.pi) - gammaln(d / 2 + 1)
    return float(digamma(n) - digamma(k) + log_vd + d * np.mean(np.log(eps)))


@dataclass
class ObjectiveReport:
    """Objective bookkeeping for one iterate.

    ``entropy`` is minus the summed differential entropies of the clouds
    (``None`` when the estimator is unavailable). It is a diagnostic only.
    """

    fit: float
    transport: float
    entropy: Optional[float]
    confinement: float
    tau: float
    total: Optional[float]
    iteration: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_term(clouds, series: SnapshotSeries, config: ProblemConfig, sigma: Optional[float] = None) -> float:
    sigma = config.sigma if sigma is None else sigma
    sig_eff = sigma * math.sqrt(config.fit_scale)
    dts = series.delta_t
    return float(sum(dts[i] * fit_value(clouds[i], series[i], sig_eff) for i in range(series.T)) / config.lam)


def transport_term(bridges: Sequence[BridgeSolution], series: SnapshotSeries) -> float:
    h = np.diff(series.times)
    return float(sum(primal_value(b) / hi for b, hi in zip(bridges, h)))


def objective_report(state: MarginalState, series: SnapshotSeries, bridges: Sequence[BridgeSolution],
                     config: ProblemConfig, knn_k: Optional[int] = None, tau: Optional[float] = None,
                     sigma: Optional[float] = None) -> ObjectiveReport:
    """Evaluate ``F`` from already-solved bridges; the entropy term is a k-NN estimate."""
    k = config.knn_k if knn_k is None else knn_k
    tau = config.tau if tau is None else tau
    fit = fit_term(state.clouds, series, config, sigma)
    transport = transport_term(bridges, series)
    confinement = 0.0
    if config.confine_sigma is not None:
        confinement = confine_value_and_gradient(state.clouds, series, config.confine_sigma)[0]
    entropy = None
    if state.m > k:
        entropy = -sum(kl_entropy(c, k) for c in state.clouds)
    total = None if entropy is None else fit + transport + confinement + tau * entropy
    return ObjectiveReport(fit=fit, transport=transport, entropy=entropy, confinement=confinement,
                           tau=tau, total=total, iteration=state.iteration)
