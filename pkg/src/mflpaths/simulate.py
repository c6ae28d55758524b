"""Ground-truth generation: Euler-Maruyama for gradient drift-diffusions with branching.

Built-in benchmark landscapes live in ten dimensions: a time-dependent
bifurcation and a bistable double well used with a growth prior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, SamplingError
from .types import GrowthPrior, SnapshotSeries

BISTABLE_UPPER = np.array([1.4, 1.4] + [0.0] * 8)
BISTABLE_LOWER = np.array([-1.25, -1.25] + [0.0] * 8)


@dataclass(frozen=True)
class PotentialSpec:
    """Named potential ``Psi(t, x)``.

    ``quadratic`` is ``scale/2 * |x - center|^2`` in any dimension; ``zero``
    has no drift.
    """

    name: str
    dim: int = 10
    scale: float = 1.0
    center: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in ("bifurcation", "bistable", "quadratic", "zero"):
            raise ConfigError(f"unknown potential {self.name!r}")
        if self.name in ("bifurcation", "bistable") and self.dim != 10:
            raise ConfigError(f"{self.name} potential is defined in d=10, got d={self.dim}")

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ConfigError(f"{self.name} potential expects dimension {self.dim}, got {X.shape[1]}")
        return X

    def value(self, t: float, X) -> np.ndarray:
        X = self._check(X)
        if self.name == "bifurcation":
            x1 = X[:, 0]
            return (0.5 * (x1 - 1.5) ** 2 * (x1 + 1.5) ** 2 + 10 * (X[:, 1] + t) ** 2
                    + 10 * np.sum(X[:, 2:] ** 2, axis=1))
        if self.name == "bistable":
            a = np.sum((X - BISTABLE_UPPER) ** 2, axis=1)
            b = np.sum((X - BISTABLE_LOWER) ** 2, axis=1)
            return 1.25 * a * b + 10 * np.sum(X[:, 2:] ** 2, axis=1)
        if self.name == "quadratic":
            c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)
            return 0.5 * self.scale * np.sum((X - c) ** 2, axis=1)
        return np.zeros(X.shape[0])

    def grad(self, t: float, X) -> np.ndarray:
        X = self._check(X)
        if self.name == "bifurcation":
            g = 20.0 * X
            x1 = X[:, 0]
            g[:, 0] = 2.0 * x1 * (x1**2 - 2.25)
            g[:, 1] = 20.0 * (X[:, 1] + t)
            return g
        if self.name == "bistable":
            da = X - BISTABLE_UPPER
            db = X - BISTABLE_LOWER
            a = np.sum(da**2, axis=1, keepdims=True)
            b = np.sum(db**2, axis=1, keepdims=True)
            g = 2.5 * (da * b + db * a)
            g[:, 2:] += 20.0 * X[:, 2:]
            return g
        if self.name == "quadratic":
            c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)
            return self.scale * (X - c)
        return np.zeros_like(X)


@dataclass
class SimulationResult:
    """Population recorded at ``record_times``.

    ``positions[r]`` and ``ids[r]`` list the live particles at record ``r``;
    ``parent[i]`` is the id that particle ``i`` split from (``-1`` for
    founders) and ``founder[i]`` the founder of its lineage.
    """

    record_times: np.ndarray
    positions: list
    ids: list
    parent: np.ndarray
    founder: np.ndarray
    tau: float
    dt: float
    meta: dict = field(default_factory=dict)

    def population(self) -> np.ndarray:
        return np.array([len(i) for i in self.ids])

    def at(self, t: float):
        r = int(np.argmin(np.abs(self.record_times - t)))
        if abs(self.record_times[r] - t) > 0.5 * self.dt + 1e-12:
            raise SamplingError(f"time {t} was not recorded")
        return self.positions[r], self.ids[r]

    def founder_endpoints(self) -> np.ndarray:
        """Final positions of the founders' own trajectories (children are other ids)."""
        pos, ids = self.positions[-1], self.ids[-1]
        alive_founders = self.parent[ids] == -1
        return pos[alive_founders]


def euler_maruyama(spec: PotentialSpec, tau: float, x0, t_span=(0.0, 1.0), dt: float = 1e-3,
                   growth: Optional[GrowthPrior] = None, seed: int = 0,
                   record_times: Optional[Sequence[float]] = None) -> SimulationResult:
    """Simulate ``dX = -grad Psi(t, X) dt + sqrt(tau) dB`` with optional branching.

    ``x0`` is an ``(n, d)`` array of initial positions. With a growth prior
    each particle divides with probability ``g dt`` per step (the child starts
    at the parent's position) and dies with probability ``-g dt`` where
    ``g < 0``. ``record_times`` are snapped to the step grid.
    """
    X = np.array(np.atleast_2d(x0), dtype=float)
    if not dt > 0:
        raise ConfigError("dt must be positive")
    t0, t1 = map(float, t_span)
    nsteps = int(round((t1 - t0) / dt))
    if record_times is None:
        record_times = [t0, t1]
    rec_steps = sorted({int(round((float(t) - t0) / dt)) for t in record_times})
    if rec_steps[0] < 0 or rec_steps[-1] > nsteps:
        raise ConfigError("record times outside the simulation span")
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    ids = np.arange(n)
    parent = [-1] * n
    founder = list(range(n))
    sqrt_tau_dt = np.sqrt(tau * dt)
    positions, id_list, times = [], [], []
    rec = set(rec_steps)
    for step in range(nsteps + 1):
        t = t0 + step * dt
        if step in rec:
            positions.append(X.copy())
            id_list.append(ids.copy())
            times.append(t)
        if step == nsteps:
            break
        if growth is not None and X.shape[0]:
            g = growth(t, X)
            prob = np.abs(g) * dt
            if np.any(prob >= 1):
                raise ConfigError(f"dt * |g| reaches {prob.max():.3g} >= 1; reduce dt")
            uu = rng.random(X.shape[0])
            event = uu < prob
            split = event & (g > 0)
            die = event & (g < 0)
            if split.any():
                new_ids = np.arange(len(parent), len(parent) + int(split.sum()))
                parent.extend(ids[split].tolist())
                founder.extend(founder[i] for i in ids[split])
                X = np.concatenate([X, X[split]])
                ids = np.concatenate([ids, new_ids])
                die = np.concatenate([die, np.zeros(new_ids.size, bool)])
            if die.any():
                X, ids = X[~die], ids[~die]
        X = X - spec.grad(t, X) * dt + sqrt_tau_dt * rng.standard_normal(X.shape)
    return SimulationResult(record_times=np.asarray(times), positions=positions, ids=id_list,
                            parent=np.asarray(parent), founder=np.asarray(founder), tau=tau, dt=dt)


def extract_snapshots(result: SimulationResult, times: Sequence[float], counts: Sequence[int],
                      seed: int = 0) -> SnapshotSeries:
    """Subsample the live population at each time without replacement.

    Particles already used at an earlier time are excluded while the
    population allows it, so snapshots are drawn from disjoint particles.
    """
    if len(times) != len(counts):
        raise SamplingError("times and counts differ in length")
    rng = np.random.default_rng(seed)
    used: set = set()
    points = []
    for t, c in zip(times, counts):
        pos, ids = result.at(t)
        if c > len(ids):
            raise SamplingError(f"requested {c} particles at t={t} but only {len(ids)} are alive")
        fresh = np.array([k for k, i in enumerate(ids) if i not in used], dtype=int)
        pool = fresh if fresh.size >= c else np.arange(len(ids))
        pick = np.sort(rng.choice(pool, size=c, replace=False))
        used.update(ids[pick].tolist())
        points.append(pos[pick])
    return SnapshotSeries.from_arrays(points, times)


# ---------------------------------------------------------------- benchmarks

@dataclass
class Benchmark:
    series: SnapshotSeries
    truth: SnapshotSeries
    simulation: SimulationResult
    tau: float
    growth: Optional[GrowthPrior] = None


def _benchmark_times(t_end: float, T: int = 10) -> np.ndarray:
    return np.linspace(0.0, t_end, T)


def bifurcation_benchmark(N: int = 64, seed: int = 0, n_truth: int = 500, T: int = 10,
                          dt: float = 1e-3) -> Benchmark:
    """Bifurcating process on ``[0, 1.25]``; ``N_1 = N_T = 64`` and ``N`` in between."""
    tau = 0.25
    times = _benchmark_times(1.25, T)
    counts = [64] + [N] * (T - 2) + [64]
    n0 = n_truth + sum(counts)
    rng = np.random.default_rng([seed, 0])
    x0 = 0.1 * rng.standard_normal((n0, 10))
    sim = euler_maruyama(PotentialSpec("bifurcation"), tau, x0, (0.0, 1.25), dt, seed=int(rng.integers(2**63)),
                         record_times=times)
    truth_pts, obs_pts = [], []
    for r in range(T):
        pos = sim.positions[r]
        # the first n_truth particles form the reference, the rest are observed
        truth_pts.append(pos[:n_truth])
        obs_pts.append(pos[n_truth + sum(counts[:r]): n_truth + sum(counts[: r + 1])])
    series = SnapshotSeries.from_arrays(obs_pts, times)
    truth = SnapshotSeries.from_arrays(truth_pts, times)
    return Benchmark(series, truth, sim, tau)


def bistable_benchmark(seed: int = 0, n_per_time: int = 50, n0: int = 400, T: int = 10,
                       dt: float = 1e-3, growth: bool = True, n_truth: int = 500) -> Benchmark:
    """Double-well process on ``[0, 0.5]`` with the tanh branching rate."""
    tau = 1.0
    prior = GrowthPrior.bistable()
    times = _benchmark_times(0.5, T)
    rng = np.random.default_rng([seed, 1])
    x0 = 0.1 * rng.standard_normal((n0, 10))
    sim = euler_maruyama(PotentialSpec("bistable"), tau, x0, (0.0, 0.5), dt,
                         growth=prior if growth else None, seed=int(rng.integers(2**63)), record_times=times)
    series = extract_snapshots(sim, times, [n_per_time] * T, seed=int(rng.integers(2**63)))
    truth_pts = []
    for r in range(T):
        pos = sim.positions[r]
        k = min(n_truth, pos.shape[0])
        truth_pts.append(pos[np.sort(rng.choice(pos.shape[0], size=k, replace=False))])
    truth = SnapshotSeries.from_arrays(truth_pts, times)
    return Benchmark(series, truth, sim, tau, prior if growth else None)
