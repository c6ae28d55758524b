"""Domain types: snapshots, particle states, problem configuration, schedules."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError

WEIGHT_ATOL = 1e-12


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ConfigError(f"points must be a nonempty (n, d) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("points contain non-finite values")
    return arr


def normalize_weights(weights, n: int) -> np.ndarray:
    """Return nonnegative weights of length ``n`` summing to one (uniform if None)."""
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ConfigError(f"expected {n} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ConfigError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ConfigError("weights must have positive total mass")
    return w / total


@dataclass(frozen=True, eq=False)
class Snapshot:
    """A weighted point cloud observed at one time in [0, 1]."""

    time: float
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", normalize_weights(self.weights, pts.shape[0]))
        if not (0.0 <= self.time <= 1.0):
            raise ConfigError(f"snapshot time {self.time} outside [0, 1]")
        pts.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class IntervalSpec:
    t_start: float
    t_end: float
    tau: float

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


class SnapshotSeries:
    """Ordered snapshots on the unit time interval.

    Times passed to :meth:`from_arrays` are mapped affinely onto ``[0, 1]``;
    the original labels are kept in :attr:`original_times` for output.
    """

    def __init__(self, snapshots: Sequence[Snapshot], original_times: Optional[Sequence[float]] = None):
        snapshots = list(snapshots)
        if len(snapshots) < 2:
            raise ConfigError(f"a series needs at least 2 snapshots, got {len(snapshots)}")
        times = np.array([s.time for s in snapshots], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ConfigError("snapshot times must be strictly increasing")
        dims = {s.dim for s in snapshots}
        if len(dims) != 1:
            raise ConfigError(f"snapshots have inconsistent dimensions {sorted(dims)}")
        self.snapshots = tuple(snapshots)
        if original_times is None:
            original_times = times
        original_times = np.asarray(original_times, dtype=float)
        if original_times.shape != times.shape:
            raise ConfigError("original_times length does not match snapshots")
        self.original_times = original_times
        self.original_times.setflags(write=False)

    @classmethod
    def from_arrays(cls, points: Sequence, times: Sequence[float], weights: Optional[Sequence] = None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ConfigError("need at least 2 snapshot times")
        if len(points) != times.size:
            raise ConfigError("points and times have different lengths")
        span = times[-1] - times[0]
        if not span > 0:
            raise ConfigError("snapshot times must be strictly increasing")
        unit = (times - times[0]) / span
        unit[0], unit[-1] = 0.0, 1.0
        weights = [None] * times.size if weights is None else weights
        snaps = [Snapshot(float(t), p, w) for t, p, w in zip(unit, points, weights)]
        return cls(snaps, original_times=times)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, i) -> Snapshot:
        return self.snapshots[i]

    def __iter__(self):
        return iter(self.snapshots)

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def dim(self) -> int:
        return self.snapshots[0].dim

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def delta_t(self) -> np.ndarray:
        return delta_t_weights(self)

    def to_original_time(self, t):
        """Map unit-interval times back to the labels the data came with."""
        t0, t1 = self.original_times[0], self.original_times[-1]
        tt = self.times
        return t0 + (np.asarray(t, dtype=float) - tt[0]) / (tt[-1] - tt[0]) * (t1 - t0)


def delta_t_weights(series: SnapshotSeries) -> np.ndarray:
    """Observation weights ``(t_{i+1} - t_{i-1}) / 2`` with ``t_0 = 0`` and ``t_{T+1} = 1``."""
    t = series.times
    padded = np.concatenate([[0.0], t, [1.0]])
    return (padded[2:] - padded[:-2]) / 2.0


def derive_intervals(series: SnapshotSeries, tau: float) -> list[IntervalSpec]:
    """Per-interval bridge temperatures ``(t_{i+1} - t_i) * tau``."""
    if len(series) < 2:
        raise ConfigError("need at least 2 snapshots to form intervals")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    t = series.times
    return [IntervalSpec(float(a), float(b), float((b - a) * tau)) for a, b in zip(t[:-1], t[1:])]


@dataclass
class MarginalState:
    """Particle clouds, one ``(m, d)`` array per timepoint."""

    clouds: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.clouds = np.asarray(self.clouds, dtype=float)
        if self.clouds.ndim != 3:
            raise ConfigError(f"clouds must have shape (T, m, d), got {self.clouds.shape}")

    @property
    def T(self) -> int:
        return self.clouds.shape[0]

    @property
    def m(self) -> int:
        return self.clouds.shape[1]

    @property
    def dim(self) -> int:
        return self.clouds.shape[2]

    def copy(self) -> "MarginalState":
        return MarginalState(self.clouds.copy(), self.iteration)


_GROWTH_KINDS = ("zero", "constant", "tanh", "callable")


@dataclass(frozen=True)
class GrowthPrior:
    """Prior branching rate ``g(t, x)``.

    kind ``"tanh"`` evaluates ``scale * (tanh(slope * x[axis]) + 1) / 2``;
    ``"constant"`` returns ``value`` everywhere; ``"callable"`` wraps ``fn(t, X)``.
    """

    kind: str = "zero"
    value: float = 0.0
    scale: float = 10.0
    slope: float = 2.0
    axis: int = 0
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in _GROWTH_KINDS:
            raise ConfigError(f"unknown growth kind {self.kind!r}; expected one of {_GROWTH_KINDS}")
        if self.kind == "callable" and self.fn is None:
            raise ConfigError("callable growth prior needs fn")

    @classmethod
    def bistable(cls) -> "GrowthPrior":
        return cls(kind="tanh", scale=10.0, slope=2.0, axis=0)

    def __call__(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "zero":
            g = np.zeros(X.shape[0])
        elif self.kind == "constant":
            g = np.full(X.shape[0], float(self.value))
        elif self.kind == "tanh":
            g = self.scale * (np.tanh(self.slope * X[:, self.axis]) + 1.0) / 2.0
        else:
            g = np.asarray(self.fn(t, X), dtype=float).reshape(X.shape[0])
        if not np.all(np.isfinite(g)):
            raise ConfigError("growth prior produced non-finite values")
        return g

    def to_dict(self) -> dict:
        if self.kind == "callable":
            raise ConfigError("callable growth priors are not serializable")
        d = dataclasses.asdict(self)
        d.pop("fn")
        return d


STEP_PRECONDITIONING = ("interval", "none")


@dataclass(frozen=True)
class ProblemConfig:
    """Model and optimizer settings.

    ``lam`` is the fit regularization strength (``lambda`` in config files).
    """

    lam: float
    sigma: float
    tau: float
    m: int = 100
    eta: float = 0.1
    iterations: int = 2500
    seed: int = 0
    epsilon: float = 0.0
    growth: Optional[GrowthPrior] = None
    rho: float = math.inf
    confine_sigma: Optional[float] = None
    init: str = "gaussian"
    init_mean: float = 0.0
    init_std: float = 0.1
    init_jitter: float = 0.0
    init_file: Optional[str] = None
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 1000
    cost_scale: float = 1.0
    fit_scale: float = 1.0
    auto_scale: bool = False
    knn_k: int = 4
    report_stride: int = 10
    checkpoint_every: int = 0
    step_preconditioning: str = "interval"

    def __post_init__(self):
        for name in ("lam", "sigma", "tau", "rho", "sinkhorn_tol", "cost_scale", "fit_scale"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and val > 0):
                raise ConfigError(f"{name} must be strictly positive, got {val!r}")
        if not (isinstance(self.eta, (int, float)) and self.eta >= 0):
            raise ConfigError(f"eta must be >= 0, got {self.eta!r}")
        if self.step_preconditioning not in STEP_PRECONDITIONING:
            raise ConfigError(f"step_preconditioning must be one of {STEP_PRECONDITIONING}, "
                              f"got {self.step_preconditioning!r}")
        if self.confine_sigma is not None and not self.confine_sigma > 0:
            raise ConfigError(f"confine_sigma must be positive, got {self.confine_sigma}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.init_std < 0 or self.init_jitter < 0:
            raise ConfigError("init_std and init_jitter must be >= 0")
        if self.sinkhorn_max_iter < 1 or self.knn_k < 1 or self.report_stride < 1 or self.checkpoint_every < 0:
            raise ConfigError("sinkhorn_max_iter, knn_k, report_stride must be >= 1; checkpoint_every >= 0")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "ProblemConfig":
        return dataclasses.replace(self, **changes)


EPSILON_MODES = ("none", "geometric", "logarithmic")


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric temperature decay ``tau_k = max(c * r**k, tau_f)``.

    After ``anneal_steps`` iterations the temperature is pinned to ``tau_f``.
    """

    c: float
    r: float
    tau_f: float
    anneal_steps: int
    scale_eta: bool = False
    scale_sigma: bool = False
    epsilon_mode: str = "none"
    epsilon_alpha: float = 0.0
    epsilon_k0: float = math.e

    def __post_init__(self):
        if not self.c > 0 or not self.tau_f > 0:
            raise ConfigError("schedule c and tau_f must be positive")
        if not 0 < self.r < 1:
            raise ConfigError(f"schedule r must lie in (0, 1), got {self.r}")
        if self.anneal_steps < 0:
            raise ConfigError("anneal_steps must be >= 0")
        if self.epsilon_mode not in EPSILON_MODES:
            raise ConfigError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if self.epsilon_mode == "logarithmic" and not self.epsilon_k0 > 1:
            raise ConfigError("epsilon_k0 must exceed 1 for logarithmic mode")

    @classmethod
    def geometric(cls, tau0: float, tau_f: float, steps: int, **kw) -> "AnnealingSchedule":
        """Schedule that starts at ``tau0`` and reaches ``tau_f`` after ``steps`` iterations."""
        r = (tau_f / tau0) ** (1.0 / steps) if steps > 0 and tau0 > tau_f else 0.5
        return cls(c=tau0, r=r, tau_f=tau_f, anneal_steps=steps, **kw)

    @classmethod
    def constant(cls, tau: float) -> "AnnealingSchedule":
        return cls(c=tau, r=0.5, tau_f=tau, anneal_steps=0)

    def tau_at(self, k: int) -> float:
        if k >= self.anneal_steps:
            return self.tau_f
        return max(self.c * self.r**k, self.tau_f)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
