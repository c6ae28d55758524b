"""Sample continuous trajectories from solved bridges.

Skeletons ``(x_1, ..., x_T)`` are drawn by chaining the interval couplings
as a Markov chain over particle indices; the gaps between consecutive
skeleton points are filled with Brownian bridges of diffusivity ``tau``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bridge import BridgeSolution, Coupling, recover_coupling
from .errors import SamplingError

log = logging.getLogger(__name__)

_STREAM_SKELETON = 2
_STREAM_BRIDGE = 3


@dataclass
class PathLaw:
    couplings: list
    clouds: list
    times: np.ndarray
    tau: float
    growth_heuristic: bool = False

    @classmethod
    def from_bridges(cls, bridges: Sequence[BridgeSolution], times, tau: float) -> "PathLaw":
        couplings = [recover_coupling(b) for b in bridges]
        clouds = [bridges[0].source] + [b.target for b in bridges]
        heuristic = any(not b.balanced for b in bridges) or any(
            not (np.allclose(b.p, b.p[0]) and np.allclose(b.q, b.q[0])) for b in bridges)
        return cls(couplings, clouds, np.asarray(times, float), float(tau), heuristic)

    @property
    def T(self) -> int:
        return len(self.clouds)

    def chain_mismatch(self) -> float:
        """Largest L1 gap between a coupling's column marginal and the next row marginal."""
        gaps = [np.abs(a.col_marginal - b.row_marginal).sum() for a, b in zip(self.couplings[:-1], self.couplings[1:])]
        return float(max(gaps, default=0.0))


def _rng(seed, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


def _sample_rows(P: np.ndarray, rows: np.ndarray, rng) -> np.ndarray:
    """Draw one column per requested row from row-normalized ``P`` (inverse CDF)."""
    cdf = np.cumsum(P, axis=1)
    tot = cdf[:, -1]
    u = rng.random(rows.size) * tot[rows]
    out = np.empty(rows.size, dtype=int)
    for r in np.unique(rows):
        sel = rows == r
        out[sel] = np.searchsorted(cdf[r], u[sel], side="right")
    return np.minimum(out, P.shape[1] - 1)


def chain_sample(law: PathLaw, count: int, seed: int = 0) -> np.ndarray:
    """Skeleton particle indices, shape ``(count, T)``.

    ``x_1`` comes from the first coupling's row marginal, then each
    ``x_{i+1}`` from the normalized row of coupling ``i`` at ``x_i``. Rows
    with zero mass restart from that coupling's row marginal.
    """
    rng = _rng(seed, _STREAM_SKELETON)
    T = law.T
    idx = np.empty((count, T), dtype=int)
    first = law.couplings[0].row_marginal
    if not first.sum() > 0:
        raise SamplingError("first coupling has zero mass")
    idx[:, 0] = rng.choice(first.size, size=count, p=first / first.sum())
    for i, cpl in enumerate(law.couplings):
        G = cpl.matrix
        rows = idx[:, i]
        mass = G.sum(axis=1)
        dead = mass[rows] <= 0
        if dead.any():
            log.info("interval %d: %d skeletons hit zero-mass rows; restarting from the row marginal", i, int(dead.sum()))
            rm = mass / mass.sum()
            rows = rows.copy()
            rows[dead] = rng.choice(rm.size, size=int(dead.sum()), p=rm)
            idx[:, i] = rows
        idx[:, i + 1] = _sample_rows(G, rows, rng)
    return idx


def brownian_bridge(x_a, x_b, t_a: float, t_b: float, tau: float, grid, rng=None, seed: int = 0) -> np.ndarray:
    """Sample Brownian bridges pinned at ``(t_a, x_a)`` and ``(t_b, x_b)`` on ``grid``.

    ``x_a``/``x_b`` are ``(d,)`` or ``(n, d)``; the result has shape
    ``(n, len(grid), d)`` (``n`` dropped for 1-D input). Points are drawn
    sequentially from the Gaussian conditional given the previous point and
    the right endpoint; grid points equal to an endpoint return it exactly.
    """
    if not t_b > t_a:
        raise ValueError("t_b must exceed t_a")
    grid = np.asarray(grid, float)
    if np.any(grid < t_a) or np.any(grid > t_b) or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted and lie within [t_a, t_b]")
    xa = np.asarray(x_a, float)
    xb = np.asarray(x_b, float)
    single = xa.ndim == 1
    xa, xb = np.atleast_2d(xa), np.atleast_2d(xb)
    n, d = xa.shape
    if rng is None:
        rng = np.random.default_rng(seed)
    out = np.empty((n, grid.size, d))
    s, xs = t_a, xa
    for g, t in enumerate(grid):
        if t == t_a:
            out[:, g] = xa
            continue
        if t == t_b:
            out[:, g] = xb
            s, xs = t, xb
            continue
        frac = (t - s) / (t_b - s)
        var = tau * (t - s) * (t_b - t) / (t_b - s)
        xs = xs + frac * (xb - xs) + np.sqrt(max(var, 0.0)) * rng.standard_normal((n, d))
        out[:, g] = xs
        s = t
    return out[0] if single else out


@dataclass
class PathSample:
    path_id: int
    times: np.ndarray
    positions: np.ndarray


@dataclass
class PathSamples:
    """Sampled trajectories on a shared grid.

    ``positions`` has shape ``(count, len(times), d)``; ``skeleton`` holds
    the particle index at each snapshot time.
    """

    times: np.ndarray
    positions: np.ndarray
    skeleton: np.ndarray
    knot_index: np.ndarray
    growth_heuristic: bool = False

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __iter__(self):
        for k in range(len(self)):
            yield PathSample(k, self.times, self.positions[k])

    @property
    def endpoints(self) -> np.ndarray:
        return self.positions[:, -1]

    def at_knot(self, i: int) -> np.ndarray:
        return self.positions[:, self.knot_index[i]]


def path_grid(times, grid_resolution: int):
    """Uniform grid with ``grid_resolution`` points per interval (shared endpoints kept once)."""
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    times = np.asarray(times, float)
    pieces = [times[:1]]
    knots = [0]
    for a, b in zip(times[:-1], times[1:]):
        seg = np.linspace(a, b, grid_resolution)[1:]
        seg[-1] = b
        pieces.append(seg)
        knots.append(knots[-1] + grid_resolution - 1)
    return np.concatenate(pieces), np.asarray(knots)


def reconstruct_paths(law: PathLaw, count: int, grid_resolution: int = 10, seed: int = 0) -> PathSamples:
    skel = chain_sample(law, count, seed)
    grid, knots = path_grid(law.times, grid_resolution)
    d = law.clouds[0].shape[1]
    out = np.empty((count, grid.size, d))
    rng = _rng(seed, _STREAM_BRIDGE)
    for i in range(law.T - 1):
        xa = law.clouds[i][skel[:, i]]
        xb = law.clouds[i + 1][skel[:, i + 1]]
        seg = grid[knots[i]: knots[i + 1] + 1]
        out[:, knots[i]: knots[i + 1] + 1] = brownian_bridge(xa, xb, law.times[i], law.times[i + 1], law.tau,
                                                             seg, rng=rng)
    if law.T == 1:
        out[:, 0] = law.clouds[0][skel[:, 0]]
    return PathSamples(grid, out, skel, knots, law.growth_heuristic)
