"""Noisy particle gradient descent (discretized mean-field Langevin dynamics).

Each step solves the ``T - 1`` bridges between consecutive clouds,
assembles the first variation and moves every particle by

    x <- x - eta * grad V(x) + sqrt(2 eta (tau + eps)) * z.

Gaussian noise is keyed by ``(seed, k, i)`` so that a step's randomness does
not depend on how many steps ran before it in this process (resume-safe).
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .bridge import BridgeSolution, CostSpec, sinkhorn_unbalanced, tilt_marginals
from .errors import ConfigError, DivergenceError, InputError
from .objective import ObjectiveReport, first_variation, objective_report
from .types import AnnealingSchedule, MarginalState, ProblemConfig, SnapshotSeries

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FINAL_SINKHORN_MAX_ITER = 10_000
_STREAM_INIT = 0
_STREAM_NOISE = 1

# Sign of the growth tilt; see tilt_marginals.
GROWTH_TILT_SIGN = -1.0


def counter_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator keyed by ``(seed, *key)``; independent of any global stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class ScheduleValues:
    tau: float
    sigma: float
    eta: float
    epsilon: float


def schedule_at(schedule: Optional[AnnealingSchedule], k: int, config: ProblemConfig) -> ScheduleValues:
    """Temperature, bandwidth, step size and extra entropy at iteration ``k``."""
    if k < 0:
        raise ConfigError("iteration index must be >= 0")
    if schedule is None:
        return ScheduleValues(config.tau, config.sigma, config.eta, config.epsilon)
    tau_k = schedule.tau_at(k)
    ratio = tau_k / schedule.tau_f
    eta = config.eta * ratio if schedule.scale_eta else config.eta
    sigma = config.sigma * math.sqrt(ratio) if schedule.scale_sigma else config.sigma
    if schedule.epsilon_mode == "none":
        eps = config.epsilon
    elif schedule.epsilon_mode == "geometric":
        eps = config.epsilon * schedule.r**k if k < schedule.anneal_steps else 0.0
    else:
        eps = schedule.epsilon_alpha / math.log(k + schedule.epsilon_k0)
    return ScheduleValues(tau_k, sigma, eta, eps)


def init_particles(series: SnapshotSeries, config: ProblemConfig) -> MarginalState:
    """Initial clouds: ``gaussian``, ``resample`` (from each snapshot, with jitter) or ``file``."""
    T, d, m = series.T, series.dim, config.m
    rng = counter_rng(config.seed, _STREAM_INIT)
    if config.init == "gaussian":
        clouds = config.init_mean + config.init_std * rng.standard_normal((T, m, d))
    elif config.init == "resample":
        clouds = np.empty((T, m, d))
        for i, snap in enumerate(series):
            if m == snap.n and config.init_jitter == 0:
                idx = rng.permutation(m)
            else:
                idx = rng.choice(snap.n, size=m, replace=m > snap.n, p=snap.weights)
            clouds[i] = snap.points[idx] + config.init_jitter * rng.standard_normal((m, d))
    elif config.init == "file":
        if not config.init_file:
            raise ConfigError("init='file' needs init_file")
        from .io import read_marginals_csv

        clouds = read_marginals_csv(config.init_file)
        if clouds.shape != (T, m, d):
            raise ConfigError(f"initial clouds in {config.init_file} have shape {clouds.shape}, expected {(T, m, d)}")
    else:
        raise ConfigError(f"unknown initializer {config.init!r}")
    return MarginalState(clouds, 0)


@dataclass
class OptimizerState:
    marginals: MarginalState
    duals: list = field(default_factory=list)
    schedule_values: Optional[ScheduleValues] = None
    seed: int = 0
    bridges: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.marginals.iteration


def cost_for(config: ProblemConfig) -> CostSpec:
    return CostSpec(scale=config.cost_scale)


def solve_bridges(clouds, series: SnapshotSeries, config: ProblemConfig, tau: float,
                  warm: Optional[Sequence] = None, tol: Optional[float] = None,
                  executor: Optional[ThreadPoolExecutor] = None,
                  max_iter: Optional[int] = None) -> list[BridgeSolution]:
    """Solve the bridges between consecutive clouds at diffusivity ``tau``.

    With a growth prior, the endpoints are tilted and the relaxed problem
    with ``config.rho`` is solved instead.
    """
    T, m, _ = clouds.shape
    t = series.times
    tol = config.sinkhorn_tol if tol is None else tol
    max_iter = config.sinkhorn_max_iter if max_iter is None else max_iter
    cost = cost_for(config)
    uniform = np.full(m, 1.0 / m)
    orig = series.original_times

    def one(i):
        p = q = uniform
        if config.growth is not None:
            p, q = tilt_marginals(clouds[i], uniform, clouds[i + 1], uniform, config.growth,
                                  dt=orig[i + 1] - orig[i], t_start=orig[i], t_end=orig[i + 1],
                                  sign=GROWTH_TILT_SIGN)
        ws = warm[i] if warm is not None and i < len(warm) else None
        sol = sinkhorn_unbalanced(clouds[i], clouds[i + 1], cost, (t[i + 1] - t[i]) * tau, config.rho,
                                  p=p, q=q, tol=tol, max_iter=max_iter, warm_start=ws)
        if not sol.converged:
            log.debug("bridge %d unconverged after %d iterations (violation %.3g)", i, sol.n_iter,
                      sol.marginal_violation)
        return sol

    if executor is not None:
        return list(executor.map(one, range(T - 1)))
    return [one(i) for i in range(T - 1)]


def step_factors(series: SnapshotSeries, mode: str = "interval") -> np.ndarray:
    """Per-timepoint multipliers of the step size.

    ``"interval"`` scales cloud ``i`` by ``1 / sum_j 1/|t_j - t_i|`` over its
    neighbours ``j``, the inverse of the bridge stiffness acting on it. Drift
    and noise variance are scaled together, so each cloud's stationary
    condition is unchanged. ``"none"`` returns ones.
    """
    T = series.T
    if mode == "none":
        return np.ones(T)
    if mode != "interval":
        raise ConfigError(f"unknown step preconditioning {mode!r}")
    inv = np.zeros(T)
    gaps = np.diff(series.times)
    inv[:-1] += 1.0 / gaps
    inv[1:] += 1.0 / gaps
    return 1.0 / inv


def mfl_step(state: OptimizerState, series: SnapshotSeries, config: ProblemConfig,
             schedule: Optional[AnnealingSchedule] = None,
             executor: Optional[ThreadPoolExecutor] = None) -> OptimizerState:
    """One noisy gradient step; the returned state keeps the bridges of the pre-step clouds."""
    k = state.k
    sv = schedule_at(schedule, k, config)
    X = state.marginals.clouds
    try:
        bridges = solve_bridges(X, series, config, sv.tau, warm=state.duals, executor=executor)
    except InputError as exc:
        raise DivergenceError(f"bridge solve failed at iteration {k}: {exc}") from exc
    fv = first_variation(state.marginals, series, bridges, config, sigma=sv.sigma)
    T, m, d = X.shape
    eta = sv.eta * step_factors(series, config.step_preconditioning)
    new = X - eta[:, None, None] * fv.gradients
    for i in range(T):
        noise_scale = math.sqrt(2.0 * eta[i] * (sv.tau + sv.epsilon))
        if noise_scale > 0:
            new[i] += noise_scale * counter_rng(state.seed, _STREAM_NOISE, k, i).standard_normal((m, d))
    bad = ~np.all(np.isfinite(new), axis=2)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise DivergenceError(f"particle {j} of cloud {i} became non-finite at iteration {k}")
    return OptimizerState(marginals=MarginalState(new, k + 1), duals=[(b.u, b.v) for b in bridges],
                          schedule_values=sv, seed=state.seed, bridges=bridges)


@dataclass
class RunResult:
    state: OptimizerState
    reports: list
    final_bridges: list
    series: SnapshotSeries
    config: ProblemConfig
    schedule: Optional[AnnealingSchedule] = None

    @property
    def marginals(self) -> MarginalState:
        return self.state.marginals


def _bounding_box(series: SnapshotSeries):
    pts = np.concatenate([s.points for s in series])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    sd = pts.std(axis=0)
    return lo - 5 * sd, hi + 5 * sd


def run(series: SnapshotSeries, config: ProblemConfig, schedule: Optional[AnnealingSchedule] = None,
        callbacks: Iterable[Callable] = (), diagnostics: Optional[str | os.PathLike] = None,
        checkpoint_dir: Optional[str | os.PathLike] = None, resume: Optional[str | os.PathLike] = None,
        threads: int = 1, report: bool = True) -> RunResult:
    """Run ``config.iterations`` MFL steps.

    Reports carry 1-based iteration labels, ``1`` being the initial clouds;
    they are computed at label 1, at every multiple of ``config.report_stride``
    and at the last iteration.
    Each callback is called as ``cb(iteration, report, state)``.
    """
    kernels.set_num_threads(threads)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    if resume is not None:
        state, ck_cfg, _ = load_checkpoint(resume)
        if ck_cfg.seed != config.seed:
            log.warning("resuming with seed %d from a checkpoint written with seed %d", config.seed, ck_cfg.seed)
        state.seed = config.seed
    else:
        state = OptimizerState(marginals=init_particles(series, config), seed=config.seed)
    lo, hi = _bounding_box(series)
    warned_box = False
    reports: list[ObjectiveReport] = []
    diag_fh = open(diagnostics, "a" if resume is not None else "w", encoding="utf-8") if diagnostics else None
    try:
        while state.k < config.iterations:
            k = state.k
            new_state = mfl_step(state, series, config, schedule, executor)
            sv = new_state.schedule_values
            if report and (k == 0 or (k + 1) % config.report_stride == 0 or k == config.iterations - 1):
                rep = objective_report(state.marginals, series, new_state.bridges, config, tau=sv.tau, sigma=sv.sigma)
                rep.iteration = k + 1
                rep.extra = {"tau_k": sv.tau, "sigma_k": sv.sigma, "eta_k": sv.eta, "epsilon_k": sv.epsilon,
                             "sinkhorn_iters": [b.n_iter for b in new_state.bridges],
                             "unconverged": sum(not b.converged for b in new_state.bridges)}
                reports.append(rep)
                if diag_fh is not None:
                    diag_fh.write(rep.to_json() + "\n")
                for cb in callbacks:
                    cb(k + 1, rep, state)
            state = new_state
            outside = (state.marginals.clouds < lo) | (state.marginals.clouds > hi)
            if outside.any():
                log.log(logging.DEBUG if warned_box else logging.WARNING,
                        "iteration %d: %d particle coordinates outside the inflated data box",
                        state.k, int(outside.sum()))
                warned_box = True
            if checkpoint_dir is not None and config.checkpoint_every and state.k % config.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"ckpt_{state.k}", state, config, schedule)
        sv = schedule_at(schedule, state.k, config)
        # the final plans feed path sampling, so they get the full solver budget
        final = solve_bridges(state.marginals.clouds, series, config, sv.tau, warm=state.duals, executor=executor,
                              max_iter=max(config.sinkhorn_max_iter, FINAL_SINKHORN_MAX_ITER))
    finally:
        if diag_fh is not None:
            diag_fh.close()
        if executor is not None:
            executor.shutdown()
    return RunResult(state=state, reports=reports, final_bridges=final, series=series, config=config,
                     schedule=schedule)


def save_checkpoint(path, state: OptimizerState, config: ProblemConfig,
                    schedule: Optional[AnnealingSchedule] = None) -> Path:
    """Write a JSON checkpoint (floats via ``repr`` so the round trip is exact)."""
    from .io import config_to_dict

    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": state.k,
        "seed": state.seed,
        "clouds": state.marginals.clouds.tolist(),
        "duals": [[u.tolist(), v.tolist()] for u, v in state.duals],
        "config": config_to_dict(config, schedule),
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload), encoding="utf-8")
    tmp.replace(path)
    return path


def load_checkpoint(path):
    from .io import config_from_dict

    path = Path(path)
    if not path.exists() and path.with_suffix(".json").exists():
        path = path.with_suffix(".json")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')!r}")
    clouds = np.asarray(payload["clouds"], dtype=float)
    duals = [(np.asarray(u, float), np.asarray(v, float)) for u, v in payload["duals"]]
    config, schedule = config_from_dict(payload["config"])
    state = OptimizerState(marginals=MarginalState(clouds, int(payload["iteration"])), duals=duals,
                           seed=int(payload["seed"]))
    return state, config, schedule
