"""Snapshot CSV ingestion, preprocessing and configuration loading.

Snapshot CSV columns are ``t, x1, ..., xd`` with an optional trailing ``w``.
All files are written UTF-8 with LF line endings and fixed column order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError, ParseError
from .types import AnnealingSchedule, GrowthPrior, ProblemConfig, SnapshotSeries

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- snapshots

def load_snapshots(path) -> SnapshotSeries:
    """Read a long-format snapshot CSV and group rows by time."""
    path = Path(path)
    groups: dict[float, list] = {}
    order: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "t":
            raise ParseError(f"{path}:1: first column must be 't', got {header[:1]}")
        has_w = header[-1] == "w"
        coords = header[1:-1] if has_w else header[1:]
        if not coords:
            raise ParseError(f"{path}:1: no coordinate columns")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            if has_w and vals[-1] < 0:
                raise ParseError(f"{path}:{lineno}: negative weight")
            t = vals[0]
            if t not in groups:
                if order and t < order[-1]:
                    raise ParseError(f"{path}:{lineno}: time {t} appears after later time {order[-1]}")
                groups[t] = []
                order.append(t)
            groups[t].append(vals[1:])
    if len(order) < 2:
        raise ParseError(f"{path}: need at least 2 distinct times, got {len(order)}")
    points, weights = [], []
    for t in order:
        arr = np.asarray(groups[t], dtype=float)
        if has_w:
            points.append(arr[:, :-1])
            weights.append(arr[:, -1])
        else:
            points.append(arr)
            weights.append(None)
    try:
        return SnapshotSeries.from_arrays(points, order, weights)
    except ConfigError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_snapshots(series: SnapshotSeries, path, weights: bool = True) -> None:
    d = series.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{k + 1}" for k in range(d)] + (["w"] if weights else []))
        for t, snap in zip(series.original_times, series):
            for x, wt in zip(snap.points, snap.weights):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + ([repr(float(wt))] if weights else []))


def write_marginals_csv(clouds, times, path) -> None:
    """Particle clouds in long format: ``t, particle, x1..xd``."""
    clouds = np.asarray(clouds, float)
    T, m, d = clouds.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "particle"] + [f"x{k + 1}" for k in range(d)])
        for i in range(T):
            for j in range(m):
                w.writerow([repr(float(times[i])), j] + [repr(float(v)) for v in clouds[i, j]])


def read_marginals_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["t", "particle"]:
            raise ParseError(f"{path}:1: expected columns 't, particle, x1..'")
        rows = [[float(c) for c in r] for r in reader if r]
    arr = np.asarray(rows, dtype=float)
    times = list(dict.fromkeys(arr[:, 0]))
    clouds = [arr[arr[:, 0] == t][:, 2:] for t in times]
    if len({c.shape[0] for c in clouds}) != 1:
        raise ParseError(f"{path}: clouds have unequal particle counts")
    return np.stack(clouds)


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class ScalingFactors:
    sigma_scale_sq: float
    eta_scale_sq: float


def _mean_half_sqdist(X, wx, Y, wy) -> float:
    from .kernels import sqdist

    return float(0.5 * wx @ sqdist(X, Y) @ wy)


def compute_scaling(series: SnapshotSeries) -> ScalingFactors:
    """Average half squared distances between consecutive and within snapshots."""
    pair = [_mean_half_sqdist(a.points, a.weights, b.points, b.weights)
            for a, b in zip(series.snapshots[:-1], series.snapshots[1:])]
    within = [_mean_half_sqdist(s.points, s.weights, s.points, s.weights) for s in series]
    sigma_sq = float(np.mean(pair))
    eta_sq = float(np.mean(within))
    if not sigma_sq > 0:
        raise ConfigError("consecutive snapshots coincide; transport scaling factor is zero")
    if not eta_sq > 0:
        log.warning("snapshots are single points; using the transport scaling factor for the fit term")
        eta_sq = sigma_sq
    return ScalingFactors(sigma_sq, eta_sq)


@dataclass(frozen=True)
class PCABasis:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows

    def transform(self, X):
        return (np.asarray(X, float) - self.mean) @ self.components.T

    def inverse(self, Z):
        return np.asarray(Z, float) @ self.components + self.mean


def center_and_pca(points, k: int):
    """Center the pooled points and project on the top-``k`` right singular vectors."""
    X = np.asarray(points, float)
    n, d = X.shape
    if k > d:
        raise ConfigError(f"k={k} exceeds the ambient dimension {d}")
    if n <= k:
        raise ConfigError(f"need more than k={k} points, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(n, d) * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
    if rank < k:
        raise ConfigError(f"pooled data has rank {rank}, cannot project to k={k} dimensions")
    basis = PCABasis(mean, Vt[:k])
    return basis.transform(X), basis


def pca_series(series: SnapshotSeries, k: int):
    """Apply :func:`center_and_pca` to the pooled points of a series."""
    pooled = np.concatenate([s.points for s in series])
    Z, basis = center_and_pca(pooled, k)
    splits = np.cumsum([s.n for s in series])[:-1]
    parts = np.split(Z, splits)
    out = SnapshotSeries.from_arrays(parts, series.original_times, [s.weights for s in series])
    return out, basis


# ---------------------------------------------------------------- config

# key -> (default, description); "required" marks keys without defaults.
CONFIG_DEFAULTS = {
    "lambda": ("required", "fit regularization strength"),
    "sigma": ("required", "fit kernel bandwidth"),
    "tau": ("required", "diffusivity on the unit time interval"),
    "m": (100, "particles per timepoint"),
    "eta": (0.1, "step size"),
    "iterations": (2500, "number of MFL steps"),
    "seed": (0, "root seed"),
    "epsilon": (0.0, "extra entropy added to the noise"),
    "growth": (None, "growth prior: null or {kind, value, scale, slope, axis}"),
    "rho": ("inf", "marginal relaxation strength; 'inf' for balanced bridges"),
    "confine_sigma": (None, "bandwidth of the confining potential; null disables it"),
    "init": ("gaussian", "particle initializer: gaussian | resample | file"),
    "init_mean": (0.0, "gaussian initializer mean"),
    "init_std": (0.1, "gaussian initializer standard deviation"),
    "init_jitter": (0.0, "noise added by the resample initializer"),
    "init_file": (None, "marginals CSV for init='file'"),
    "sinkhorn_tol": (1e-6, "L1 marginal tolerance"),
    "sinkhorn_max_iter": (1000, "Sinkhorn iteration cap per MFL step"),
    "cost_scale": (1.0, "transport cost divisor"),
    "fit_scale": (1.0, "fit squared-distance divisor"),
    "auto_scale": (False, "derive cost_scale and fit_scale from the data"),
    "knn_k": (4, "neighbours for the entropy diagnostic"),
    "report_stride": (10, "iterations between objective reports"),
    "checkpoint_every": (0, "iterations between checkpoints (0 disables)"),
    "step_preconditioning": ("interval", "per-timepoint step scaling: interval | none"),
    "schedule": (None, "annealing schedule object or null"),
}

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["lambda", "sigma", "tau"],
    "properties": {
        "lambda": _POS,
        "sigma": _POS,
        "tau": _POS,
        "m": {"type": "integer", "minimum": 1},
        "eta": _NONNEG,
        "iterations": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "epsilon": _NONNEG,
        "growth": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["zero", "constant", "tanh"]},
                        "value": {"type": "number"},
                        "scale": {"type": "number"},
                        "slope": {"type": "number"},
                        "axis": {"type": "integer", "minimum": 0},
                    },
                },
            ]
        },
        "rho": {"oneOf": [_POS, {"const": "inf"}]},
        "confine_sigma": {"oneOf": [{"type": "null"}, _POS]},
        "init": {"enum": ["gaussian", "resample", "file"]},
        "init_mean": {"type": "number"},
        "init_std": _NONNEG,
        "init_jitter": _NONNEG,
        "init_file": {"type": ["string", "null"]},
        "sinkhorn_tol": _POS,
        "sinkhorn_max_iter": {"type": "integer", "minimum": 1},
        "cost_scale": _POS,
        "fit_scale": _POS,
        "auto_scale": {"type": "boolean"},
        "knn_k": {"type": "integer", "minimum": 1},
        "report_stride": {"type": "integer", "minimum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "step_preconditioning": {"enum": ["interval", "none"]},
        "schedule": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "c": _POS,
                        "r": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "tau0": _POS,
                        "tau_f": _POS,
                        "anneal_steps": {"type": "integer", "minimum": 0},
                        "scale_eta": {"type": "boolean"},
                        "scale_sigma": {"type": "boolean"},
                        "epsilon_mode": {"enum": ["none", "geometric", "logarithmic"]},
                        "epsilon_alpha": _NONNEG,
                        "epsilon_k0": {"type": "number", "exclusiveMinimum": 1},
                    },
                },
            ]
        },
    },
}

_FIELD_OF_KEY = {"lambda": "lam"}


def _pointer(err: jsonschema.ValidationError) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def config_from_dict(data: dict):
    """Validate a config mapping and build ``(ProblemConfig, AnnealingSchedule | None)``."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"config error at {_pointer(err)}: {err.message}")
    kwargs = {}
    for key, val in data.items():
        if key == "schedule":
            continue
        name = _FIELD_OF_KEY.get(key, key)
        if key == "rho":
            val = math.inf if val == "inf" else float(val)
        elif key == "growth" and val is not None:
            val = GrowthPrior(**val)
        kwargs[name] = val
    config = ProblemConfig(**kwargs)
    schedule = None
    sched = data.get("schedule")
    if sched is not None:
        sched = dict(sched)
        tau_f = sched.pop("tau_f", config.tau)
        if "tau0" in sched:
            tau0 = sched.pop("tau0")
            steps = sched.pop("anneal_steps", 500)
            sched.pop("c", None)
            sched.pop("r", None)
            schedule = AnnealingSchedule.geometric(tau0, tau_f, steps, **sched)
        else:
            try:
                schedule = AnnealingSchedule(tau_f=tau_f, **sched)
            except TypeError as exc:
                raise ConfigError(f"config error at /schedule: {exc}") from None
    return config, schedule


def config_to_dict(config: ProblemConfig, schedule: Optional[AnnealingSchedule] = None) -> dict:
    out = {}
    for f in fields(config):
        key = "lambda" if f.name == "lam" else f.name
        val = getattr(config, f.name)
        if f.name == "rho" and math.isinf(val):
            val = "inf"
        elif f.name == "growth" and val is not None:
            val = val.to_dict()
        out[key] = val
    out["schedule"] = schedule.to_dict() if schedule is not None else None
    return out


def load_config(path):
    """Load a JSON config file; unknown keys are rejected."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data)


def config_hash(config: ProblemConfig, schedule: Optional[AnnealingSchedule] = None) -> str:
    blob = json.dumps(config_to_dict(config, schedule), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def apply_auto_scaling(series: SnapshotSeries, config: ProblemConfig) -> ProblemConfig:
    """Fill ``cost_scale`` and ``fit_scale`` from the data when ``auto_scale`` is set."""
    if not config.auto_scale:
        return config
    sf = compute_scaling(series)
    return config.replace(cost_scale=sf.sigma_scale_sq, fit_scale=sf.eta_scale_sq)
