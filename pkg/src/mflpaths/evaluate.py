"""Reconstruction quality metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import EvaluationError
from .types import normalize_weights


def energy_distance_sq(alpha, beta, wa=None, wb=None) -> float:
    """Squared energy distance between weighted clouds (V-statistic, diagonal included)."""
    A = np.atleast_2d(np.asarray(alpha, float))
    B = np.atleast_2d(np.asarray(beta, float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EvaluationError("energy distance needs nonempty clouds")
    if A.shape[1] != B.shape[1]:
        raise EvaluationError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    wa = normalize_weights(wa, A.shape[0])
    wb = normalize_weights(wb, B.shape[0])
    return (2.0 * kernels.pair_dist_sum(A, wa, B, wb)
            - kernels.pair_dist_sum(A, wa, A, wa)
            - kernels.pair_dist_sum(B, wb, B, wb))


def per_time_distances(clouds, truth) -> np.ndarray:
    """Squared energy distance of each reconstructed cloud to the matching snapshot."""
    if len(clouds) != len(truth):
        raise EvaluationError(f"{len(clouds)} reconstructed marginals vs {len(truth)} truth snapshots")
    return np.array([energy_distance_sq(c, s.points, None, s.weights) for c, s in zip(clouds, truth)])


def rms_over_marginals(reconstructed, truth, times=None) -> float:
    """``sqrt(mean_i D^2(reconstructed_i, truth_i))``.

    ``reconstructed`` is a MarginalState, an array of clouds or a
    SnapshotSeries. A series is matched to ``truth`` on the original time
    axis; ``times`` given with clouds are compared on the unit interval.
    """
    if hasattr(reconstructed, "snapshots"):
        rec_times, ref_times = reconstructed.original_times, truth.original_times
        clouds = [s.points for s in reconstructed]
        rec_w = [s.weights for s in reconstructed]
    else:
        clouds = getattr(reconstructed, "clouds", reconstructed)
        rec_times, ref_times = times, truth.times
        rec_w = [None] * len(clouds)
    if len(clouds) != len(truth):
        raise EvaluationError(f"{len(clouds)} reconstructed marginals vs {len(truth)} truth snapshots")
    if rec_times is not None and not np.allclose(rec_times, ref_times, atol=1e-9):
        raise EvaluationError("reconstructed and truth times differ")
    d2 = np.array([energy_distance_sq(c, s.points, w, s.weights) for c, w, s in zip(clouds, rec_w, truth)])
    return float(math.sqrt(max(d2.mean(), 0.0)))


@dataclass(frozen=True)
class HalfspaceClassifier:
    """``sign * (x[axis] - threshold) > 0``."""

    axis: int = 0
    threshold: float = 0.0
    sign: float = -1.0

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.sign * (X[:, self.axis] - self.threshold) > 0


@dataclass(frozen=True)
class NearestCenterClassifier:
    """True where ``x`` is nearer to ``target`` than to ``other`` in the given coordinates."""

    target: tuple
    other: tuple
    coords: tuple = (0, 1)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)[:, list(self.coords)]
        t = np.asarray(self.target, float)[list(self.coords)]
        o = np.asarray(self.other, float)[list(self.coords)]
        return np.sum((X - t) ** 2, axis=1) < np.sum((X - o) ** 2, axis=1)


def lower_branch_classifier() -> NearestCenterClassifier:
    from .simulate import BISTABLE_LOWER, BISTABLE_UPPER

    return NearestCenterClassifier(tuple(BISTABLE_LOWER), tuple(BISTABLE_UPPER))


def branch_fraction(paths, classifier) -> float:
    """Fraction of paths whose final position satisfies ``classifier``.

    ``paths`` is a PathSamples bundle, a list of PathSample, or an ``(n, d)``
    array of endpoints.
    """
    if hasattr(paths, "endpoints"):
        ends = paths.endpoints
    elif isinstance(paths, np.ndarray):
        ends = np.atleast_2d(paths)
    else:
        ends = np.array([p.positions[-1] for p in paths])
    if ends.shape[0] == 0:
        raise EvaluationError("no paths to classify")
    return float(np.mean(classifier(ends)))


@dataclass
class EvalReport:
    times: list
    distances_sq: list
    rms: float
    comparisons: dict = field(default_factory=dict)

    @classmethod
    def build(cls, clouds, truth, comparisons: Optional[dict] = None) -> "EvalReport":
        d2 = per_time_distances(clouds, truth)
        return cls(times=[float(t) for t in truth.original_times], distances_sq=[float(x) for x in d2],
                   rms=float(math.sqrt(max(d2.mean(), 0.0))), comparisons=comparisons or {})

    def to_dict(self) -> dict:
        return {"times": self.times, "energy_distance_sq": self.distances_sq, "rms_energy_distance": self.rms,
                "comparisons": self.comparisons}

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path, method: str = "mfl") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "t", "energy_distance_sq"])
            for t, d in zip(self.times, self.distances_sq):
                w.writerow([method, repr(t), repr(d)])
            for name, scores in self.comparisons.items():
                for t, d in zip(self.times, scores.get("energy_distance_sq", [])):
                    w.writerow([name, repr(t), repr(d)])
