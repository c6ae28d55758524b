import math

import numpy as np
import pytest

from mflpaths.errors import EvaluationError
from mflpaths.evaluate import (EvalReport, HalfspaceClassifier, branch_fraction, energy_distance_sq,
                               lower_branch_classifier, per_time_distances, rms_over_marginals)
from mflpaths.simulate import BISTABLE_LOWER
from mflpaths.types import MarginalState, SnapshotSeries


def brute_energy(A, wa, B, wb):
    def e(P, wp, Q, wq):
        return sum(wp[i] * wq[j] * np.linalg.norm(P[i] - Q[j]) for i in range(len(P)) for j in range(len(Q)))
    return 2 * e(A, wa, B, wb) - e(A, wa, A, wa) - e(B, wb, B, wb)


def test_dirac_pair():
    assert energy_distance_sq(np.array([[0.0]]), np.array([[1.0]])) == 2.0


def test_identical_clouds(rng):
    A = rng.standard_normal((7, 3))
    w = rng.random(7)
    assert abs(energy_distance_sq(A, A, w, w)) <= 1e-12


def test_brute_force_five_points(rng):
    A, B = rng.standard_normal((5, 2)), rng.standard_normal((5, 2)) + 0.3
    w = np.full(5, 0.2)
    assert energy_distance_sq(A, B) == pytest.approx(brute_energy(A, w, B, w), abs=1e-12)


def test_properties(rng):
    A, B = rng.standard_normal((9, 3)), rng.standard_normal((6, 3))
    wa, wb = rng.random(9), rng.random(6)
    d = energy_distance_sq(A, B, wa, wb)
    assert d == energy_distance_sq(B, A, wb, wa)
    shift = np.array([5.0, -2.0, 1.0])
    assert energy_distance_sq(A + shift, B + shift, wa, wb) == pytest.approx(d, abs=1e-12)
    assert energy_distance_sq(3.0 * A, 3.0 * B, wa, wb) == pytest.approx(3.0 * d, rel=1e-12)
    assert d >= 0


def test_errors():
    with pytest.raises(EvaluationError):
        energy_distance_sq(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(EvaluationError):
        energy_distance_sq(np.zeros((0, 2)), np.zeros((2, 2)))


def series_of(clouds, times):
    return SnapshotSeries.from_arrays(list(clouds), times)


def test_rms_composition(rng):
    truth = series_of([rng.standard_normal((6, 2)) for _ in range(3)], [0.0, 0.5, 1.0])
    clouds = rng.standard_normal((3, 4, 2))
    d2 = [energy_distance_sq(c, s.points) for c, s in zip(clouds, truth)]
    assert rms_over_marginals(MarginalState(clouds), truth) == pytest.approx(math.sqrt(np.mean(d2)), abs=1e-14)
    assert np.allclose(per_time_distances(clouds, truth), d2)
    assert rms_over_marginals(truth, truth) == pytest.approx(0.0, abs=1e-7)


def test_rms_single_time(rng):
    # a single timepoint scored alone is that timepoint's distance
    truth = series_of([rng.standard_normal((6, 2)) for _ in range(2)], [0.0, 1.0])
    c = rng.standard_normal((2, 4, 2))
    c[1] = truth[1].points[:4]
    expected = math.sqrt(energy_distance_sq(c[0], truth[0].points) / 2
                         + energy_distance_sq(c[1], truth[1].points) / 2)
    assert rms_over_marginals(c, truth) == pytest.approx(expected, abs=1e-14)


def test_rms_time_mismatch(rng):
    a = series_of([rng.standard_normal((3, 1))] * 2, [0.0, 1.0])
    b = series_of([rng.standard_normal((3, 1))] * 2, [0.0, 2.0])
    with pytest.raises(EvaluationError):
        rms_over_marginals(a, b)
    with pytest.raises(EvaluationError):
        rms_over_marginals(np.zeros((3, 2, 1)), a)


def test_branch_fraction():
    ends = np.tile(BISTABLE_LOWER, (5, 1))
    assert branch_fraction(ends, lower_branch_classifier()) == 1.0
    assert branch_fraction(-ends, lower_branch_classifier()) == 0.0
    X = np.random.default_rng(0).standard_normal((10, 2))
    assert branch_fraction(X, HalfspaceClassifier(0, math.inf, -1.0)) == 1.0
    assert branch_fraction(X, HalfspaceClassifier(0, math.inf, 1.0)) == 0.0
    with pytest.raises(EvaluationError):
        branch_fraction(np.zeros((0, 2)), lower_branch_classifier())


def test_eval_report_files(rng, tmp_path):
    truth = series_of([rng.standard_normal((6, 2)) for _ in range(3)], [1.0, 2.0, 4.0])
    clouds = rng.standard_normal((3, 4, 2))
    rep = EvalReport.build(clouds, truth, {"raw": {"energy_distance_sq": [0.1, 0.2, 0.3]}})
    assert rep.rms == pytest.approx(math.sqrt(np.mean(rep.distances_sq)))
    rep.write_json(tmp_path / "e.json")
    rep.write_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "method,t,energy_distance_sq" and len(rows) == 7
    assert rows[1].startswith("mfl,1.0,")
