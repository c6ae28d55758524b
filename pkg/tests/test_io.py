import json
import math

import numpy as np
import pytest

from mflpaths.errors import ConfigError, ParseError
from mflpaths.evaluate import energy_distance_sq
from mflpaths.io import (CONFIG_DEFAULTS, apply_auto_scaling, center_and_pca, compute_scaling, config_from_dict,
                         config_hash, config_to_dict, load_config, load_snapshots, pca_series, read_marginals_csv,
                         write_marginals_csv, write_snapshots)
from mflpaths.types import ProblemConfig, SnapshotSeries


def write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_rows(tmp_path):
    s = load_snapshots(write(tmp_path, "t,x1,x2\n0.5,1,2\n1.5,3,4\n"))
    assert s.T == 2 and s.dim == 2 and [x.n for x in s] == [1, 1]
    assert list(s.original_times) == [0.5, 1.5] and list(s.times) == [0.0, 1.0]


def test_weight_column_normalized(tmp_path):
    s = load_snapshots(write(tmp_path, "t,x1,w\n0,1,1\n0,2,1\n0,3,2\n1,0,5\n"))
    assert np.allclose(s[0].weights, [0.25, 0.25, 0.5]) and s[1].weights[0] == 1.0


def test_roundtrip(tmp_path, rng):
    pts = [rng.standard_normal((k, 3)) for k in (4, 2, 5)]
    w = [rng.random(k) for k in (4, 2, 5)]
    s = SnapshotSeries.from_arrays(pts, [0.1, 0.35, 2.0], w)
    write_snapshots(s, tmp_path / "r.csv")
    back = load_snapshots(tmp_path / "r.csv")
    for a, b in zip(s, back):
        assert np.abs(a.points - b.points).max() <= 1e-15
        assert np.abs(a.weights - b.weights).max() <= 1e-15
    assert np.array_equal(back.original_times, s.original_times)


@pytest.mark.parametrize("text, where", [
    ("t,x1\n0,1\n1,2,3\n", ":3:"),
    ("t,x1\n0,1\n1,abc\n", ":3:"),
    ("t,x1\n0,1\n1,nan\n", ":3:"),
    ("x1,t\n0,1\n", ":1:"),
    ("t,x1\n1,1\n0,2\n", ":3:"),
    ("t,x1\n0,1\n0,2\n", "2 distinct"),
])
def test_parse_errors(tmp_path, text, where):
    with pytest.raises(ParseError, match=where):
        load_snapshots(write(tmp_path, text))


def test_marginals_roundtrip(tmp_path, rng):
    X = rng.standard_normal((3, 5, 2))
    write_marginals_csv(X, [0.0, 0.5, 1.0], tmp_path / "m.csv")
    assert np.array_equal(read_marginals_csv(tmp_path / "m.csv"), X)
    raw = (tmp_path / "m.csv").read_bytes()
    assert b"\r\n" not in raw and raw.startswith(b"t,particle,x1,x2\n")


def test_scaling_dirac_pair():
    s = SnapshotSeries.from_arrays([np.zeros((1, 1)), np.ones((1, 1))], [0.0, 1.0])
    sf = compute_scaling(s)
    assert sf.sigma_scale_sq == 0.5 and sf.eta_scale_sq == 0.5  # eta falls back


def test_scaling_degenerate():
    s = SnapshotSeries.from_arrays([np.zeros((1, 2)), np.zeros((1, 2))], [0.0, 1.0])
    with pytest.raises(ConfigError):
        compute_scaling(s)


def test_scaling_brute_force(rng):
    pts = [rng.standard_normal((3, 3)) for _ in range(3)]
    s = SnapshotSeries.from_arrays(pts, [0.0, 0.5, 1.0])
    pair = np.mean([np.mean([0.5 * np.sum((x - y) ** 2) for x in pts[i] for y in pts[i + 1]]) for i in range(2)])
    within = np.mean([np.mean([0.5 * np.sum((x - y) ** 2) for x in P for y in P]) for P in pts])
    sf = compute_scaling(s)
    assert sf.sigma_scale_sq == pytest.approx(pair, abs=1e-12)
    assert sf.eta_scale_sq == pytest.approx(within, abs=1e-12)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = SnapshotSeries.from_arrays([P @ Q + 4.0 for P in pts], [0.0, 0.5, 1.0])
    assert compute_scaling(moved).sigma_scale_sq == pytest.approx(pair, abs=1e-12)


def test_auto_scaling(rng):
    s = SnapshotSeries.from_arrays([rng.standard_normal((4, 2)) for _ in range(2)], [0.0, 1.0])
    cfg = ProblemConfig(1.0, 1.0, 1.0)
    assert apply_auto_scaling(s, cfg) is cfg
    scaled = apply_auto_scaling(s, cfg.replace(auto_scale=True))
    assert scaled.cost_scale == compute_scaling(s).sigma_scale_sq


def pairwise(X):
    return np.linalg.norm(X[:, None] - X[None], axis=-1)


def test_pca_subspace_lossless(rng):
    basis = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    X = rng.standard_normal((30, 2)) @ basis.T + 1.0
    Z, b = center_and_pca(X, 2)
    assert np.allclose(pairwise(Z), pairwise(X), atol=1e-10)
    assert np.allclose(b.inverse(Z), X, atol=1e-10)


def test_pca_full_rank_is_rotation(rng):
    X = rng.standard_normal((20, 4))
    Z, _ = center_and_pca(X, 4)
    assert np.allclose(pairwise(Z), pairwise(X), atol=1e-10)
    s = SnapshotSeries.from_arrays([X[:10], X[10:]], [0.0, 1.0])
    ps, _ = pca_series(s, 4)
    assert energy_distance_sq(ps[0].points, ps[1].points) == pytest.approx(
        energy_distance_sq(X[:10], X[10:]), abs=1e-12)


def test_pca_svd_identity(rng):
    X = rng.standard_normal((50, 10))
    Z, b = center_and_pca(X, 4)
    sv = np.linalg.svd(X - X.mean(0), compute_uv=False)
    err = np.sum((b.inverse(Z) - X) ** 2)
    assert err == pytest.approx(np.sum(sv[4:] ** 2), rel=1e-10)


def test_pca_errors(rng):
    with pytest.raises(ConfigError, match="rank 1"):
        center_and_pca(np.outer(rng.standard_normal(10), np.ones(3)), 2)
    with pytest.raises(ConfigError):
        center_and_pca(rng.standard_normal((10, 3)), 4)


def test_minimal_config_defaults():
    cfg, sched = config_from_dict({"lambda": 0.1, "sigma": 0.5, "tau": 0.2, "m": 50})
    assert sched is None and cfg.m == 50
    assert cfg.eta == CONFIG_DEFAULTS["eta"][0] and cfg.iterations == CONFIG_DEFAULTS["iterations"][0]
    assert math.isinf(cfg.rho)


def test_bifurcation_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"lambda": 0.05, "sigma": 0.5, "tau": 0.25, "eta": 0.1, "m": 100,
                             "iterations": 2500}))
    cfg, _ = load_config(p)
    assert (cfg.lam, cfg.sigma, cfg.eta, cfg.m, cfg.iterations) == (0.05, 0.5, 0.1, 100, 2500)


@pytest.mark.parametrize("data, pointer", [
    ({"lambda": 0.1, "sigma": 0.5, "tau": -1}, "/tau"),
    ({"lambda": 0.1, "sigma": 0.5, "tau": 1, "sigmaa": 1}, "/"),
    ({"lambda": 0.1, "sigma": 0.5}, "/"),
    ({"lambda": 0.1, "sigma": 0.5, "tau": 1, "growth": {"kind": "tanh", "slop": 2}}, "/growth"),
])
def test_schema_errors(data, pointer):
    with pytest.raises(ConfigError, match=f"at {pointer}"):
        config_from_dict(data)


def test_invalid_json(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "{lambda: 1}", "c.json"))


def test_config_roundtrip():
    data = {"lambda": 0.025, "sigma": 0.5, "tau": 1.0, "rho": 2.0, "confine_sigma": 5.0,
            "growth": {"kind": "tanh", "scale": 10.0, "slope": 2.0, "axis": 0},
            "schedule": {"tau0": 5.0, "tau_f": 1.0, "anneal_steps": 500, "scale_eta": True}}
    cfg, sched = config_from_dict(data)
    assert sched.tau_at(0) == 5.0 and sched.tau_at(500) == 1.0
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg, sched))))
    assert again == (cfg, sched)
    assert config_hash(cfg, sched) == config_hash(*again)
    assert config_hash(cfg, sched) != config_hash(cfg.replace(seed=1), sched)
