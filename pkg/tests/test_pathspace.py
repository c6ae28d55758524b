import numpy as np
import pytest
from scipy.stats import chi2_contingency

from mflpaths.bridge import Coupling, sinkhorn_balanced
from mflpaths.evaluate import energy_distance_sq
from mflpaths.pathspace import PathLaw, brownian_bridge, chain_sample, path_grid, reconstruct_paths


def law_from(mats, clouds, times=None, tau=1.0):
    times = np.linspace(0, 1, len(clouds)) if times is None else times
    return PathLaw([Coupling(np.asarray(m, float)) for m in mats], [np.asarray(c, float) for c in clouds],
                   np.asarray(times, float), tau)


def test_one_by_one():
    law = law_from([[[1.0]]], [[[0.0]], [[1.0]]])
    assert np.all(chain_sample(law, 50, seed=1) == 0)


def test_product_couplings_independent():
    p = np.array([0.2, 0.3, 0.5])
    q = np.array([0.6, 0.4])
    r = np.array([0.1, 0.45, 0.45])
    law = law_from([np.outer(p, q), np.outer(q, r)], [np.zeros((3, 1)), np.zeros((2, 1)), np.zeros((3, 1))])
    idx = chain_sample(law, 100_000, seed=7)
    for a, b in [(0, 1), (1, 2), (0, 2)]:
        table = np.zeros((idx[:, a].max() + 1, idx[:, b].max() + 1))
        np.add.at(table, (idx[:, a], idx[:, b]), 1)
        assert chi2_contingency(table)[1] > 0.01
    assert np.allclose(np.bincount(idx[:, 0]) / 1e5, p, atol=0.01)


def test_markov_property():
    A = np.array([[0.4, 0.1], [0.1, 0.4]])
    B = np.array([[0.05, 0.45], [0.35, 0.15]])
    law = law_from([A, B], [np.zeros((2, 1))] * 3)
    idx = chain_sample(law, 100_000, seed=3)
    for x2 in (0, 1):
        sel = idx[idx[:, 1] == x2]
        table = np.zeros((2, 2))
        np.add.at(table, (sel[:, 0], sel[:, 2]), 1)
        assert chi2_contingency(table)[1] > 0.01


def test_permutation_coupling():
    X = np.arange(5, dtype=float)[:, None] * 10
    perm = np.array([3, 0, 4, 1, 2])
    Y = X[np.argsort(perm)]  # point i lands at position perm[i]
    sol = sinkhorn_balanced(X, Y, tau=0.5, tol=1e-12)
    G = np.exp((sol.u[:, None] + sol.v[None] - sol.cost_matrix()) / 0.5) / 25
    law = law_from([G], [X, Y])
    idx = chain_sample(law, 1000, seed=0)
    assert np.array_equal(idx[:, 1], np.argmax(G, axis=1)[idx[:, 0]])
    assert np.array_equal(np.argmax(G, axis=1), perm)


def test_zero_mass_rows_restart(caplog):
    A = np.array([[0.5, 0.0], [0.0, 0.5]])
    B = np.array([[0.0, 0.0], [0.3, 0.2]])  # row 0 is empty
    law = law_from([A, B], [np.zeros((2, 1))] * 3)
    with caplog.at_level("INFO", logger="mflpaths.pathspace"):
        idx = chain_sample(law, 200, seed=5)
    assert np.all(idx[:, 1] == 1)
    assert "zero-mass" in caplog.text


def test_bridge_endpoints_and_zero_tau(rng):
    xa, xb = rng.standard_normal(3), rng.standard_normal(3)
    out = brownian_bridge(xa, xb, 0.2, 0.7, 1.3, [0.2, 0.7], seed=1)
    assert np.array_equal(out[0], xa) and np.array_equal(out[1], xb)
    grid = np.linspace(0.2, 0.7, 6)
    lin = brownian_bridge(xa, xb, 0.2, 0.7, 0.0, grid)
    frac = (grid - 0.2) / 0.5
    assert np.allclose(lin, xa + frac[:, None] * (xb - xa), atol=1e-14)
    with pytest.raises(ValueError):
        brownian_bridge(xa, xb, 0.7, 0.2, 1.0, [0.5])


def test_bridge_midpoint_law():
    n = 100_000
    z = np.zeros((n, 1))
    out = brownian_bridge(z, z, 0.0, 1.0, 1.0, [0.0, 0.5, 1.0], rng=np.random.default_rng(9))
    mid = out[:, 1, 0]
    se_mean = np.sqrt(0.25 / n)
    se_var = 0.25 * np.sqrt(2.0 / (n - 1))
    assert abs(mid.mean()) <= 3 * se_mean
    assert abs(mid.var(ddof=1) - 0.25) <= 3 * se_var


def test_path_grid():
    grid, knots = path_grid([0.0, 0.5, 1.0], 3)
    assert np.allclose(grid, [0, 0.25, 0.5, 0.75, 1.0]) and list(knots) == [0, 2, 4]


def test_grid_two_gives_skeletons(rng):
    clouds = [rng.standard_normal((4, 2)) for _ in range(3)]
    law = law_from([np.full((4, 4), 1 / 16)] * 2, clouds)
    ps = reconstruct_paths(law, 30, grid_resolution=2, seed=2)
    assert ps.positions.shape == (30, 3, 2)
    for i in range(3):
        assert np.array_equal(ps.positions[:, i], clouds[i][ps.skeleton[:, i]])


def test_single_particle_clouds():
    law = law_from([[[1.0]]], [[[0.0, 0.0]], [[1.0, 1.0]]], tau=0.5)
    ps = reconstruct_paths(law, 20, grid_resolution=5, seed=1)
    assert np.all(ps.positions[:, 0] == 0.0) and np.all(ps.positions[:, -1] == 1.0)
    assert len(list(ps)) == 20


def test_path_marginals_within_bootstrap_floor(rng):
    X, Y = rng.standard_normal((40, 2)), rng.standard_normal((40, 2)) + 1
    sol = sinkhorn_balanced(X, Y, tau=0.3, tol=1e-10)
    G = np.exp((sol.u[:, None] + sol.v[None] - sol.cost_matrix()) / 0.3) / 1600
    law = law_from([G], [X, Y], tau=0.3)
    count = 10_000
    ps = reconstruct_paths(law, count, grid_resolution=4, seed=3)
    boot = np.random.default_rng(4)
    for i, cloud in enumerate([X, Y]):
        # knot positions are particles, so both sides reduce to weights on the cloud
        assert np.array_equal(ps.at_knot(i), cloud[ps.skeleton[:, i]])
        w = np.bincount(ps.skeleton[:, i], minlength=40) / count
        floor = max(energy_distance_sq(cloud, cloud, boot.multinomial(count, np.full(40, 1 / 40)) / count, None)
                    for _ in range(200))
        assert energy_distance_sq(cloud, cloud, w, None) <= floor


def test_from_bridges_flags_growth(rng):
    X, Y = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    bal = sinkhorn_balanced(X, Y, tau=0.3)
    assert not PathLaw.from_bridges([bal], [0, 1], 0.3).growth_heuristic
    tilted = sinkhorn_balanced(X, Y, tau=0.3, p=np.arange(1, 6) / 15)
    law = PathLaw.from_bridges([tilted], [0, 1], 0.3)
    assert law.growth_heuristic and law.chain_mismatch() == 0.0
