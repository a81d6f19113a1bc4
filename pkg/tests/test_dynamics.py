import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepsn import dynamics as dy
from deepsn import sheaf as sh
from deepsn.graph import Graph
from helpers import random_graph


def _params(n, d, f, alpha=0.5, beta=0.0, gamma=0.0, phi=0.0, kappa=1.0):
    z = np.zeros((n, d, f))
    return dy.ReactionParams(alpha, beta, gamma, z + phi, z + kappa, z + phi, z + kappa)


# reaction operators

def test_pointwise_examples():
    assert dy.pointwise_reaction(np.zeros((2, 3)), 2.0, 1.0).tolist() == [[0.0] * 3] * 2
    assert dy.pointwise_reaction(np.array([[1.0]]), 2.0, 1.0)[0, 0] == 1.0


# strictness survives float64 rounding only while |x| / kappa stays well below 2**53
@given(st.floats(-1e12, 1e12, allow_nan=False), st.floats(-10, 10).filter(lambda v: v != 0),
       st.floats(1e-3, 10))
def test_pointwise_strictly_below_amplitude(x, phi, kappa):
    out = dy.pointwise_reaction(np.array([[x]]), phi, kappa)[0, 0]
    assert abs(out) < abs(phi)


def test_pointwise_saturation_limit():
    big = dy.pointwise_reaction(np.array([[1e15, -1e15]]), 3.0, 1.0)
    np.testing.assert_allclose(big, [[3.0, -3.0]], rtol=1e-12)


def test_coupled_examples():
    star = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    x = np.ones((4, 1))
    # half-active neighbours cancel
    assert dy.coupled_reaction(x, star, np.full(4, 0.5), 1.0, 1.0, v=0)[0, 0] == 0.0
    # single neighbour fully active passes its state through
    edge = Graph.from_edges(2, [(0, 1)])
    xe = np.array([[0.0], [3.0]])
    assert dy.coupling_field(xe.reshape(2, 1, 1), edge, np.array([0.0, 1.0]))[0, 0, 0] == 3.0
    # star centre: two active leaves, one susceptible
    s = np.array([0.0, 1.0, 1.0, 0.0])
    assert dy.coupling_field(x.reshape(4, 1, 1), star, s)[0, 0, 0] == 1.0
    out = dy.coupled_reaction(x, star, s, 2.0, 1.0, v=0)
    assert out[0, 0] == pytest.approx(2.0 * 1.0 / 2.0)


def test_coupled_vertex_and_full_agree(rng):
    g = random_graph(rng, 8)
    x = rng.normal(size=(16, 3))
    s = rng.uniform(size=8)
    phi, kappa = rng.normal(size=(8, 2, 3)), rng.uniform(0.5, 2, (8, 2, 3))
    full = dy.coupled_reaction(x, g, s, phi, kappa)
    for v in range(8):
        np.testing.assert_allclose(dy.coupled_reaction(x, g, s, phi, kappa, v=v), full[v], atol=1e-14)


def test_params_and_activation_validation():
    with pytest.raises(ValueError):
        _params(2, 1, 1, kappa=0.0)
    with pytest.raises(ValueError):
        dy.ActivationVector(np.array([0.2, 1.2]))


# explicit update

def test_eigenvector_decays_geometrically(rng):
    g = random_graph(rng, 8)
    op = sh.build_operator(sh.Sheaf.random(g, 1, rng))
    w, q = np.linalg.eigh(op.normalized.toarray())
    x = q[:, 3:4].copy()
    p = _params(8, 1, 1, alpha=0.5)
    for _ in range(5):
        nxt = dy.diffusion_step(x, op, p, g, np.zeros(8))
        assert np.linalg.norm(nxt) == pytest.approx((1 - 0.5 * w[3]) * np.linalg.norm(x), rel=1e-10)
        x = nxt


def test_zero_coefficients_keep_state(rng):
    g = random_graph(rng, 6)
    op = sh.build_operator(sh.Sheaf.random(g, 2, rng))
    x = rng.normal(size=(12, 3))
    p = dy.ReactionParams.random(6, 2, 3, rng, alpha=0.0, beta=0.0, gamma=0.0)
    assert np.array_equal(dy.diffusion_step(x, op, p, g, rng.uniform(size=6)), x)


def test_step_is_sum_of_independent_terms(rng):
    g = random_graph(rng, 7)
    d, f = 2, 3
    op = sh.build_operator(sh.Sheaf.random(g, d, rng))
    p = dy.ReactionParams.random(7, d, f, rng, alpha=0.3, beta=0.7, gamma=-0.4)
    x = rng.normal(size=(14, f))
    s = rng.uniform(size=7)
    diff = -p.alpha * (op.normalized.toarray() @ x)
    xb = x.reshape(7, d, f)
    point = p.beta * p.phi1 * xb / (p.kappa1 + np.abs(xb))
    dagger = np.zeros_like(xb)
    for v in range(7):
        for u in g.neighbors(v):
            dagger[v] += s[u] * xb[u] - (1 - s[u]) * xb[u]
    coup = p.gamma * p.phi2 * dagger / (p.kappa2 + np.abs(dagger))
    expect = x + diff + (point + coup).reshape(x.shape)
    assert np.max(np.abs(dy.diffusion_step(x, op, p, g, s) - expect)) <= 1e-12


def test_plain_update_matches_direct_formula(rng):
    g = random_graph(rng, 9)
    op = sh.build_operator(sh.Sheaf.identity(g, 1), epsilon=1.0)
    a = g.adjacency().toarray()
    deg = a.sum(1) + 1.0
    lap = np.diag(a.sum(1)) - a + np.eye(9)
    direct_delta = lap / np.sqrt(np.outer(deg, deg))
    x = rng.normal(size=(9, 2))
    p = _params(9, 1, 2, alpha=0.7)
    got = dy.diffusion_step(x, op, p, g, np.zeros(9))
    assert np.max(np.abs(got - (x - 0.7 * direct_delta @ x))) <= 1e-12


def test_blowup_raises_with_step():
    g = Graph.from_edges(2, [(0, 1)])
    op = sh.build_operator(sh.Sheaf.identity(g), epsilon=1.0)
    p = _params(2, 1, 1, alpha=-1e9)
    with pytest.raises(dy.DivergenceError) as exc:
        dy.iterate_to_fixed_point(np.ones((2, 1)), op, p, g, np.zeros(2), tol=1e-8, max_steps=50)
    assert exc.value.step == 1


def test_energy_non_increasing_for_small_step(rng):
    g = random_graph(rng, 10)
    op = sh.build_operator(sh.Sheaf.random(g, 2, rng), epsilon=0.5)
    dense = op.normalized.toarray()
    lam_max = np.linalg.eigvalsh(dense)[-1]
    p = _params(10, 2, 1, alpha=1.0 / lam_max)
    x = rng.normal(size=(20, 1))
    energy = float((x.T @ dense @ x)[0, 0])
    for _ in range(50):
        x = dy.diffusion_step(x, op, p, g, np.zeros(10))
        e = float((x.T @ dense @ x)[0, 0])
        assert e <= energy + 1e-12
        energy = e


# fixed points

def test_plain_diffusion_with_shift_goes_to_zero(rng):
    g = random_graph(rng, 8)
    op = sh.build_operator(sh.Sheaf.random(g, 2, rng), epsilon=1.0)
    x, ok, _ = dy.iterate_to_fixed_point(rng.normal(size=(16, 2)), op, _params(8, 2, 2), g, np.zeros(8),
                                         tol=1e-12, max_steps=100_000)
    assert ok and np.max(np.abs(x)) < 1e-9


def test_plain_diffusion_without_shift_is_harmonic(rng):
    g = random_graph(rng, 8)
    s = sh.Sheaf.identity(g, 1)
    op = sh.build_operator(s, epsilon=0.0, normalize=False)
    tol = 1e-10
    p = _params(8, 1, 1, alpha=1.0 / (2 * g.degree.max()))
    x, ok, _ = dy.iterate_to_fixed_point(rng.normal(size=(8, 1)), op, p, g, np.zeros(8), tol=tol,
                                         max_steps=200_000)
    assert ok
    assert dy.edge_gap(x, s, transported=True).max() <= 10 * tol


def test_reaction_keeps_edges_apart(rng):
    g = dy.random_connected_bipartite(rng, n_max=10)
    rep = dy.separability_experiment("reaction", g, rng, tol=1e-10)
    assert rep.converged and rep.gap > 10 * 1e-10


def test_tol_must_be_positive(rng):
    g = Graph.from_edges(2, [(0, 1)])
    op = sh.build_operator(sh.Sheaf.identity(g))
    with pytest.raises(ValueError):
        dy.iterate_to_fixed_point(np.ones((2, 1)), op, _params(2, 1, 1), g, np.zeros(2), tol=0.0)


# reaction-bound and fixed-point checks

def test_reaction_bound_skips_zero_amplitude(rng):
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    rep = dy.check_reaction_bound(_params(3, 1, 2, phi=0.0), g, 10, rng)
    assert rep.ok and rep.skipped == 2 * 10 * 3
    assert rep.max_ratio_pointwise == 0.0


def test_reaction_bound_extreme_magnitudes(rng):
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    rep = dy.check_reaction_bound(None, g, 500, rng, log_scale=(12.0, 12.0))
    assert rep.ok and rep.max_ratio_pointwise < 1 and rep.max_ratio_coupled < 1


def test_reaction_bound_random_sweep(rng):
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
    rep = dy.check_reaction_bound(None, g, 10_000, rng, d=2, f=4)
    assert rep.ok and max(rep.max_ratio_pointwise, rep.max_ratio_coupled) < 1


def test_fixed_point_bound_zero_fixed_point(rng):
    g = random_graph(rng, 5)
    op = sh.build_operator(sh.Sheaf.random(g, 1, rng))
    rep = dy.check_fixed_point_bound(np.zeros((5, 2)), op, _params(5, 1, 2), 1e-8)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.ok


def test_fixed_point_bound_small_alpha(rng):
    g = random_graph(rng, 6)
    op = sh.build_operator(sh.Sheaf.random(g, 1, rng), epsilon=1.0)
    p = dy.ReactionParams.contractive(g, 1, 2, rng, alpha=0.02, beta=0.6, gamma=-0.4)
    x, ok, _ = dy.iterate_to_fixed_point(rng.normal(size=(6, 2)), op, p, g, rng.uniform(size=6), tol=1e-9,
                                         max_steps=200_000)
    assert ok and dy.check_fixed_point_bound(x, op, p, 1e-9).ok


# separability experiment

def test_single_edge_standard_diffusion_collapses(rng):
    g = Graph.from_edges(2, [(0, 1)])
    rep = dy.separability_experiment("standard", g, rng, x0=np.array([[1.0], [-3.0]]))
    assert rep.converged and rep.gap <= 1e-10


def test_separability_preconditions(rng):
    g = dy.random_connected_bipartite(rng)
    bad = sh.Sheaf.random(g, 1, rng)
    with pytest.raises(ValueError):
        dy.separability_experiment("standard", g, rng, sheaf=bad)
    with pytest.raises(ValueError):
        dy.separability_experiment("other", g, rng)


def test_random_bipartite_graphs_are_bipartite_and_connected(rng):
    import scipy.sparse.csgraph as csg
    for _ in range(20):
        g = dy.random_connected_bipartite(rng, n_max=20)
        half = g.n // 2
        assert g.n <= 20 and np.all((g.edges[:, 0] < half) != (g.edges[:, 1] < half))
        assert csg.connected_components(g.adjacency())[0] == 1


def test_report_json(rng):
    import json
    g = Graph.from_edges(2, [(0, 1)])
    rep = dy.separability_experiment("standard", g, rng)
    assert json.loads(rep.to_json())["kind"] == "standard"
