import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dectrack.graph import (adjacency_weight, adjacency_weight_grad, build_graph,
                            default_sigma, exact_fiedler, fix_sign, laplacian_spectrum)

from conftest import random_connected_positions

R = 5.0
SIG = default_sigma(R)


def test_weight_endpoints():
    assert adjacency_weight(R, R, SIG) == 0.0
    assert adjacency_weight(R + 1e-9, R, SIG) == 0.0
    assert adjacency_weight(0.0, R, SIG) == pytest.approx(10.0)
    d = np.linspace(0, R, 50)
    assert np.all(np.diff(adjacency_weight(d, R, SIG)) <= 0)


def test_weight_rejects_bad_sigma():
    with pytest.raises(ValueError):
        adjacency_weight(1.0, R, 0.0)
    with pytest.raises(ValueError):
        build_graph(np.zeros((2, 2)), R, -1.0)


def test_weight_gradient_matches_central_differences(rng):
    for _ in range(20):
        xi, xl = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        h = 1e-6
        fd = np.array([(adjacency_weight(np.linalg.norm(xi + h * e - xl), R, SIG)
                        - adjacency_weight(np.linalg.norm(xi - h * e - xl), R, SIG)) / (2 * h)
                       for e in np.eye(2)])
        np.testing.assert_allclose(adjacency_weight_grad(xi, xl, R, SIG), fd, rtol=1e-5, atol=1e-8)
    assert np.all(adjacency_weight_grad([0, 0], [10, 0], R, SIG) == 0)


def test_two_node_laplacian():
    g = build_graph([[0, 0], [3, 0]], R, SIG)
    w = adjacency_weight(3.0, R, SIG)
    np.testing.assert_allclose(g.laplacian, [[w, -w], [-w, w]])
    lam2, nu = exact_fiedler(g.laplacian)
    assert lam2 == pytest.approx(2 * w)
    np.testing.assert_allclose(np.abs(nu), np.full(2, 1 / np.sqrt(2)))
    assert g.neighbors == ((1,), (0,))
    assert g.laplacian_row(0) == {1: -w, 0: w}


def test_fiedler_against_networkx(rng):
    for n in range(2, 9):
        _, g = random_connected_positions(rng, n, R)
        G = nx.from_numpy_array(np.asarray(g.adjacency))
        ref = nx.algebraic_connectivity(G, weight="weight", method="lanczos", tol=1e-12)
        lam2, nu = exact_fiedler(g.laplacian)
        assert lam2 == pytest.approx(ref, rel=1e-7)
        np.testing.assert_allclose(g.laplacian @ nu, lam2 * nu, atol=1e-8 * max(1, lam2))
        assert abs(nu.sum()) < 1e-9 and np.linalg.norm(nu) == pytest.approx(1)


def test_disconnected_graph_has_zero_lambda2():
    g = build_graph([[0, 0], [1, 0], [50, 0], [51, 0]], R, SIG)
    assert not g.is_connected()
    lam2, nu = exact_fiedler(g.laplacian)
    assert lam2 == pytest.approx(0, abs=1e-10)
    assert abs(nu.sum()) < 1e-9
    # the null-space combination separates the components
    assert np.sign(nu[0]) == np.sign(nu[1]) != np.sign(nu[2]) == np.sign(nu[3])


def test_tiny_graphs():
    assert exact_fiedler(np.zeros((1, 1))) == (0.0, pytest.approx(np.zeros(1)))
    g = build_graph(np.zeros((1, 2)), R, SIG)
    assert g.is_connected() and g.neighbors == ((),)


def test_fix_sign():
    np.testing.assert_array_equal(fix_sign([0.0, -1.0, 2.0]), [0.0, 1.0, -2.0])
    np.testing.assert_array_equal(fix_sign([1e-14, 3.0]), [1e-14, 3.0])


def test_neighbors_include_boundary_exclude_self():
    g = build_graph([[0, 0], [R, 0]], R, SIG)
    assert g.neighbors == ((1,), (0,))
    assert g.adjacency[0, 1] == 0.0  # on the boundary the weight is exactly zero


points = arrays(float, st.tuples(st.integers(2, 7), st.just(2)),
                elements=st.floats(-6, 6, allow_nan=False))


@given(points)
def test_laplacian_invariants(x):
    g = build_graph(x, R, SIG)
    L = g.laplacian
    np.testing.assert_array_equal(L, L.T)
    np.testing.assert_allclose(L @ np.ones(len(x)), 0, atol=1e-9 * (1 + np.abs(L).max()))
    vals = laplacian_spectrum(L)
    assert vals.min() > -1e-9 * (1 + vals.max())
    lam2, _ = exact_fiedler(L)
    assert (lam2 > 1e-12 * (1 + vals.max())) == g.is_connected() or lam2 < 1e-9
