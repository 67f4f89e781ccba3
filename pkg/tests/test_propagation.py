import numpy as np
import pytest

from bitgear.graph import load_edge_list, norm_coefficient
from bitgear.propagation import propagate, propagate_adjoint, step

from conftest import random_graph


def dense_operator(g, mode):
    """(M+N)x(M+N) single-step matrix assembled edge by edge from norm_coefficient."""
    M = g.num_users
    P = np.zeros((g.num_nodes, g.num_nodes))
    users, items = g.edges()
    for u, i in zip(users, items):
        P[u, M + i] = norm_coefficient(g, u, i, mode, target="user")
        P[M + i, u] = norm_coefficient(g, u, i, mode, target="item")
    return P


def test_unit_degree_swap():
    g, _ = load_edge_list(["u0 i0"])
    base = np.array([[1.0, 2.0], [3.0, 4.0]])
    layers = propagate(g, base, 1)
    np.testing.assert_allclose(layers[1], [[3.0, 4.0], [1.0, 2.0]])


def test_two_users_one_item():
    g, _ = load_edge_list(["u0 i0", "u1 i0"])
    base = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    v1 = propagate(g, base, 1)[1]
    np.testing.assert_allclose(v1[2], [0.70710678, 0.70710678], atol=1e-8)


def test_zero_layers_is_identity(small_graph):
    base = np.random.default_rng(0).normal(size=(small_graph.num_nodes, 3))
    layers = propagate(small_graph, base, 0)
    assert len(layers) == 1 and layers[0] is base


def test_dimension_mismatch(small_graph):
    with pytest.raises(ValueError):
        propagate(small_graph, np.zeros((3, 2)), 1)


@pytest.mark.parametrize("mode", ["symmetric", "left"])
def test_matches_dense_operator(mode):
    g = random_graph(6, 7, 0.35, seed=11)
    P = dense_operator(g, mode)
    x = np.random.default_rng(1).normal(size=(g.num_nodes, 4))
    layers = propagate(g, x, 3, mode)
    expect = x
    for l in range(1, 4):
        expect = P @ expect
        np.testing.assert_allclose(layers[l], expect, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_symmetric_operator_is_self_adjoint(seed):
    g = random_graph(8, 10, 0.3, seed)
    P = dense_operator(g, "symmetric")
    np.testing.assert_allclose(P, P.T, atol=0)


@pytest.mark.parametrize("mode", ["symmetric", "left"])
def test_linearity(mode):
    rng = np.random.default_rng(5)
    g = random_graph(6, 8, 0.3, seed=2)
    X = rng.normal(size=(g.num_nodes, 5))
    Y = rng.normal(size=(g.num_nodes, 5))
    a, b = rng.normal(size=2)
    lhs = propagate(g, a * X + b * Y, 3, mode)
    rx, ry = propagate(g, X, 3, mode), propagate(g, Y, 3, mode)
    for l in range(4):
        np.testing.assert_allclose(lhs[l], a * rx[l] + b * ry[l], rtol=0, atol=1e-10)


@pytest.mark.parametrize("mode", ["symmetric", "left"])
@pytest.mark.parametrize("seed", range(4))
def test_adjoint_identity(mode, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(7, 6, 0.35, seed + 10)
    L = 3
    X = rng.normal(size=(g.num_nodes, 4))
    G = [rng.normal(size=(g.num_nodes, 4)) for _ in range(L + 1)]
    lhs = sum(np.sum(v * gl) for v, gl in zip(propagate(g, X, L, mode), G))
    rhs = np.sum(X * propagate_adjoint(g, G, mode))
    assert rhs == pytest.approx(lhs, rel=1e-8)


def test_adjoint_identity_float32():
    rng = np.random.default_rng(9)
    g = random_graph(9, 9, 0.3, 1)
    X = rng.normal(size=(g.num_nodes, 8)).astype(np.float32)
    G = [rng.normal(size=(g.num_nodes, 8)).astype(np.float32) for _ in range(3)]
    lhs = sum(np.sum(v.astype(np.float64) * gl) for v, gl in zip(propagate(g, X, 2), G))
    rhs = np.sum(X.astype(np.float64) * propagate_adjoint(g, G))
    assert rhs == pytest.approx(lhs, rel=1e-4)


def test_adjoint_zero_layers_returns_gradient():
    g = random_graph(3, 3, 0.5, 0)
    G = np.random.default_rng(0).normal(size=(g.num_nodes, 2))
    np.testing.assert_array_equal(propagate_adjoint(g, [G]), G)


def test_adjoint_unit_edge():
    g, _ = load_edge_list(["u0 i0"])
    gvec = np.array([1.5, -2.0])
    G0 = np.array([[0.1, 0.2], [0.3, 0.4]])
    G1 = np.zeros((2, 2))
    G1[0] = gvec  # gradient only at v_u^(1)
    out = propagate_adjoint(g, [G0, G1])
    np.testing.assert_allclose(out[1], gvec + G0[1])
    np.testing.assert_allclose(out[0], G0[0])


def test_adjoint_matches_finite_differences():
    rng = np.random.default_rng(42)
    g = random_graph(5, 5, 0.4, 7)
    L, d = 2, 3
    X = rng.normal(size=(g.num_nodes, d))
    C = [rng.normal(size=(g.num_nodes, d)) for _ in range(L + 1)]

    def loss(x):
        # nonlinear in the layers so every layer gradient is non-trivial
        return sum(np.sum(np.sin(v) * c) for v, c in zip(propagate(g, x, L), C))

    grads = [np.cos(v) * c for v, c in zip(propagate(g, X, L), C)]
    analytic = propagate_adjoint(g, grads)
    h = 1e-4
    numeric = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        xp, xm = X.copy(), X.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric[idx] = (loss(xp) - loss(xm)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_step_half_steps_read_previous_layer():
    g, _ = load_edge_list(["u0 i0"])
    x = np.array([[1.0], [10.0]])
    np.testing.assert_allclose(step(g, x), [[10.0], [1.0]])
