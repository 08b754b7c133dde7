import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pintopt.quadrature import (apply_nodes, build_lobatto_rule, lagrange_matrix, lobatto_nodes,
                                node_interpolation_matrix, node_restriction_matrix)

from conftest import collocation_solution

node_counts = st.integers(min_value=2, max_value=12)


def test_three_nodes_are_simpson():
    rule = build_lobatto_rule(3)
    np.testing.assert_allclose(rule.nodes, [0.0, 0.5, 1.0], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)


def test_five_nodes_integrate_degree_seven():
    rule = build_lobatto_rule(5)
    assert abs(rule.weights @ rule.nodes ** 7 - 1 / 8) < 1e-13
    # degree 8 is beyond the rule's exactness
    assert abs(rule.weights @ rule.nodes ** 8 - 1 / 9) > 1e-8


def test_known_lobatto_points():
    # interior points of the 4-node rule are (1 -+ 1/sqrt(5)) / 2
    x = lobatto_nodes(4)
    np.testing.assert_allclose(x[1:3], [(1 - 5 ** -0.5) / 2, (1 + 5 ** -0.5) / 2], atol=1e-15)


@pytest.mark.parametrize("n", [1, 13, 2.5, "3"])
def test_rejects_bad_node_counts(n):
    with pytest.raises(ValueError):
        build_lobatto_rule(n)


@given(node_counts)
def test_rule_invariants(n):
    r = build_lobatto_rule(n)
    assert r.nodes[0] == 0.0 and r.nodes[-1] == 1.0
    assert np.all(np.diff(r.nodes) > 0)
    np.testing.assert_allclose(r.nodes, 1 - r.nodes[::-1], atol=1e-14)
    np.testing.assert_allclose(r.Q.sum(axis=1), r.nodes, atol=1e-13)
    assert np.all(r.Q[0] == 0)
    # QI is lower triangular with a positive diagonal, QE strictly lower with node spacings
    assert np.all(np.triu(r.QI, 1) == 0)
    assert np.all(np.diag(r.QI)[1:] > 0)
    np.testing.assert_allclose(r.QI.sum(axis=1), r.nodes, atol=1e-13)
    assert np.all(np.triu(r.QE) == 0)
    np.testing.assert_allclose(r.QE.sum(axis=1), r.nodes, atol=1e-14)
    assert not r.Q.flags.writeable


@given(node_counts, st.data())
def test_q_integrates_polynomials_exactly(n, data):
    r = build_lobatto_rule(n)
    deg = data.draw(st.integers(0, n - 1))
    exact = r.nodes ** (deg + 1) / (deg + 1)
    np.testing.assert_allclose(r.Q @ r.nodes ** deg, exact, atol=1e-13)


@given(node_counts)
def test_full_step_exactness_degree(n):
    r = build_lobatto_rule(n)
    for deg in range(2 * n - 2):
        assert abs(r.weights @ r.nodes ** deg - 1 / (deg + 1)) < 1e-13


def test_identity_transfer_between_equal_rules():
    r = build_lobatto_rule(5)
    np.testing.assert_array_equal(node_interpolation_matrix(r, r), np.eye(5))
    np.testing.assert_array_equal(node_restriction_matrix(r, r), np.eye(5))


def test_interpolation_three_to_five():
    f, c = build_lobatto_rule(5), build_lobatto_rule(3)
    P = node_interpolation_matrix(f, c)
    np.testing.assert_allclose(P @ np.full(3, 2.5), np.full(5, 2.5), atol=1e-15)
    np.testing.assert_allclose(P @ c.nodes ** 2, f.nodes ** 2, atol=1e-14)
    with pytest.raises(ValueError):
        node_interpolation_matrix(c, f)


def test_nested_nodes_restrict_by_injection():
    f, c = build_lobatto_rule(5), build_lobatto_rule(3)
    R = node_restriction_matrix(f, c)
    np.testing.assert_array_equal(R, np.eye(5)[[0, 2, 4]])


def test_lagrange_matrix_reproduces_polynomials():
    src = lobatto_nodes(6)
    pts = np.linspace(0, 1, 11)
    L = lagrange_matrix(src, pts)
    p = lambda x: 3 * x ** 5 - x ** 2 + 0.5
    np.testing.assert_allclose(L @ p(src), p(pts), atol=1e-13)


def test_apply_nodes_matches_tensordot():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 5))
    v = rng.standard_normal((5, 4, 2))
    np.testing.assert_allclose(apply_nodes(A, v), np.tensordot(A, v, axes=1), atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_collocation_order_on_dahlquist(n):
    # y' = -y over one unit interval split into K collocation steps
    rule = build_lobatto_rule(n)
    errs = []
    Ks = [1, 2, 4] if n < 5 else [1, 2]
    for K in Ks:
        dt, y = 1.0 / K, 1.0
        for _ in range(K):
            y = collocation_solution(rule, -1.0, dt, y)[-1]
        errs.append(abs(y - np.exp(-1.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders[-1] >= 2 * (n - 1) - 0.5
