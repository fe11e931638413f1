import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddpc.robust import (AffineExpression, AffinePolicy, BoxSet, causal_mask, compose_affine,
                         enforce_equality_for_all, robustify_interval, robustify_leq,
                         worst_case_margin)


def test_box_vertices_enumerate_all_sign_patterns():
    box = BoxSet([1.0, -1.0, 0.0], [0.5, 2.0, 1.0])
    V = box.vertices()
    assert V.shape == (8, 3) and len({tuple(v) for v in V}) == 8
    assert np.all(np.abs(V - box.center) == box.half_width)


def test_box_validation_and_deviation_layout():
    with pytest.raises(ValueError):
        BoxSet([0.0], [-1.0])
    box = BoxSet.deviation(3, [0.2, 0.05], 0.1)
    np.testing.assert_array_equal(box.half_width, [0.2, 0.05] * 3 + [0.1] * 3)
    assert np.all(box.center == 0)


def test_causal_mask_hand_example():
    m = causal_mask(3, 3, 1, lag_w=0, lag_a=-1)
    # weather columns strictly causal, AGC columns include the same step
    np.testing.assert_array_equal(m[:, :3], [[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    np.testing.assert_array_equal(m[:, 3:], [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    assert not causal_mask(3, 3, 2, zero_rows=2)[:2].any()


@given(seed=st.integers(0, 10 ** 6), rows=st.integers(1, 5), d=st.integers(1, 6))
def test_worst_case_margin_matches_vertex_enumeration(seed, rows, d):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((rows, d))
    box = BoxSet(np.zeros(d), rng.uniform(0, 1, d))
    margin = worst_case_margin(AffineExpression(np.zeros(rows), G), box).margin
    np.testing.assert_allclose(margin, (box.vertices() @ G.T).max(axis=0), atol=1e-12)


@given(seed=st.integers(0, 10 ** 6))
def test_compose_affine_matches_sampling(seed):
    rng = np.random.default_rng(seed)
    N, n_w = 4, 2
    pol = AffinePolicy.fixed(rng.standard_normal(N), rng.standard_normal((N, N * n_w)),
                             rng.standard_normal((N, N)), n_w)
    M = rng.standard_normal((3, N))
    off = AffineExpression(rng.standard_normal(3), rng.standard_normal((3, N * (n_w + 1))))
    out = compose_affine(pol, M, off)
    for delta in BoxSet.deviation(N, [1, 1], 1).sample(rng, 10):
        np.testing.assert_allclose(out.evaluate(delta),
                                   M @ pol.decide(delta) + off.evaluate(delta), atol=1e-12)


def test_compose_affine_shape_errors():
    pol = AffinePolicy.fixed(np.zeros(3))
    with pytest.raises(ValueError):
        compose_affine(pol, np.ones((2, 4)))
    with pytest.raises(ValueError):
        compose_affine(pol, np.ones((2, 3)), np.zeros(5))
    with pytest.raises(TypeError):
        compose_affine(np.zeros(3), np.eye(3))


def _solve(cons, objective):
    prob = cp.Problem(cp.Maximize(objective), cons)
    prob.solve(solver="CLARABEL")
    assert prob.status == "optimal"
    return prob


def test_robust_leq_feasible_at_all_vertices_and_tight():
    N, n_w = 3, 1
    box = BoxSet.deviation(N, [0.5], 0.3)
    pol = AffinePolicy.variable(N, n_w)
    x = compose_affine(pol, np.tril(np.ones((N, N))), None)
    dist = AffineExpression(np.zeros(N), np.hstack([np.eye(N), np.eye(N)]))
    expr = x + dist                      # policy plus a direct disturbance path
    cons = robustify_leq(expr, 2.0, box) + [pol.expression.gain <= 0.4,
                                            pol.expression.gain >= -0.4]
    _solve(cons, cp.sum(pol.expression.nominal))
    vals = np.array([expr.evaluate(v) for v in box.vertices()])
    assert vals.max() <= 2.0 + 1e-7
    assert vals.max(axis=0).max() >= 2.0 - 1e-6


def test_robust_interval_with_slack_uses_shared_margin():
    box = BoxSet(np.zeros(2), [1.0, 1.0])
    expr = AffineExpression(cp.Variable(1), np.array([[1.0, -1.0]]))
    s = cp.Variable(1, nonneg=True)
    cons = robustify_interval(expr, -1.0, 1.0, box, s, s)
    prob = cp.Problem(cp.Minimize(cp.sum(s) + cp.sum_squares(expr.nominal - 0.5)), cons)
    prob.solve(solver="CLARABEL")
    # a width-4 range must fit a width-2 interval: slack 1 either side
    np.testing.assert_allclose(s.value, [1.0], atol=1e-4)


def test_equality_for_all_disturbances():
    N, n_w = 4, 1
    box = BoxSet.deviation(N, [0.3], 0.2)
    u = AffinePolicy.variable(N, n_w, name="u")
    e = AffinePolicy.variable(N, n_w, lag_a=-1, name="e")
    sel_a = np.hstack([np.zeros((N, N)), np.eye(N)])
    target = AffineExpression(np.linspace(1, 2, N), 1.5 * sel_a)
    cons = enforce_equality_for_all(u.expression + e.expression, target)
    cons += robustify_interval(u.expression, 0.0, 1.0, box)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(e.expression.nominal)), cons)
    prob.solve(solver="CLARABEL")
    rng = np.random.default_rng(0)
    for delta in box.sample(rng, 50):
        np.testing.assert_allclose(u.decide(delta) + e.decide(delta),
                                   target.evaluate(delta), atol=1e-8)
    # the strictly causal u cannot see the same-step AGC deviation
    assert np.allclose(np.diag(u.M_a), 0.0)


def test_policy_mask_and_pinned_nominal():
    N = 5
    pinned = np.array([0.1, -0.2])
    pol = AffinePolicy.variable(N, 1, zero_rows=3, pinned=pinned)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(pol.expression.nominal - 1)
                                  + cp.sum_squares(pol.expression.gain - 1)))
    prob.solve(solver="CLARABEL")
    np.testing.assert_allclose(pol.v[:2], pinned, atol=1e-9)
    np.testing.assert_allclose(pol.v[2:], 1.0, atol=1e-6)
    G = np.hstack([pol.M_w, pol.M_a])
    assert np.all(G[~pol.mask] == 0) and np.allclose(G[pol.mask], 1.0, atol=1e-6)
    assert not pol.mask[:3].any()


def test_affine_algebra():
    a = AffineExpression(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    b = AffineExpression.constant([3.0, 4.0], 2)
    c = 2 * (a - b) + 1
    np.testing.assert_allclose(c.evaluate([1.0, -1.0]), [-1.0, -5.0])
    np.testing.assert_allclose(c[1].evaluate(np.zeros(2)), [-3.0])
    with pytest.raises(ValueError):
        a + AffineExpression.constant([1.0], 2)
    with pytest.raises(ValueError):
        AffineExpression(np.zeros(2), np.zeros((3, 2)))
