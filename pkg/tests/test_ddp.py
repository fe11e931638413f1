import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddpc.data import DataError, DdpHyper, Mode, OperationalSegment, stack_segments
from ddpc.ddp import (DegenerateDataError, adaptive_update, build_predictor, check_consistency,
                      initial_predictor, predict, solve_ddp_qp)

from conftest import random_lti, segment, thermal_lti

HYPER = DdpHyper(T=120, t_init=6, N=6, e_g=0.5, n_x=3)


def _windows(system, pred_or_H, seed, x0_scale=1.0):
    """Init and future windows of a fresh trajectory of ``system``."""
    rng = np.random.default_rng(seed)
    ti, N = pred_or_H.t_init, pred_or_H.N
    n_w = system.E.shape[1]
    u = rng.standard_normal(ti + N)
    w = rng.standard_normal((ti + N, n_w))
    y = system.run(u, w, x0_scale * rng.standard_normal(system.A.shape[0]))
    return (y[:ti], u[:ti], w[:ti].reshape(-1), u[ti:], w[ti:].reshape(-1)), y[ti:]


@pytest.fixture(scope="module")
def setup():
    sys_ = random_lti(3)
    H = stack_segments([segment(sys_, 120, 0)], HYPER, Mode.COOLING)
    return sys_, H, build_predictor(H, HYPER)


def test_kkt_matches_qp_oracle_nullspace(setup):
    _, H, pred = setup
    rng = np.random.default_rng(5)
    for _ in range(20):
        args = [rng.standard_normal(n) for n in (6, 6, 12, 6, 12)]
        ref = solve_ddp_qp(H, HYPER, *args)
        np.testing.assert_allclose(predict(pred, *args), ref, atol=1e-8)


def test_kkt_matches_qp_oracle_cvxpy(setup):
    _, H, pred = setup
    rng = np.random.default_rng(6)
    args = [rng.standard_normal(n) for n in (6, 6, 12, 6, 12)]
    np.testing.assert_allclose(predict(pred, *args),
                               solve_ddp_qp(H, HYPER, *args, method="cvxpy"), atol=1e-5)


def test_qp_unknown_method(setup):
    _, H, _ = setup
    z = [np.zeros(n) for n in (6, 6, 12, 6, 12)]
    with pytest.raises(ValueError):
        solve_ddp_qp(H, HYPER, *z, method="magic")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_willems_exactness_small_regularization(seed):
    sys_ = random_lti(seed)
    hyper = DdpHyper(T=120, t_init=6, N=8, e_g=1e-8, n_x=3)
    pred, _ = initial_predictor([segment(sys_, 120, 2)], hyper, Mode.COOLING)
    for s in range(5):
        args, y_true = _windows(sys_, pred, 100 + s)
        np.testing.assert_allclose(pred(*args), y_true, atol=1e-6)


def test_predictor_blocks_shapes_and_readonly(setup):
    _, _, pred = setup
    assert pred.P_y_init.shape == (6, 6) and pred.P_w_init.shape == (6, 12)
    assert pred.P_u_pred.shape == (6, 6) and pred.P_w_pred.shape == (6, 12)
    with pytest.raises(ValueError):
        pred.P_u_pred[0, 0] = 1.0
    assert np.isfinite(pred.condition) and pred.condition < 1e14


def test_vector_length_checked(setup):
    _, _, pred = setup
    with pytest.raises(ValueError, match="u_pred"):
        pred(np.zeros(6), np.zeros(6), np.zeros(12), np.zeros(5), np.zeros(12))


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10 ** 6))
def test_predictor_is_linear(setup, a, b, seed):
    _, _, pred = setup
    rng = np.random.default_rng(seed)
    x1 = [rng.standard_normal(n) for n in (6, 6, 12, 6, 12)]
    x2 = [rng.standard_normal(n) for n in (6, 6, 12, 6, 12)]
    mix = [a * p + b * q for p, q in zip(x1, x2)]
    np.testing.assert_allclose(pred(*mix), a * pred(*x1) + b * pred(*x2), atol=1e-8)


def test_degenerate_data_refused():
    hyper = DdpHyper(T=60, t_init=4, N=4, n_x=2)
    seg = OperationalSegment(0, np.ones(60), np.ones((60, 2)), np.zeros(60))
    H = stack_segments([seg], hyper, Mode.COOLING)
    with pytest.raises(DegenerateDataError, match="degenerate"):
        build_predictor(H, hyper)
    with pytest.raises(DataError, match="persistently exciting"):
        initial_predictor([seg], hyper, Mode.COOLING)


def test_hyper_mismatch(setup):
    _, H, _ = setup
    with pytest.raises(ValueError):
        build_predictor(H, DdpHyper(T=120, t_init=6, N=5))


# --- consistency -----------------------------------------------------------------

@pytest.fixture(scope="module")
def cooling_pred():
    hyper = DdpHyper(T=200, t_init=6, N=8, e_g=1e-3, n_x=3)
    pred, H = initial_predictor([segment(thermal_lti(-1.0), 200, 0)], hyper, Mode.COOLING)
    return pred, H, hyper


def test_consistency_cooling_plant(cooling_pred):
    pred, _, _ = cooling_pred
    rep = check_consistency(pred, Mode.COOLING, 0.8)
    assert rep and rep.fraction == 1.0 and np.all(rep.column_sums < 0)
    assert not check_consistency(pred, Mode.HEATING, 0.8)


def test_consistency_sign_flipped_plant():
    hyper = DdpHyper(T=200, t_init=6, N=8, e_g=1e-3, n_x=3)
    pred, _ = initial_predictor([segment(thermal_lti(+1.0), 200, 0)], hyper, Mode.COOLING)
    rep = check_consistency(pred, Mode.COOLING, 0.8)
    assert not rep and rep.fraction == 0.0
    assert check_consistency(pred, Mode.HEATING, 0.8).fraction == 1.0


def test_consistency_threshold_counts_columns(cooling_pred):
    pred, _, _ = cooling_pred
    # eta = 1 passes only when every column complies; eta = 0 always passes
    assert check_consistency(pred, eta=1.0)
    assert check_consistency(pred, Mode.HEATING, eta=0.0)


# --- adaptive update ---------------------------------------------------------------

def test_update_accepts_fresh_data(cooling_pred):
    pred, H, hyper = cooling_pred
    new = segment(thermal_lti(-1.0), 50, 7, start=H.last_index)
    res = adaptive_update(pred, H, [new], hyper)
    assert res.accepted and not res.reasons
    assert res.hankel.n_cols == H.n_cols == hyper.n_cols
    assert res.hankel.last_index == H.last_index + 50
    assert res.predictor.fingerprint != pred.fingerprint


def test_update_without_new_data(cooling_pred):
    pred, H, hyper = cooling_pred
    res = adaptive_update(pred, H, list(H.sources), hyper)
    assert not res.accepted and res.reasons == ["no_new_data"] and res.predictor is pred


def test_update_rejects_non_exciting_data(cooling_pred):
    pred, H, hyper = cooling_pred
    seg = segment(thermal_lti(-1.0), 220, 3, start=H.last_index, u=np.full(220, 0.5))
    seg = OperationalSegment(seg.start_index, seg.u, np.zeros((220, 2)), seg.y)
    res = adaptive_update(pred, H, [seg], hyper)
    assert not res.accepted and res.reasons == ["PE_fail"] and res.predictor is pred


def test_update_rejects_inconsistent_data(cooling_pred):
    pred, H, hyper = cooling_pred
    bad = segment(thermal_lti(+1.0), 220, 4, start=H.last_index)
    res = adaptive_update(pred, H, [bad], hyper)
    assert not res.accepted and res.reasons == ["consistency_fail"]
    assert res.hankel is H


def test_update_ignores_other_mode(cooling_pred):
    pred, H, hyper = cooling_pred
    new = segment(thermal_lti(-1.0), 50, 7, start=H.last_index, mode=Mode.HEATING)
    assert adaptive_update(pred, H, [new], hyper).reasons == ["no_new_data"]
