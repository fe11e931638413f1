import csv
import math

import numpy as np
import pytest

from ddpc.data import DataError, DdpHyper, OperationalDataset
from ddpc.evaluate import (SWEEP_FIELDS, Split, SweepGrid, heatmap, mae_eval, plateau_ratio,
                           sensitivity_sweep, synthetic_dataset, write_sweep)

from conftest import random_lti, segment


def test_split_by_days():
    s = Split.by_days(96 * 20, 5, 10)
    assert s.build == (0, 480) and s.validation == (480, 1440) and s.test == (1440, 1920)
    with pytest.raises(DataError, match="insufficient test data"):
        Split.by_days(96 * 15, 5, 10)


def test_mae_is_zero_on_noiseless_lti():
    sys_ = random_lti(0)
    ds = OperationalDataset([segment(sys_, 400, 1)])
    hyper = DdpHyper(T=200, t_init=6, N=6, e_g=1e-8, n_x=3)
    res = mae_eval(ds, hyper, (200, 400), keep_predictions=True)
    assert res.mae < 1e-5 and res.n_windows == 400 - 6 + 1 - 200
    assert res.y_pred.shape == res.y_true.shape == (res.n_windows, 6)
    np.testing.assert_array_equal(res.starts, np.arange(200, 395))


def test_mae_window_bookkeeping():
    sys_ = random_lti(1)
    ds = OperationalDataset([segment(sys_, 300, 2)])
    hyper = DdpHyper(T=100, t_init=4, N=8, e_g=0.1, n_x=3)
    res = mae_eval(ds, hyper, (100, 300), stride=5)
    assert res.n_windows == len(range(100, 300 - 8 + 1, 5))
    assert res.step_mean.shape == res.step_std.shape == (8,)
    assert res.mae == pytest.approx(res.step_mean.mean())
    with pytest.raises(DataError):
        mae_eval(ds, hyper, (299, 300))


def test_adaptive_eval_updates_daily():
    ds = synthetic_dataset(8, seed=0, drift_rate=0.02)
    hyper = DdpHyper(T=192, t_init=8, N=8, e_g=0.01, n_x=4)
    res = mae_eval(ds, hyper, (192, 768), adaptive=True, build_range=(0, 192), stride=4,
                   steps_per_day=96)
    assert [u[0] for u in res.updates] == [288, 384, 480, 576, 672]
    assert any(u[1] for u in res.updates)


def test_synthetic_dataset_is_reproducible():
    a, b = synthetic_dataset(2, seed=3), synthetic_dataset(2, seed=3)
    np.testing.assert_array_equal(next(iter(a)).y, next(iter(b)).y)
    seg = next(iter(a))
    assert len(seg) == 192 and seg.u.min() >= 2.4 and seg.u.max() <= 7.0


def test_sweep_grid_validation():
    with pytest.raises(ValueError, match="empty"):
        SweepGrid(e_g=())
    with pytest.raises(ValueError, match="sorted"):
        SweepGrid(T=(480, 240))
    g = SweepGrid(e_g=(0.1, 1.0), T=(96, 192), t_init=(4,), N=(4, 8))
    assert len(g) == len(list(g.points())) == 8


def test_sweep_heatmap_and_plateau(tmp_path):
    ds = synthetic_dataset(5, seed=1)
    split = Split.by_days(ds.n_samples, 2, 2)
    grid = SweepGrid(e_g=(0.01, 1.0), T=(96, 192, 400), t_init=(4,), N=(4,))
    rows = sensitivity_sweep(grid, ds, split, n_x=4, stride=8)
    assert len(rows) == 4    # T=400 exceeds the two build days and is skipped
    rv, cv, M = heatmap(rows, "T", "e_g", N=4, t_init=4)
    assert rv == [96, 192] and cv == [0.01, 1.0] and np.isfinite(M).all()
    r = plateau_ratio(rows, T=192)
    vals = [x["mae_validation"] for x in rows if x["T"] == 192]
    assert r == pytest.approx(max(vals) / min(vals))
    with pytest.raises(ValueError):
        plateau_ratio(rows, T=12345)
    write_sweep(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        back = list(csv.DictReader(fh))
    assert tuple(back[0]) == SWEEP_FIELDS and len(back) == 4
    assert float(back[0]["mae_test"]) == rows[0]["mae_test"]


def test_plateau_ratio_zero_minimum():
    assert plateau_ratio([{"mae_validation": 0.0}, {"mae_validation": 1.0}]) == math.inf
