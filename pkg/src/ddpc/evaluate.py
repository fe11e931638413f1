"""Prediction-quality metrics and hyperparameter sweeps.

The rolling evaluation predicts ``N`` steps ahead from every test sample,
using the recorded inputs and disturbances over the horizon, and compares
with the recorded outputs.  The adaptive variant refreshes its Hankel data
at every day boundary with everything recorded so far.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, DdpHyper, Mode, OperationalDataset, OperationalSegment
from .ddp import adaptive_update, initial_predictor
from .sim.plant import HP_LIMITS, PlantModel, simulate
from .sim.signals import STEPS_PER_DAY, WeatherParams, WeatherSource, day_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Split:
    """Sample index ranges ``[start, stop)`` of the three evaluation parts."""

    build: tuple
    validation: tuple
    test: tuple

    @classmethod
    def by_days(cls, n_samples: int, build_days: int, validation_days: int = 10,
                steps_per_day: int = STEPS_PER_DAY) -> "Split":
        b = build_days * steps_per_day
        v = b + validation_days * steps_per_day
        if v >= n_samples:
            raise DataError("insufficient test data: nothing left after build and validation")
        return cls((0, b), (b, v), (v, n_samples))


@dataclass
class MaeResult:
    mae: float
    step_mean: np.ndarray
    step_std: np.ndarray
    n_windows: int
    updates: list = field(default_factory=list)   # (sample index, accepted, reasons)
    starts: np.ndarray | None = None
    y_pred: np.ndarray | None = None                # (n_windows, N)
    y_true: np.ndarray | None = None


def synthetic_dataset(days: int, seed: int = 0, drift_rate: float = 0.0,
                      sigma_y: float = 0.05, sigma_u: float = 0.0,
                      plant: PlantModel | None = None,
                      weather: WeatherParams | None = None,
                      mode: Mode = Mode.COOLING) -> OperationalDataset:
    """One contiguous segment of random-input operation on the default plant.

    HP setpoints are drawn uniformly within the mode's power range and held
    for a random 1 to 4 steps, which keeps them persistently exciting while
    giving the slow thermal modes time to respond.
    """
    model = plant if plant is not None else PlantModel.thermal()
    model = PlantModel(model.A, model.B_u, model.B_w, model.C, model.offset, model.u_ref,
                       drift_rate, sigma_y, sigma_u, model.clamp)
    src = WeatherSource(seed, weather or WeatherParams())
    n = days * STEPS_PER_DAY
    w = src.truth(0, n)
    rng = day_rng(seed, 0, 9)
    lo, hi = HP_LIMITS[Mode.parse(mode)]
    u = np.empty(n)
    k = 0
    while k < n:
        hold = int(rng.integers(1, 5))
        u[k:k + hold] = rng.uniform(lo, hi)
        k += hold
    x0 = model.steady_state(0.5 * (lo + hi), w[0], mode)
    y, p_h, _ = simulate(model, x0, u, w, mode, rng=np.random.default_rng([seed, 11]))
    return OperationalDataset([OperationalSegment(0, p_h, w, y, Mode.parse(mode))])


def _series(dataset: OperationalDataset):
    segs = list(dataset)
    if len(segs) != 1:
        raise DataError("evaluation expects one contiguous segment")
    s = segs[0]
    return s, s.u, s.w, s.y[:, 0]


def _windows(x: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """Rows ``x[s:s+length]`` flattened, one per start index."""
    idx = starts[:, None] + np.arange(length)[None, :]
    return x[idx].reshape(len(starts), -1)


def _predict_block(pred, u, w, y, starts):
    ti, N = pred.t_init, pred.N
    Y = pred.P_y_init @ _windows(y, starts - ti, ti).T \
        + pred.P_u_init @ _windows(u, starts - ti, ti).T \
        + pred.P_w_init @ _windows(w, starts - ti, ti).T \
        + pred.P_u_pred @ _windows(u, starts, N).T \
        + pred.P_w_pred @ _windows(w, starts, N).T
    return Y.T, _windows(y, starts, N)


def mae_eval(dataset: OperationalDataset, hyper: DdpHyper, eval_range: tuple,
             adaptive: bool = False, build_range: tuple | None = None, stride: int = 1,
             steps_per_day: int = STEPS_PER_DAY, keep_predictions: bool = False) -> MaeResult:
    """Rolling ``N``-step prediction error over ``eval_range``.

    The first predictor uses the samples of ``build_range`` (default: all
    samples before ``eval_range``).  With ``adaptive`` the Hankel data are
    refreshed at every day boundary inside ``eval_range`` with all samples
    recorded up to that boundary, subject to the usual validation tests.
    """
    if hyper.N < 1:
        raise ValueError("prediction horizon must be positive")
    seg, u, w, y = _series(dataset)
    a, b = eval_range
    b = min(b, len(y) - hyper.N + 1)
    a = max(a, hyper.t_init)
    if b <= a:
        raise DataError("insufficient test data for the requested horizon")
    b0, b1 = build_range if build_range is not None else (0, a)
    pred, H = initial_predictor([seg.slice(b0, b1)], hyper, seg.mode)

    starts = np.arange(a, b, stride)
    updates = []
    if adaptive:
        bounds = [t for t in range(a, b) if t % steps_per_day == 0 and t > a]
        edges = [a] + bounds + [b]
    else:
        edges = [a, b]
    pieces, preds, truths = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if adaptive and lo != a:
            res = adaptive_update(pred, H, [seg.slice(0, lo)], hyper)
            updates.append((lo, res.accepted, tuple(res.reasons)))
            pred, H = res.predictor, res.hankel
        st = starts[(starts >= lo) & (starts < hi)]
        if st.size:
            yp, yt = _predict_block(pred, u, w, y, st)
            pieces.append(np.abs(yp - yt))
            if keep_predictions:
                preds.append(yp)
                truths.append(yt)
    err = np.vstack(pieces)
    res = MaeResult(float(err.mean()), err.mean(axis=0), err.std(axis=0), err.shape[0],
                    updates)
    if keep_predictions:
        res.starts, res.y_pred, res.y_true = starts, np.vstack(preds), np.vstack(truths)
    return res


# --- sensitivity sweep -------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    e_g: tuple = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
    T: tuple = (480,)
    t_init: tuple = (12,)
    N: tuple = (12,)

    def __post_init__(self):
        for name in ("e_g", "T", "t_init", "N"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"sweep grid '{name}' is empty")
            if list(vals) != sorted(vals):
                raise ValueError(f"sweep grid '{name}' must be sorted")
            object.__setattr__(self, name, vals)

    def points(self):
        return itertools.product(self.N, self.t_init, self.T, self.e_g)

    def __len__(self) -> int:
        return len(self.e_g) * len(self.T) * len(self.t_init) * len(self.N)


SWEEP_FIELDS = ("e_g", "T", "t_init", "N", "mae_validation", "mae_test")


def sensitivity_sweep(grid: SweepGrid, dataset: OperationalDataset, split: Split,
                      n_x: int = 4, stride: int = 1, adaptive: bool = False) -> list[dict]:
    """MAE on the validation and test parts for every grid point.

    The predictor is built from the last ``T`` samples of the build part;
    points whose ``T`` exceeds the build part are skipped.
    """
    rows = []
    b0, b1 = split.build
    for N, t_init, T, e_g in grid.points():
        if T > b1 - b0:
            log.warning("sweep point T=%d skipped: build part has %d samples", T, b1 - b0)
            continue
        hyper = DdpHyper(T, t_init, N, e_g, n_x)
        build = (b1 - T, b1)
        val = mae_eval(dataset, hyper, split.validation, adaptive, build, stride)
        test = mae_eval(dataset, hyper, split.test, adaptive, build, stride)
        rows.append({"e_g": e_g, "T": T, "t_init": t_init, "N": N,
                     "mae_validation": val.mae, "mae_test": test.mae})
    return rows


def write_sweep(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, SWEEP_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(float(r[k])) if k.startswith("mae") or k == "e_g" else r[k]
                         for k in SWEEP_FIELDS})


def heatmap(rows, row_key: str = "T", col_key: str = "e_g", value: str = "mae_validation",
            **fixed) -> tuple[list, list, np.ndarray]:
    """Pivot sweep rows into a ``(row values, column values, matrix)`` triple.

    ``fixed`` selects the slice, e.g. ``N=12, t_init=12``; missing cells are NaN.
    """
    sel = [r for r in rows if all(r[k] == v for k, v in fixed.items())]
    rv = sorted({r[row_key] for r in sel})
    cv = sorted({r[col_key] for r in sel})
    M = np.full((len(rv), len(cv)), np.nan)
    for r in sel:
        M[rv.index(r[row_key]), cv.index(r[col_key])] = r[value]
    return rv, cv, M


def plateau_ratio(rows, value: str = "mae_validation", **fixed) -> float:
    """``max / min`` of the MAE over the ``e_g`` values of one slice."""
    vals = [r[value] for r in rows if all(r[k] == v for k, v in fixed.items())]
    if not vals:
        raise ValueError("no sweep rows match the requested slice")
    lo = min(vals)
    return math.inf if lo == 0 else max(vals) / lo
