"""Predictive building control on top of a data-driven predictor.

* :func:`solve_bilevel_deepc` is the plain certainty-equivalent controller:
  a convex QP in ``u`` with the temperature given by the linear predictor.
* :class:`IntradayController` solves the robust 15-minute SFC problem with
  affine disturbance-feedback policies for the HP input, the battery power
  and the intraday transactions.  The cvxpy problem is compiled once per
  predictor and re-solved with new parameter values every step.
* :func:`ess_track` is the 4-second battery law that closes the tracking
  gap left by the building.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import cvxpy as cp
import numpy as np

from .data import DataError, DataLog, DdpHyper, Mode
from .ddp import DdpPredictor, SolverError, UpdateResult, adaptive_update
from .robust import (AffineExpression, AffinePolicy, BoxSet, compose_affine,
                     enforce_equality_for_all, robustify_interval)
from .sim.ess import FINE_DT_S, EssParams, EssState, step_ess
from .sim.plant import HP_LIMITS
from .sim.signals import AgcForecaster

log = logging.getLogger(__name__)

SOLVER = "CLARABEL"
#: QDLDL is markedly faster than the default factorization on these KKT systems
SOLVER_OPTS = {"direct_solve_method": "qdldl"}
_OK = ("optimal", "optimal_inaccurate")


@dataclass(frozen=True)
class ControllerConfig:
    """Weights, uncertainty radii and operating bounds of the intraday QP."""

    N: int = 12
    W_u: float = 1.0
    W_P: float = 1.0
    W_SoC: float = 10.0
    w_radius: tuple = (0.2, 0.05)
    a_radius: float = 0.2
    y_min: float = 22.0
    y_max: float = 26.0
    u_min: float = 2.4
    u_max: float = 8.4
    soc_min: float = 0.25
    soc_max: float = 5.0
    pe_min: float = -5.0
    pe_max: float = 5.0
    dt_h: float = 0.25
    rho_slack: float = 1e4
    commit_steps: int = 3

    def __post_init__(self):
        for lo, hi in (("y_min", "y_max"), ("u_min", "u_max"),
                       ("soc_min", "soc_max"), ("pe_min", "pe_max")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo} must not exceed {hi}")
        if min(self.W_u, self.W_P, self.W_SoC, self.rho_slack) < 0:
            raise ValueError("weights must be nonnegative")
        if self.a_radius < 0 or min(self.w_radius) < 0:
            raise ValueError("radii must be nonnegative")
        if not 0 <= self.commit_steps < self.N:
            raise ValueError("commit_steps must lie in [0, N)")

    @property
    def soc_ref(self) -> float:
        return 0.5 * (self.soc_min + self.soc_max)

    def for_mode(self, mode: Mode | str) -> "ControllerConfig":
        """Cap the HP bounds to what the plant can draw in ``mode``."""
        lo, hi = HP_LIMITS[Mode.parse(mode)]
        return replace(self, u_min=max(self.u_min, lo), u_max=min(self.u_max, hi))

    def box(self, n_w: int) -> BoxSet:
        r = np.asarray(self.w_radius, float)
        if r.size != n_w:
            r = np.resize(r, n_w)
        return BoxSet.deviation(self.N, r, self.a_radius)


@dataclass(frozen=True)
class CommitmentWindow:
    """Transactions already committed for the next ``len(committed)`` steps."""

    committed: tuple
    new: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "committed", tuple(float(c) for c in self.committed))

    @classmethod
    def zeros(cls, n: int = 3) -> "CommitmentWindow":
        return cls((0.0,) * n)

    def advance(self, new: float) -> "CommitmentWindow":
        """Shift by one step after ``new`` has been submitted."""
        if not self.committed:
            return self
        return CommitmentWindow(self.committed[1:] + (float(new),))


# --- certainty-equivalent bi-level DeePC --------------------------------

@dataclass
class BilevelResult:
    u: np.ndarray
    y: np.ndarray
    slack: float
    status: str
    objective: float


def _bounds(b, n):
    if b is None:
        return None, None
    lo, hi = b
    lo = None if lo is None else np.broadcast_to(np.asarray(lo, float), (n,))
    hi = None if hi is None else np.broadcast_to(np.asarray(hi, float), (n,))
    return lo, hi


def solve_bilevel_deepc(pred: DdpPredictor, objective: Callable | None, u_bounds,
                        y_bounds, y_init, u_init, w_init, w_pred,
                        rho_slack: float = 1e4, constraints: Callable | None = None,
                        solver: str = SOLVER) -> BilevelResult:
    """Minimize ``objective(u, y)`` with ``y`` from the linear predictor.

    The lower-level regression is already folded into ``pred``, so the
    problem is a single convex QP.  ``u_bounds`` are hard, ``y_bounds`` are
    softened with a nonnegative slack penalized at ``rho_slack``.
    ``objective`` defaults to ``sum(u**2)``; ``constraints(u, y)`` may add
    further cvxpy constraints.
    """
    n_u = pred.P_u_pred.shape[1] // pred.N
    u = cp.Variable(pred.N * n_u)
    y0 = pred.free_response(y_init, u_init, w_init) + pred.P_w_pred @ np.asarray(
        w_pred, float).reshape(-1)
    y = y0 + pred.P_u_pred @ u
    s = cp.Variable(y0.size, nonneg=True)
    cons = []
    ulo, uhi = _bounds(u_bounds, u.size)
    if ulo is not None:
        cons.append(u >= ulo)
    if uhi is not None:
        cons.append(u <= uhi)
    ylo, yhi = _bounds(y_bounds, y0.size)
    if ylo is not None:
        cons.append(y >= ylo - s)
    if yhi is not None:
        cons.append(y <= yhi + s)
    if constraints is not None:
        cons += list(constraints(u, y))
    J = cp.sum_squares(u) if objective is None else objective(u, y)
    prob = cp.Problem(cp.Minimize(J + rho_slack * cp.sum(s)), cons)
    prob.solve(solver=solver)
    if prob.status not in _OK or u.value is None:
        raise SolverError(f"bi-level DeePC failed: {prob.status}")
    return BilevelResult(np.asarray(u.value), np.asarray(y.value), float(s.value.sum()),
                         prob.status, float(prob.value))


# --- robust intraday controller ------------------------------------------

@dataclass
class IntradayResult:
    u_now: float
    p_int_commit: float
    policies: dict
    status: str
    ok: bool
    diagnostics: dict = field(default_factory=dict)


class IntradayController:
    """Robust SFC controller with causal affine policies.

    Decision channels, each ``v + [M_w, M_a] @ delta`` in the deviation
    basis of the weather and AGC forecasts:

    * ``u``: HP input, strictly causal in both disturbances;
    * ``pe``: battery power, strictly causal in weather and allowed to react
      to the same-step AGC deviation (the 4-second tracker does exactly that);
    * ``pint``: intraday transactions, no feedback on the first
      ``commit_steps + 1`` rows, leading nominal entries pinned to the
      committed values.

    The tracking equality ``u + pe = P_bar + pint + gamma*alpha`` is imposed
    for every disturbance by coefficient matching.  With ``ess_only`` the HP
    channel is dropped and the battery alone tracks its own baseline.
    """

    def __init__(self, pred: DdpPredictor | None, cfg: ControllerConfig = ControllerConfig(),
                 ess_only: bool = False, solver: str = SOLVER, solver_opts: dict | None = None):
        if not ess_only and pred is None:
            raise ValueError("a predictor is required unless ess_only")
        if pred is not None and pred.N != cfg.N:
            raise ValueError(f"predictor horizon {pred.N} differs from N={cfg.N}")
        self.pred = pred
        self.cfg = cfg
        self.ess_only = ess_only
        self.solver = solver
        if solver_opts is None:
            solver_opts = SOLVER_OPTS if solver == SOLVER else {}
        self.solver_opts = dict(solver_opts)
        self.last_u: float | None = None
        self._build()

    def _build(self):
        cfg, N = self.cfg, self.cfg.N
        n_w = 1 if self.pred is None else self.pred.P_w_pred.shape[1] // N
        self.n_w = n_w
        box = self.box = cfg.box(n_w)
        d = box.dim
        nc = cfg.commit_steps

        self.p_track = cp.Parameter(N, name="p_bar_plus_gamma_alpha")
        self.gamma = cp.Parameter(nonneg=True, name="gamma")
        self.commit = cp.Parameter(nc, name="commitments") if nc else None
        self.soc0 = cp.Parameter(name="soc0")

        pe = AffinePolicy.variable(N, n_w, lag_w=0, lag_a=-1, name="pe")
        pint = AffinePolicy.variable(N, n_w, zero_rows=nc + 1, pinned=self.commit, name="pint")
        sel_a = np.hstack([np.zeros((N, N * n_w)), np.eye(N)])
        track = pint.expression + AffineExpression(self.p_track, self.gamma * sel_a)

        cons = []
        slack_y = None
        if self.ess_only:
            u = None
            total = pe.expression
        else:
            u = AffinePolicy.variable(N, n_w, name="u")
            self.y_free = cp.Parameter(N, name="y_free")
            P_u = np.asarray(self.pred.P_u_pred)
            direct_w = np.hstack([self.pred.P_w_pred, np.zeros((N, N))])
            y = compose_affine(u, P_u, AffineExpression(self.y_free, direct_w))
            slack_y = cp.Variable(N, nonneg=True, name="slack_y")
            cons += robustify_interval(u.expression, cfg.u_min, cfg.u_max, box)
            cons += robustify_interval(y, cfg.y_min, cfg.y_max, box, slack_y, slack_y)
            total = u.expression + pe.expression
            self._y = y
        cons += robustify_interval(pe.expression, cfg.pe_min, cfg.pe_max, box)
        L = cfg.dt_h * np.tril(np.ones((N, N)))
        soc = compose_affine(pe, L, self.soc0 * np.ones(N))
        slack_s = cp.Variable(N, nonneg=True, name="slack_soc")
        cons += robustify_interval(soc, cfg.soc_min, cfg.soc_max, box, slack_s, slack_s)
        cons += enforce_equality_for_all(total, track)

        J = cfg.W_P * cp.sum_squares(pint.nominal) \
            + cfg.W_SoC * cp.sum_squares(soc.nominal - cfg.soc_ref) \
            + cfg.rho_slack * cp.sum(slack_s)
        if u is not None:
            J = J + cfg.W_u * cp.sum_squares(u.nominal) + cfg.rho_slack * cp.sum(slack_y)
        self.problem = cp.Problem(cp.Minimize(J), cons)
        if not self.problem.is_dpp():
            raise RuntimeError("intraday problem is not DPP")
        self.policies = {"u": u, "pe": pe, "pint": pint}
        self._soc = soc
        self._slack = (slack_y, slack_s)

    def set_predictor(self, pred: DdpPredictor):
        if pred is not self.pred:
            self.pred = pred
            self._build()

    def solve(self, y_free, w_forecast, alpha_forecast, soc_t: float, p_bar, gamma: float,
              commitments: CommitmentWindow) -> IntradayResult:
        """One receding-horizon step.

        ``y_free`` is the predictor's free response from the init windows
        (ignored when ``ess_only``), ``w_forecast`` the ``(N, n_w)`` weather
        forecast, ``alpha_forecast`` and ``p_bar`` ``N``-vectors.  On solver
        failure the previous setpoint is held and ``ok`` is False.
        """
        cfg, N = self.cfg, self.cfg.N
        a_bar = np.asarray(alpha_forecast, float).reshape(N)
        self.p_track.value = np.asarray(p_bar, float).reshape(N) + gamma * a_bar
        self.gamma.value = float(gamma)
        if self.commit is not None:
            self.commit.value = np.asarray(commitments.committed, float)[:cfg.commit_steps]
        self.soc0.value = float(soc_t)
        if not self.ess_only:
            w = np.asarray(w_forecast, float).reshape(-1)
            self.y_free.value = np.asarray(y_free, float).reshape(N) + self.pred.P_w_pred @ w
        t0 = time.perf_counter()
        status = "error"
        try:
            self.problem.solve(solver=self.solver, warm_start=True, **self.solver_opts)
            status = self.problem.status
        except cp.error.SolverError as exc:
            log.warning("intraday solve failed: %s", exc)
        elapsed = time.perf_counter() - t0
        ok = status in _OK
        diag = {"status": status, "solve_s": elapsed}
        if not ok:
            held = self.last_u if self.last_u is not None else cfg.u_min
            diag["fallback"] = "hold_previous"
            return IntradayResult(held, 0.0, {}, status, False, diag)
        pol = {k: (None if p is None else AffinePolicy.fixed(
            p.expression.value().nominal,
            p.expression.value().gain[:, :N * self.n_w],
            p.expression.value().gain[:, N * self.n_w:], self.n_w))
            for k, p in self.policies.items()}
        nc = cfg.commit_steps
        p_int_new = float(pol["pint"].v[nc])
        u_now = float(pol["u"].v[0]) if pol["u"] is not None else float("nan")
        if not self.ess_only:
            u_now = min(max(u_now, cfg.u_min), cfg.u_max)
            self.last_u = u_now
            diag["slack_y"] = float(self._slack[0].value.sum())
        diag["slack_soc"] = float(self._slack[1].value.sum())
        diag["objective"] = float(self.problem.value)
        diag["soc_nominal"] = np.asarray(self._soc.nominal.value, float)
        return IntradayResult(u_now, p_int_new, pol, status, True, diag)


def solve_intraday(pred: DdpPredictor | None, cfg: ControllerConfig, y_init, u_init, w_init,
                   w_forecast, alpha_forecast, soc_t: float, p_bar, gamma: float,
                   commitments: CommitmentWindow, ess_only: bool = False) -> IntradayResult:
    """Build and solve the robust intraday problem once."""
    ctrl = IntradayController(pred, cfg, ess_only=ess_only)
    y_free = None if ess_only else pred.free_response(y_init, u_init, w_init)
    return ctrl.solve(y_free, w_forecast, alpha_forecast, soc_t, p_bar, gamma, commitments)


# --- 4-second battery tracking -------------------------------------------

@dataclass(frozen=True)
class TrackResult:
    state: EssState
    demand: float
    p_e: float
    error: float


def ess_track(p_bar_t: float, p_int_t: float, gamma: float, alpha_t: float, p_h_t: float,
              ess_state: EssState, params: EssParams = EssParams(),
              dt_s: float = FINE_DT_S) -> TrackResult:
    """Battery setpoint that closes the gap to the committed power.

    ``demand = P_bar + P_int + gamma*alpha - P_H``; the battery delivers the
    demand clipped to its power rating and to the energy it can absorb or
    release within ``dt_s``.  The tracking error is the undelivered part.
    """
    demand = p_bar_t + p_int_t + gamma * alpha_t - p_h_t
    state, p_e = step_ess(ess_state, demand, params, dt_s)
    return TrackResult(state, demand, p_e, demand - p_e)


# --- 15-minute orchestration ---------------------------------------------

@dataclass
class PredictorBank:
    """One predictor per HVAC mode; ``frozen`` modes are never refreshed."""

    predictors: dict
    hankels: dict
    hyper: DdpHyper
    frozen: set = field(default_factory=set)

    def get(self, mode: Mode) -> DdpPredictor | None:
        return self.predictors.get(Mode.parse(mode))

    def update(self, mode: Mode, segments) -> UpdateResult | None:
        mode = Mode.parse(mode)
        if mode in self.frozen or mode not in self.predictors:
            return None
        res = adaptive_update(self.predictors[mode], self.hankels[mode], segments, self.hyper)
        if res.accepted:
            self.predictors[mode], self.hankels[mode] = res.predictor, res.hankel
        else:
            log.info("controller hankel update (%s) rejected: %s", mode.value,
                     ",".join(res.reasons))
        return res


@dataclass
class ControllerRuntime:
    """Mutable state carried between 15-minute cycles."""

    cfg: ControllerConfig
    bank: PredictorBank | None = None
    ess_only: bool = False
    forecaster: AgcForecaster = field(default_factory=AgcForecaster)
    commitments: CommitmentWindow | None = None
    steps_per_day: int = 96
    _controllers: dict = field(default_factory=dict, repr=False)
    _last_forecast: np.ndarray | None = field(default=None, repr=False)
    _last_u: float | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.commitments is None:
            self.commitments = CommitmentWindow.zeros(self.cfg.commit_steps)

    def controller(self, mode: Mode) -> IntradayController:
        mode = Mode.parse(mode)
        cfg = self.cfg if self.ess_only else self.cfg.for_mode(mode)
        pred = None if self.ess_only else self.bank.get(mode)
        key = mode if not self.ess_only else None
        ctrl = self._controllers.get(key)
        if ctrl is None:
            ctrl = self._controllers[key] = IntradayController(pred, cfg, self.ess_only)
        elif pred is not None:
            ctrl.set_predictor(pred)
        return ctrl


@dataclass
class CycleOutput:
    u: float | None
    p_int_now: float
    p_int_new: float
    result: IntradayResult
    flags: list
    update: UpdateResult | None = None


def run_controller_cycle(rt: ControllerRuntime, t: int, data: DataLog, w_forecast,
                         alpha_history, soc_t: float, p_bar, gamma: float,
                         mode: Mode = Mode.COOLING) -> CycleOutput:
    """One 15-minute cycle at global step ``t``.

    Refreshes the predictor of the active mode at the first step of a day,
    assembles the init windows from ``data``, falls back to a persistence
    weather forecast when ``w_forecast`` is None, forecasts the AGC signal
    from ``alpha_history`` (block means before ``t``), solves the robust
    problem and rolls the transaction commitments forward.
    """
    cfg, N = rt.cfg, rt.cfg.N
    flags: list[str] = []
    upd = None
    mode = Mode.parse(mode)
    if not rt.ess_only and t % rt.steps_per_day == 0 and t > 0:
        day_start = t - rt.steps_per_day
        try:
            upd = rt.bank.update(mode, data.segments(max(day_start, 0), t))
        except DataError as exc:
            log.warning("controller hankel update skipped: %s", exc)
            flags.append("update_error")

    if w_forecast is None:
        flags.append("forecast_fallback")
        if rt._last_forecast is not None:
            prev = rt._last_forecast
            w_forecast = np.vstack([prev[1:], prev[-1:]])
        else:
            w_forecast = np.repeat(data.w[-1:], N, axis=0)
    w_forecast = np.asarray(w_forecast, float).reshape(N, -1)
    rt._last_forecast = w_forecast
    a_bar = rt.forecaster(alpha_history, N)

    ctrl = rt.controller(mode)
    y_free = None
    if not rt.ess_only:
        y_init, u_init, w_init = data.init_windows(ctrl.pred.t_init)
        y_free = ctrl.pred.free_response(y_init, u_init, w_init)
        if ctrl.last_u is None:
            ctrl.last_u = rt._last_u
    res = ctrl.solve(y_free, w_forecast, a_bar, soc_t, p_bar, gamma, rt.commitments)
    if not res.ok:
        flags.append("solver_fallback")
    u = None if rt.ess_only else res.u_now
    if u is not None:
        rt._last_u = u
    p_now = rt.commitments.committed[0] if rt.commitments.committed else res.p_int_commit
    p_new = res.p_int_commit if res.ok else 0.0
    rt.commitments = rt.commitments.advance(p_new)
    return CycleOutput(u, p_now, p_new, res, flags, upd)
