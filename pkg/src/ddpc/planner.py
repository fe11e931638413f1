"""Day-ahead flexibility bidding over historical AGC scenarios.

The planner chooses one baseline ``P_bar`` and one flexibility ``gamma``
for the next day such that, for every historical AGC day ``j``, the
building and the battery can follow ``P_bar + P_int_hat_j + gamma*alpha_j``
within their limits.  Each scenario gets its own copy of the HP and battery
trajectories; the temperature of every copy comes from the same
data-driven predictor and the same weather forecast.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .data import DataError, DdpHyper, HankelSet
from .ddp import DdpPredictor, SolverError, UpdateResult, adaptive_update

log = logging.getLogger(__name__)

COMMIT_LEAD = 3  # transactions are fixed 45 minutes (3 steps) ahead


@dataclass(frozen=True)
class ScenarioSet:
    """``(n_scen, steps)`` AGC block means in ``[-1, 1]``."""

    alpha: np.ndarray
    tag: str = "synthetic"
    steps: int = 96

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha, float))
        if a.size == 0 or a.shape[0] == 0:
            raise ValueError("no scenarios")
        if a.shape[1] != self.steps:
            raise ValueError(f"scenarios have {a.shape[1]} steps, expected {self.steps}")
        if np.any(np.abs(a) > 1.0):
            raise ValueError("AGC scenario values must lie in [-1, 1]")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    def __len__(self) -> int:
        return self.alpha.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.alpha.mean(axis=0)

    def subset(self, n: int) -> "ScenarioSet":
        return ScenarioSet(self.alpha[:n], self.tag, self.steps)


@dataclass(frozen=True)
class SfcPlan:
    gamma: float
    baseline: np.ndarray
    status: str = "optimal"
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        b = np.asarray(self.baseline, float).reshape(-1).copy()
        b.setflags(write=False)
        object.__setattr__(self, "baseline", b)

    def check_bounds(self, p_min: float, p_max: float, tol: float = 1e-6) -> bool:
        return bool(np.all(self.baseline >= p_min - tol) and np.all(self.baseline <= p_max + tol))


def predict_intraday(alpha_j, alpha_mean, lead: int = COMMIT_LEAD) -> np.ndarray:
    """Intraday transactions that cancel the accumulated AGC energy.

    The first ``lead`` transactions are zero.  Each later one is the value
    that brings the estimated accumulated sum to zero, where the sum uses
    the realized signal up to ``lead + 1`` steps back and the scenario mean
    for the steps that are not yet known when the transaction is fixed.
    """
    a = np.asarray(alpha_j, float).reshape(-1)
    m = np.asarray(alpha_mean, float).reshape(-1)
    if a.shape != m.shape:
        raise ValueError("scenario and mean differ in length")
    n = a.size
    p = np.zeros(n)
    known = 0.0  # sum_{k <= i-lead-1} (p_k + a_k)
    for i in range(lead, n):
        if i - lead - 1 >= 0:
            known += p[i - lead - 1] + a[i - lead - 1]
        recent = np.sum(p[i - lead:i] + m[i - lead:i])
        p[i] = -(known + recent + m[i])
    return p


def accumulated_estimate(p, alpha_j, alpha_mean, i: int, lead: int = COMMIT_LEAD) -> float:
    """The sum that :func:`predict_intraday` drives to zero at step ``i``."""
    p, a, m = (np.asarray(x, float).reshape(-1) for x in (p, alpha_j, alpha_mean))
    k = max(i - lead, 0)
    return float(np.sum(p[:k] + a[:k]) + np.sum(p[k:i + 1] + m[k:i + 1]))


@dataclass(frozen=True)
class PlannerConfig:
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
    W_base: float = 0.0
    W_energy: float = 0.0
    W_ess: float = 0.0
    gamma_max: float | None = None
    ess_only: bool = False
    n_scen: int = 300
    backend: str = "highs"

    def __post_init__(self):
        for lo, hi in (("y_min", "y_max"), ("u_min", "u_max"),
                       ("soc_min", "soc_max"), ("pe_min", "pe_max")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo} must not exceed {hi}")
        if min(self.W_base, self.W_energy, self.W_ess, self.rho_slack) < 0:
            raise ValueError("weights must be nonnegative")
        if self.backend not in ("highs", "cvxpy"):
            raise ValueError(f"unknown planner backend {self.backend!r}")

    @property
    def gamma_cap(self) -> float:
        """Upper bound on the bid: half the combined power range by default.

        Without it the bid is unbounded whenever every scenario is flat.
        """
        if self.gamma_max is not None:
            return float(self.gamma_max)
        span = self.pe_max - self.pe_min
        if not self.ess_only:
            span += self.u_max - self.u_min
        return 0.5 * span


def plan_day_ahead(pred: DdpPredictor | None, y_init, u_init, w_init, w_forecast,
                   scenarios: ScenarioSet, soc_t: float, cfg: PlannerConfig = PlannerConfig(),
                   p_prev=None) -> SfcPlan:
    """Maximize the flexibility bid over all scenarios.

    ``pred`` must have the planning horizon (e.g. 96 steps); it is ignored
    when ``cfg.ess_only``.  Temperature and SoC bounds are soft, HP and
    battery power bounds are hard.  ``p_prev`` activates the ``W_base``
    pull of every scenario's total power toward the previous baseline.

    The linear case is assembled as a sparse LP and handed to HiGHS; the
    quadratic case (or ``cfg.backend == "cvxpy"``) goes through cvxpy.
    """
    if len(scenarios) == 0:
        raise ValueError("no scenarios")
    N = scenarios.steps
    S = len(scenarios)
    alpha = scenarios.alpha
    mean = scenarios.mean
    p_hat = np.vstack([predict_intraday(alpha[j], mean) for j in range(S)])
    signal = p_hat + alpha  # scaled by gamma: the intraday correction is homogeneous
    y0 = P_u = None
    if not cfg.ess_only:
        if pred is None or pred.N != N:
            raise ValueError("planner needs a predictor with the scenario horizon")
        y0 = pred.free_response(y_init, u_init, w_init) + pred.P_w_pred @ np.asarray(
            w_forecast, float).reshape(-1)
        P_u = np.asarray(pred.P_u_pred)
    quadratic = cfg.W_base > 0 and p_prev is not None
    if quadratic or cfg.backend == "cvxpy":
        return _plan_cvxpy(P_u, y0, signal, float(soc_t), cfg, p_prev if quadratic else None)
    return _plan_lp(P_u, y0, signal, float(soc_t), cfg)


def _plan_lp(P_u, y0, signal, soc_t, cfg: PlannerConfig) -> SfcPlan:
    """Sparse LP over ``[gamma, P_bar, (u_j, pe+_j, pe-_j, slack_y_j, slack_soc_j)_j]``.

    The battery power is split into charging and discharging parts so the
    throughput weight ``W_ess`` stays linear.
    """
    S, N = signal.shape
    ess_only = cfg.ess_only
    blocks = ("pp", "pn", "ss") if ess_only else ("u", "pp", "pn", "sy", "ss")
    nb = len(blocks)
    nv = 1 + N + S * nb * N
    r = np.arange(N)

    def col(j, name):
        return 1 + N + (j * nb + blocks.index(name)) * N

    def sel(j, name):
        return sp.csr_matrix((np.ones(N), (r, col(j, name) + r)), shape=(N, nv))

    c = np.zeros(nv)
    c[0] = -1.0
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    ub[0] = cfg.gamma_cap
    lb[1:1 + N] = -np.inf
    L = sp.csr_matrix(cfg.dt_h * np.tril(np.ones((N, N))))
    Pu = None if ess_only else sp.csr_matrix(P_u)
    A_eq, A_ub, b_ub = [], [], []
    for j in range(S):
        # u_j + pe_j - P_bar - gamma*signal_j = 0
        cols = [np.zeros(N, int), 1 + r, col(j, "pp") + r, col(j, "pn") + r]
        vals = [-signal[j], -np.ones(N), np.ones(N), -np.ones(N)]
        if not ess_only:
            cols.append(col(j, "u") + r)
            vals.append(np.ones(N))
        A_eq.append(sp.csr_matrix((np.concatenate(vals), (np.tile(r, len(cols)),
                                                          np.concatenate(cols))), shape=(N, nv)))
        pp, pn = col(j, "pp"), col(j, "pn")
        ub[pp:pp + N], ub[pn:pn + N] = cfg.pe_max, -cfg.pe_min
        c[pp:pp + N] = c[pn:pn + N] = cfg.W_ess * cfg.dt_h / S
        soc = L @ (sel(j, "pp") - sel(j, "pn"))
        A_ub += [soc - sel(j, "ss"), -soc - sel(j, "ss")]
        b_ub += [np.full(N, cfg.soc_max - soc_t), np.full(N, soc_t - cfg.soc_min)]
        c[col(j, "ss"):col(j, "ss") + N] = cfg.rho_slack
        if not ess_only:
            u = col(j, "u")
            lb[u:u + N], ub[u:u + N] = cfg.u_min, cfg.u_max
            c[u:u + N] = cfg.W_energy * cfg.dt_h / S
            y = Pu @ sel(j, "u")
            A_ub += [y - sel(j, "sy"), -y - sel(j, "sy")]
            b_ub += [cfg.y_max - y0, y0 - cfg.y_min]
            c[col(j, "sy"):col(j, "sy") + N] = cfg.rho_slack
    res = linprog(c, A_ub=sp.vstack(A_ub, format="csr"), b_ub=np.concatenate(b_ub),
                  A_eq=sp.vstack(A_eq, format="csr"), b_eq=np.zeros(S * N),
                  bounds=np.column_stack([lb, ub]), method="highs")
    if res.status != 0:
        raise SolverError(f"day-ahead planner failed: {res.message}")
    x = res.x
    sl = lambda name: sum(x[col(j, name):col(j, name) + N].sum() for j in range(S))
    diag = {"slack_soc": float(sl("ss")), "objective": float(res.fun), "n_scen": S}
    if not ess_only:
        diag["slack_y"] = float(sl("sy"))
    return SfcPlan(max(float(x[0]), 0.0), x[1:1 + N], "optimal", diag)


def _plan_cvxpy(P_u, y0, signal, soc_t, cfg: PlannerConfig, p_prev) -> SfcPlan:
    S, N = signal.shape
    gamma = cp.Variable(nonneg=True, name="gamma")
    p_bar = cp.Variable(N, name="baseline")
    PE = cp.Variable((S, N), name="p_ess")
    s_soc = cp.Variable((S, N), nonneg=True)
    L = cfg.dt_h * np.tril(np.ones((N, N)))
    soc = soc_t + PE @ L.T
    cons = [gamma <= cfg.gamma_cap, PE >= cfg.pe_min, PE <= cfg.pe_max,
            soc <= cfg.soc_max + s_soc, soc >= cfg.soc_min - s_soc]
    J = -gamma + cfg.rho_slack * cp.sum(s_soc) + cfg.W_ess * cfg.dt_h * cp.sum(cp.abs(PE)) / S
    if cfg.ess_only:
        total = PE
    else:
        U = cp.Variable((S, N), name="u")
        s_y = cp.Variable((S, N), nonneg=True)
        Y = np.ones((S, 1)) @ y0[None, :] + U @ P_u.T
        cons += [U >= cfg.u_min, U <= cfg.u_max,
                 Y <= cfg.y_max + s_y, Y >= cfg.y_min - s_y]
        J = J + cfg.rho_slack * cp.sum(s_y) + cfg.W_energy * cfg.dt_h * cp.sum(U) / S
        total = U + PE
    cons.append(total == np.ones((S, 1)) @ cp.reshape(p_bar, (1, N), order="C")
                + gamma * signal)
    if p_prev is not None:
        pp = np.asarray(p_prev, float).reshape(1, N)
        J = J + cfg.W_base * cp.sum_squares(total - np.ones((S, 1)) @ pp)

    prob = cp.Problem(cp.Minimize(J), cons)
    try:
        prob.solve(solver="CLARABEL")
    except cp.error.SolverError as exc:
        raise SolverError(f"day-ahead planner failed: {exc}") from exc
    if prob.status not in ("optimal", "optimal_inaccurate") or gamma.value is None:
        raise SolverError(f"day-ahead planner failed: {prob.status}")
    diag = {"slack_soc": float(s_soc.value.sum()), "objective": float(prob.value),
            "n_scen": S}
    if not cfg.ess_only:
        diag["slack_y"] = float(s_y.value.sum())
    return SfcPlan(max(float(gamma.value), 0.0), np.asarray(p_bar.value, float),
                   prob.status, diag)


@dataclass
class PlannerState:
    predictor: DdpPredictor | None
    hankel: HankelSet | None
    hyper: DdpHyper | None
    p_prev: np.ndarray | None = None


def run_planner_cycle(state: PlannerState, new_segments, init_windows, w_forecast,
                      scenarios: ScenarioSet, soc_t: float,
                      cfg: PlannerConfig = PlannerConfig()) -> tuple[SfcPlan, UpdateResult | None]:
    """Nightly planning step.

    Refreshes the Hankel data (a rejected update keeps the previous
    predictor), then solves the scenario problem with the given init windows
    ``(y_init, u_init, w_init)`` and publishes the plan.
    """
    if len(scenarios) == 0:
        raise ValueError("no scenarios")
    upd = None
    if not cfg.ess_only and state.predictor is not None and new_segments:
        try:
            upd = adaptive_update(state.predictor, state.hankel, new_segments, state.hyper)
        except DataError as exc:
            log.warning("planner hankel update skipped: %s", exc)
        else:
            if upd.accepted:
                state.predictor, state.hankel = upd.predictor, upd.hankel
            else:
                log.info("planner hankel update rejected: %s", ",".join(upd.reasons))
    y_init, u_init, w_init = init_windows if init_windows is not None else (None,) * 3
    plan = plan_day_ahead(state.predictor, y_init, u_init, w_init, w_forecast, scenarios,
                          soc_t, cfg, state.p_prev)
    state.p_prev = plan.baseline
    return plan, upd


def write_plan(plan: SfcPlan, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["gamma_kw", repr(float(plan.gamma))])
        wr.writerow(["step", "baseline_kw"])
        for k, b in enumerate(plan.baseline):
            wr.writerow([k, repr(float(b))])


def read_plan(path: str | Path) -> SfcPlan:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"plan file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0] != "gamma_kw" or rows[1] != ["step", "baseline_kw"]:
        raise DataError(f"{path}: not a plan file")
    gamma = float(rows[0][1])
    base = [float(r[1]) for r in rows[2:]]
    return SfcPlan(gamma, np.array(base))
