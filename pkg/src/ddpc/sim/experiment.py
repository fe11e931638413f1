"""Closed-loop two-timescale experiment.

Three scenarios share the same weather, AGC trace, plant noise and warm-up:

* ``A``: the full stack.  The day-ahead planner bids ``(gamma, P_bar)`` for
  building plus battery, the robust controller sets the HP every 15 minutes
  and the battery closes the remaining gap every 4 seconds.
* ``B``: the default thermostat runs the building; the battery alone offers
  flexibility with its own planner and controller.
* ``C``: thermostat only, no battery and no market participation.

Every day ``d`` is preceded by a plan made after the last step of day
``d - 1``.  The first ``warmup_days`` excite the plant with random HP inputs
to collect the initial Hankel data; they are not billed.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..controller import (ControllerConfig, ControllerRuntime, PredictorBank,
                          ess_track, run_controller_cycle)
from ..data import DataLog, DdpHyper, Mode
from ..ddp import initial_predictor
from ..planner import PlannerConfig, PlannerState, ScenarioSet, SfcPlan, run_planner_cycle
from .comfort import comfort_metrics
from .ess import FINE_DT_S, EssParams, EssState
from .market import MarketLedger, MarketPrices
from .plant import HP_LIMITS, PlantModel, PlantState, step_plant
from .signals import (FINE_PER_STEP, STEPS_PER_DAY, AgcForecaster, AgcParams,
                      WeatherParams, WeatherSource, agc_scenarios, day_rng, gen_agc)
from .thermostat import ModeScheduler, Thermostat

log = logging.getLogger(__name__)

SCENARIOS = ("A", "B", "C")
_DT_FINE_H = FINE_DT_S / 3600.0


@dataclass
class StepLog:
    """15-minute actuation record; fine-grained arrays only with ``fine_log``."""

    t: list = field(default_factory=list)
    u_setpoint: list = field(default_factory=list)
    p_h: list = field(default_factory=list)
    p_e: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    track_err: list = field(default_factory=list)
    soc: list = field(default_factory=list)
    y: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    fine: list = field(default_factory=list)

    def add(self, t, u, p_h, p_e, alpha, err, soc, y, mode):
        self.t.append(t)
        self.u_setpoint.append(u)
        self.p_h.append(p_h)
        self.p_e.append(p_e)
        self.alpha.append(alpha)
        self.track_err.append(err)
        self.soc.append(soc)
        self.y.append(y)
        self.mode.append(mode)


@dataclass
class ScenarioResult:
    name: str
    ledgers: list
    steps: StepLog
    daily_ppd: np.ndarray
    flags: dict
    plans: list
    soc_range: tuple
    runtime_s: float

    @property
    def mean_cost(self) -> float:
        return float(np.mean([lg.total for lg in self.ledgers]))

    @property
    def mean_ppd(self) -> float:
        return float(np.mean(self.daily_ppd))

    def summary(self) -> dict:
        rows = [lg.row() for lg in self.ledgers]
        keys = ("energy_chf", "reward_chf", "penalty_chf", "amortization_chf", "total_chf",
                "gamma_kw", "energy_kwh", "tracking_error_kwh")
        out = {k: float(np.mean([r[k] for r in rows])) for k in keys}
        out["mean_ppd"] = self.mean_ppd
        out["max_daily_ppd"] = float(np.max(self.daily_ppd))
        out["degraded_days"] = sum(1 for v in self.flags.values() if v)
        return out


@dataclass
class ExperimentResult:
    config: RunConfig
    scenarios: dict
    runtime_s: float

    def summary(self) -> dict:
        return {k: r.summary() for k, r in self.scenarios.items()}


# --- setup -----------------------------------------------------------------

def build_plant(cfg: RunConfig) -> PlantModel:
    return PlantModel.thermal(**vars(cfg.plant))


def weather_params(cfg: RunConfig, winter: bool = False) -> WeatherParams:
    w = vars(cfg.weather).copy()
    offset = w.pop("winter_offset")
    if winter:
        w["t_mean"] += offset
    r = cfg.controller.w_radius
    return WeatherParams(**w, err_temp=r[0], err_solar=r[1])


def controller_config(cfg: RunConfig) -> ControllerConfig:
    c, b = cfg.controller, cfg.bounds
    return ControllerConfig(N=c.N, W_u=c.W_u, W_P=c.W_P, W_SoC=c.W_SoC,
                            w_radius=tuple(c.w_radius), a_radius=c.a_radius,
                            y_min=b.y[0], y_max=b.y[1], u_min=b.u[0], u_max=b.u[1],
                            soc_min=b.soc[0], soc_max=b.soc[1],
                            pe_min=b.p_ess[0], pe_max=b.p_ess[1], rho_slack=b.rho_slack)


def planner_config(cfg: RunConfig, mode: Mode, ess_only: bool) -> PlannerConfig:
    p, b, m = cfg.planner, cfg.bounds, cfg.market
    lo, hi = HP_LIMITS[mode]
    w_energy = m.tariff / m.c_bid if p.W_energy is None else p.W_energy
    w_ess = m.tariff * (1 - cfg.ess.efficiency) / m.c_bid if p.W_ess is None else p.W_ess
    return PlannerConfig(y_min=b.y[0], y_max=b.y[1], u_min=max(b.u[0], lo),
                         u_max=min(b.u[1], hi), soc_min=b.soc[0], soc_max=b.soc[1],
                         pe_min=b.p_ess[0], pe_max=b.p_ess[1], rho_slack=b.rho_slack,
                         W_base=p.W_base, W_energy=w_energy, W_ess=w_ess,
                         gamma_max=p.gamma_max,
                         ess_only=ess_only, n_scen=p.n_scen)


def ess_params(cfg: RunConfig) -> EssParams:
    b = cfg.bounds
    return EssParams(capacity=cfg.ess.capacity, soc_min=b.soc[0], soc_max=b.soc[1],
                     p_min=b.p_ess[0], p_max=b.p_ess[1], efficiency=cfg.ess.efficiency)


def controller_hyper(cfg: RunConfig) -> DdpHyper:
    c = cfg.controller
    return DdpHyper(c.T, c.t_init, c.N, c.e_g, cfg.ddp.n_x, cfg.ddp.eta)


def planner_hyper(cfg: RunConfig) -> DdpHyper:
    p = cfg.planner
    return DdpHyper(p.T, p.t_init, p.N, p.e_g, cfg.ddp.n_x, cfg.ddp.eta)


@dataclass
class WarmStart:
    """Shared state at the end of the excitation period."""

    data: DataLog
    plant_state: PlantState
    predictors: dict       # (role, mode) -> (DdpPredictor, HankelSet)
    start_step: int


def _excite(model: PlantModel, weather: WeatherSource, days: int, mode: Mode,
            rng: np.random.Generator, data: DataLog, state: PlantState, start: int = 0):
    lo, hi = HP_LIMITS[mode]
    state.mode = mode
    for g in range(start, start + days * STEPS_PER_DAY):
        u = rng.uniform(lo, hi)
        state.day = g // STEPS_PER_DAY
        state, y, p_h = step_plant(model, state, u, weather.truth(g)[0])
        data.append(p_h, weather.truth(g)[0], y, mode)
    return state


def warm_up(cfg: RunConfig, model: PlantModel, weather: WeatherSource) -> WarmStart:
    """Random-input excitation and initial predictors for every role and mode."""
    W = cfg.warmup_days
    rng = day_rng(cfg.seed, 0, 5)
    x0 = model.steady_state(4.0, weather.truth(0)[0], Mode.COOLING)
    state = PlantState(x0, 0.0, Mode.COOLING, np.random.default_rng([cfg.seed, 7]))
    data = DataLog(n_w=2, capacity=(W + cfg.days + 1) * STEPS_PER_DAY)
    state = _excite(model, weather, W, Mode.COOLING, rng, data, state)
    segs = data.segments()
    preds = {}
    for role, hyper in (("controller", controller_hyper(cfg)), ("planner", planner_hyper(cfg))):
        preds[(role, Mode.COOLING)] = initial_predictor(segs, hyper, Mode.COOLING)

    if cfg.mode.scheduler:
        # heating data from a separate cold-season excitation; this set stays frozen
        winter = WeatherSource(cfg.seed + 1, weather_params(cfg, winter=True))
        hdata = DataLog(n_w=2, capacity=W * STEPS_PER_DAY)
        hstate = PlantState(model.steady_state(4.0, winter.truth(0)[0], Mode.HEATING),
                            0.0, Mode.HEATING, np.random.default_rng([cfg.seed, 8]))
        _excite(model, winter, W, Mode.HEATING, day_rng(cfg.seed, 0, 6), hdata, hstate)
        hsegs = hdata.segments()
        for role, hyper in (("controller", controller_hyper(cfg)),
                            ("planner", planner_hyper(cfg))):
            preds[(role, Mode.HEATING)] = initial_predictor(hsegs, hyper, Mode.HEATING)
    return WarmStart(data, state, preds, W * STEPS_PER_DAY)


# --- one scenario ------------------------------------------------------------

class _Env:
    """Exogenous signals shared by all scenarios."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.weather = WeatherSource(cfg.seed, weather_params(cfg))
        self.agc_params = AgcParams(**vars(cfg.agc))
        self._agc: dict = {}
        n_lib = cfg.planner.library_size or 2 * cfg.planner.n_scen
        self.library = agc_scenarios(cfg.seed, n_lib, self.agc_params)
        self.alpha_steps = np.zeros((cfg.warmup_days + cfg.days + 1) * STEPS_PER_DAY)

    def agc(self, day: int):
        if day not in self._agc:
            a = self._agc[day] = gen_agc(self.cfg.seed, day, self.agc_params)
            self.alpha_steps[day * STEPS_PER_DAY:(day + 1) * STEPS_PER_DAY] = a.steps
        return self._agc[day]

    def scenarios(self, day: int) -> ScenarioSet:
        n = min(self.cfg.planner.n_scen, len(self.library))
        idx = day_rng(self.cfg.seed, day, 4).choice(len(self.library), n, replace=False)
        return ScenarioSet(self.library[np.sort(idx)], tag=f"library-day{day}")


def _baseline_window(plan_today: np.ndarray, k: int, N: int) -> np.ndarray:
    """``P_bar`` over ``k..k+N-1``, padded past midnight with the last value."""
    out = plan_today[k:k + N]
    if out.size < N:
        out = np.concatenate([out, np.full(N - out.size, plan_today[-1])])
    return out


def run_scenario(name: str, cfg: RunConfig, env: _Env, warm: WarmStart,
                 model: PlantModel) -> ScenarioResult:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}")
    t_start = time.perf_counter()
    market = name in ("A", "B")
    ess_only = name == "B"
    building_ctrl = name == "A"

    data = copy.deepcopy(warm.data)
    pstate = copy.deepcopy(warm.plant_state)
    prices = MarketPrices(**vars(cfg.market))
    eparams = ess_params(cfg)
    soc = EssState(cfg.ess.soc0)
    soc_lo = soc_hi = soc.soc
    thermostat = Thermostat(cfg.thermostat.setpoint, cfg.thermostat.hysteresis)
    scheduler = ModeScheduler(cfg.mode.threshold, cfg.mode.delay_steps, cfg.mode.scheduler)
    ccfg = controller_config(cfg)

    rt = planners = None
    if market:
        bank = None
        if building_ctrl:
            preds = {m: warm.predictors[("controller", m)][0] for r, m in warm.predictors
                     if r == "controller"}
            hankels = {m: warm.predictors[("controller", m)][1] for r, m in warm.predictors
                       if r == "controller"}
            bank = PredictorBank(preds, hankels, controller_hyper(cfg),
                                 frozen={Mode.HEATING})
        fc = AgcForecaster(cfg.controller.forecast_window, cfg.controller.forecast_decay)
        rt = ControllerRuntime(ccfg, bank, ess_only=ess_only, forecaster=fc)
        planners = {}
        for (role, m), (pred, H) in warm.predictors.items():
            if role == "planner":
                planners[m] = PlannerState(pred if building_ctrl else None,
                                           H if building_ctrl else None,
                                           planner_hyper(cfg) if building_ctrl else None)
        if not building_ctrl:
            planners = {Mode.COOLING: PlannerState(None, None, None)}

    def make_plan(g_next: int, mode: Mode, new_segments) -> SfcPlan:
        day = g_next // STEPS_PER_DAY
        pmode = mode if mode in planners else Mode.COOLING
        state = planners[pmode]
        pcfg = planner_config(cfg, pmode, ess_only)
        init = data.init_windows(cfg.planner.t_init) if building_ctrl else None
        w_fc = env.weather.forecast(g_next, cfg.planner.N) if building_ctrl else None
        plan, upd = run_planner_cycle(state, new_segments if pmode is Mode.COOLING else [],
                                      init, w_fc, env.scenarios(day), soc.soc, pcfg)
        if upd is not None and not upd.accepted:
            log.info("day %d planner update rejected: %s", day, ",".join(upd.reasons))
        return plan

    steps = StepLog()
    ledgers, plans, flags = [], [], {}
    first = warm.start_step // STEPS_PER_DAY
    plan = make_plan(warm.start_step, Mode.COOLING, []) if market else None
    for d in range(first, first + cfg.days):
        agc = env.agc(d)
        env.agc(d - 1)
        ledger = MarketLedger(day=d - first, prices=prices, has_battery=market,
                              capacity_kwh=cfg.ess.capacity, market=market)
        day_flags: list[str] = []
        if market:
            ledger.gamma = plan.gamma
            plans.append(plan)
        for k in range(STEPS_PER_DAY):
            g = d * STEPS_PER_DAY + k
            mode = scheduler(float(data.w[-1, 0]))
            pstate.mode = mode
            p_int_now = 0.0
            if building_ctrl:
                out = run_controller_cycle(
                    rt, g, data, env.weather.forecast(g, ccfg.N),
                    env.alpha_steps[max(g - 96, 0):g], soc.soc,
                    _baseline_window(plan.baseline, k, ccfg.N), plan.gamma, mode)
                u_set = out.u
                p_int_now = out.p_int_now
                day_flags += out.flags
            else:
                u_set = thermostat(float(data.y[-1]), mode)
                if ess_only:
                    out = run_controller_cycle(
                        rt, g, data, env.weather.forecast(g, ccfg.N),
                        env.alpha_steps[max(g - 96, 0):g], soc.soc,
                        _baseline_window(plan.baseline, k, ccfg.N), plan.gamma, mode)
                    p_int_now = out.p_int_now
                    day_flags += out.flags

            w_true = env.weather.truth(g)[0]
            pstate.day = d
            pstate, y, p_h = step_plant(model, pstate, u_set, w_true)

            # 4-second battery loop over this interval
            e_kwh = p_h * 0.25
            pe_sum = err_sum = 0.0
            if market:
                fine = agc.fine[k * FINE_PER_STEP:(k + 1) * FINE_PER_STEP]
                p_bar_k = float(plan.baseline[k])
                p_h_seen = 0.0 if ess_only else p_h
                fine_pe = np.empty(FINE_PER_STEP) if cfg.fine_log else None
                for i, a in enumerate(fine):
                    tr = ess_track(p_bar_k, p_int_now, plan.gamma, float(a), p_h_seen,
                                   soc, eparams)
                    soc = tr.state
                    pe_sum += tr.p_e
                    err_sum += abs(tr.error)
                    if fine_pe is not None:
                        fine_pe[i] = tr.p_e
                    soc_lo = min(soc_lo, soc.soc)
                    soc_hi = max(soc_hi, soc.soc)
                e_kwh += pe_sum * _DT_FINE_H
                ledger.add_tracking_error(err_sum * _DT_FINE_H)
                if fine_pe is not None:
                    steps.fine.append(fine_pe)
            ledger.add_energy(e_kwh)
            data.append(p_h, w_true, y, mode)
            steps.add(g, u_set, p_h, pe_sum / FINE_PER_STEP, float(env.alpha_steps[g]),
                      err_sum / FINE_PER_STEP, soc.soc, y, mode.code)

        if market and d + 1 < first + cfg.days:
            g_next = (d + 1) * STEPS_PER_DAY
            try:
                plan = make_plan(g_next, mode, data.segments(g_next - STEPS_PER_DAY, g_next))
            except Exception as exc:  # keep bidding yesterday's plan
                log.warning("day %d planning failed (%s); reusing previous plan", d + 1, exc)
                day_flags.append("planner_fallback")
        ledgers.append(ledger)
        flags[d - first] = sorted(set(day_flags))
        log.info("scenario %s day %d: total %.3f CHF gamma %.2f", name, d - first,
                 ledger.total, ledger.gamma)

    _, _, daily_ppd = comfort_metrics(steps.y)
    return ScenarioResult(name, ledgers, steps, daily_ppd, flags, plans, (soc_lo, soc_hi),
                          time.perf_counter() - t_start)


def run_experiment(cfg: RunConfig, scenarios=None) -> ExperimentResult:
    """Run the selected scenarios on identical weather, AGC and plant noise."""
    t0 = time.perf_counter()
    names = list(scenarios or cfg.scenarios)
    model = build_plant(cfg)
    env = _Env(cfg)
    warm = warm_up(cfg, model, env.weather)
    results = {n: run_scenario(n, cfg, env, warm, model) for n in names}
    return ExperimentResult(cfg, results, time.perf_counter() - t0)


# --- outputs -----------------------------------------------------------------

LEDGER_FIELDS = ("scenario", "day", "energy_kwh", "energy_chf", "reward_chf", "penalty_chf",
                 "amortization_chf", "total_chf", "gamma_kw", "tracking_error_kwh",
                 "mean_ppd", "flags")
ACTUATION_FIELDS = ("t", "u_setpoint_kw", "p_h_kw", "p_e_kw", "alpha", "track_err_kw",
                    "soc_kwh", "y_c", "mode")


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> dict:
    """Ledger CSV, one actuation CSV per scenario and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"ledger": "ledger.csv", "manifest": "manifest.json"}
    with open(out / "ledger.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, LEDGER_FIELDS)
        wr.writeheader()
        for name, r in result.scenarios.items():
            for lg, ppd in zip(r.ledgers, r.daily_ppd):
                wr.writerow({"scenario": name, **lg.row(), "mean_ppd": float(ppd),
                             "flags": ";".join(r.flags.get(lg.day, []))})
    for name, r in result.scenarios.items():
        fname = f"actuation_{name}.csv"
        files[f"actuation_{name}"] = fname
        s = r.steps
        with open(out / fname, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(ACTUATION_FIELDS)
            for row in zip(s.t, s.u_setpoint, s.p_h, s.p_e, s.alpha, s.track_err, s.soc,
                           s.y, s.mode):
                wr.writerow(row)
        if s.fine:
            fname = f"fine_pe_{name}.csv"
            files[f"fine_{name}"] = fname
            np.savetxt(out / fname, np.concatenate(s.fine), delimiter=",",
                       header="p_e_kw", comments="")
    manifest = {
        "config": result.config.to_dict(),
        "fingerprint": result.config.fingerprint(),
        "seed": result.config.seed,
        "scenarios": list(result.scenarios),
        "summary": result.summary(),
        "runtime_s": result.runtime_s,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return files
