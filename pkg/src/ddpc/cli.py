"""Command-line entry point: ``ddpc {predict,sweep,plan,simulate,report}``.

Exit codes: 0 success, 1 usage (or a failed ``--assert-plateau``), 2 data or
configuration error, 3 solver error.  ``DDPC_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data import DataError, DdpHyper, Mode, read_dataset
from .ddp import SolverError

log = logging.getLogger("ddpc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
PLATEAU_LIMIT = 1.2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- predict -----------------------------------------------------------------

def cmd_predict(args) -> int:
    from .evaluate import mae_eval

    cfg = _load(args)
    dataset = read_dataset(args.data)
    c = cfg.controller
    mode = Mode.parse(args.mode)
    segs = dataset.for_mode(mode)
    if not segs:
        raise DataError(f"{args.data}: no {mode.value} data")
    seg = max(segs, key=len)
    hyper = DdpHyper(c.T, c.t_init, c.N, c.e_g, cfg.ddp.n_x, cfg.ddp.eta)
    if len(seg) < c.T + c.N + 1:
        raise DataError(f"{args.data}: longest {mode.value} segment has {len(seg)} samples, "
                        f"need more than T + N = {c.T + c.N}")
    from .data import OperationalDataset, OperationalSegment
    local = OperationalSegment(0, seg.u, seg.w, seg.y, seg.mode)
    res = mae_eval(OperationalDataset([local]), hyper, (c.T, len(seg)), args.adaptive,
                   (0, c.T), keep_predictions=True)
    out = _out_dir(args, "predict_out")
    with open(out / "predictions.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "step", "y_pred", "y_true", "abs_err"])
        for s, yp, yt in zip(res.starts, res.y_pred, res.y_true):
            t0 = seg.start_index + int(s)
            for k in range(len(yp)):
                wr.writerow([t0 + k, k + 1, repr(float(yp[k])), repr(float(yt[k])),
                             repr(float(abs(yp[k] - yt[k])))])
    if args.adaptive:
        with open(out / "updates.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "accepted", "reasons"])
            for t, ok, reasons in res.updates:
                wr.writerow([seg.start_index + t, int(ok), ";".join(reasons)])
    print(f"MAE over {res.n_windows} windows of {c.N} steps: {res.mae:.4f} degC"
          f" ({'adaptive' if args.adaptive else 'fixed'})")
    if args.adaptive:
        acc = sum(1 for u in res.updates if u[1])
        print(f"hankel updates accepted: {acc}/{len(res.updates)}")
    return EXIT_OK


# --- sweep -------------------------------------------------------------------

def cmd_sweep(args) -> int:
    from .evaluate import (Split, SweepGrid, heatmap, plateau_ratio, sensitivity_sweep,
                           synthetic_dataset, write_sweep)

    cfg = _load(args)
    sw = cfg.sweep
    try:
        grid = SweepGrid(tuple(sw.e_g), tuple(sw.T), tuple(sw.t_init), tuple(sw.N))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    build_days = math.ceil(max(grid.T) / 96)
    dataset = (read_dataset(args.data) if args.data else
               synthetic_dataset(sw.days, cfg.seed, sw.drift_rate, cfg.plant.sigma_y))
    split = Split.by_days(dataset.n_samples, build_days, 10)
    rows = sensitivity_sweep(grid, dataset, split, cfg.ddp.n_x)
    if not rows:
        raise DataError("no sweep point fits the build data")
    out = _out_dir(args, "sweep_out")
    write_sweep(rows, out / "sweep.csv")
    for N in grid.N:
        for t_init in grid.t_init:
            rv, cv, M = heatmap(rows, "T", "e_g", "mae_validation", N=N, t_init=t_init)
            with open(out / f"heatmap_N{N}_tinit{t_init}.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["T\\e_g"] + [repr(float(c)) for c in cv])
                for r, vals in zip(rv, M):
                    wr.writerow([r] + [repr(float(v)) for v in vals])
    worst = 0.0
    for N in grid.N:
        for t_init in grid.t_init:
            for T in grid.T:
                sel = [r for r in rows if (r["N"], r["t_init"], r["T"]) == (N, t_init, T)]
                if sel:
                    ratio = plateau_ratio(sel)
                    worst = max(worst, ratio)
                    print(f"N={N} t_init={t_init} T={T}: max/min validation MAE over e_g "
                          f"= {ratio:.3f}")
    if args.assert_plateau and worst > PLATEAU_LIMIT:
        print(f"plateau assertion failed: {worst:.3f} > {PLATEAU_LIMIT}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


# --- plan --------------------------------------------------------------------

def cmd_plan(args) -> int:
    from .planner import plan_day_ahead, write_plan
    from .sim.experiment import _Env, build_plant, planner_config, warm_up

    cfg = _load(args)
    model = build_plant(cfg)
    env = _Env(cfg)
    warm = warm_up(cfg, model, env.weather)
    pred, _ = warm.predictors[("planner", Mode.COOLING)]
    pcfg = planner_config(cfg, Mode.COOLING, args.ess_only)
    y_i, u_i, w_i = warm.data.init_windows(cfg.planner.t_init)
    day = warm.start_step // 96
    plan = plan_day_ahead(None if args.ess_only else pred, y_i, u_i, w_i,
                          env.weather.forecast(warm.start_step, cfg.planner.N),
                          env.scenarios(day), cfg.ess.soc0, pcfg)
    out = _out_dir(args, "plan_out")
    write_plan(plan, out / "plan.csv")
    print(f"gamma = {plan.gamma:.4f} kW, mean baseline = {plan.baseline.mean():.4f} kW "
          f"({len(env.scenarios(day))} scenarios)")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .sim.experiment import run_experiment, write_outputs

    cfg = _load(args)
    overrides = {}
    if args.scenario:
        overrides["scenarios"] = args.scenario
    if args.days is not None:
        overrides["days"] = args.days
    if overrides:
        cfg = replace(cfg, **overrides)
    result = run_experiment(cfg)
    out = _out_dir(args, "sim_out")
    write_outputs(result, out)
    print(_summary_table(result.summary()))
    print(f"\nruntime {result.runtime_s:.1f} s, outputs in {out}")
    return EXIT_OK


def _summary_table(summary: dict) -> str:
    cols = ("energy_chf", "reward_chf", "penalty_chf", "amortization_chf", "total_chf",
            "gamma_kw", "mean_ppd")
    lines = ["| scenario | " + " | ".join(cols) + " |",
             "|---|" + "---|" * len(cols)]
    for name, s in summary.items():
        lines.append(f"| {name} | " + " | ".join(f"{s[c]:.3f}" for c in cols) + " |")
    return "\n".join(lines)


# --- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    run = Path(args.run_dir)
    ledger = run / "ledger.csv"
    if not run.is_dir() or not ledger.exists():
        raise DataError(f"{run}: not a simulation run directory (ledger.csv missing)")
    with open(ledger, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{ledger}: empty ledger")
    out = _out_dir(args, str(run))
    scen = sorted({r["scenario"] for r in rows})
    with open(out / "cost_stack.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "day", "power_cost_chf", "bid_reward_chf", "penalty_chf",
                     "amortization_chf", "total_chf"])
        for r in rows:
            wr.writerow([r["scenario"], r["day"], r["energy_chf"],
                         repr(-float(r["reward_chf"]) + 0.0), r["penalty_chf"],
                         r["amortization_chf"], r["total_chf"]])
    with open(out / "ppd_cost.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "day", "mean_ppd", "total_chf"])
        for r in rows:
            wr.writerow([r["scenario"], r["day"], r["mean_ppd"], r["total_chf"]])
    summary = {}
    for s in scen:
        sel = [r for r in rows if r["scenario"] == s]
        summary[s] = {k: float(np.mean([float(r[k]) for r in sel]))
                      for k in ("energy_chf", "reward_chf", "penalty_chf", "amortization_chf",
                                "total_chf", "gamma_kw")}
        summary[s]["mean_ppd"] = float(np.mean([float(r["mean_ppd"]) for r in sel]))
    lines = [f"# Simulation report: {run.name}", ""]
    manifest = run / "manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text())
        lines += [f"config fingerprint `{m.get('fingerprint')}`, seed {m.get('seed')}, "
                  f"{len(rows) // len(scen)} days", ""]
    lines += ["## Mean daily cost and comfort", "", _summary_table(summary), ""]
    if "C" in summary:
        ref = summary["C"]["total_chf"]
        lines += ["## Savings against thermostat-only operation (C)", ""]
        for s in scen:
            if s != "C" and ref:
                lines.append(f"- {s}: {100 * (ref - summary[s]['total_chf']) / ref:.2f} %")
        lines.append("")
    lines += ["Plot data: `cost_stack.csv` (daily cost components), "
              "`ppd_cost.csv` (daily PPD against total cost).", ""]
    (out / "report.md").write_text("\n".join(lines))
    print("\n".join(lines))
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory")

    p = _Parser(prog="ddpc", description="Adaptive data-driven prediction and SFC stack")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("predict", parents=[common], help="rolling prediction on a CSV")
    sp.add_argument("data", help="CSV with header t,u,w1,w2,y,mode")
    sp.add_argument("--adaptive", action="store_true", help="refresh the Hankel data daily")
    sp.add_argument("--mode", default="cooling", help="cooling or heating")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("sweep", parents=[common], help="hyperparameter sensitivity sweep")
    sp.add_argument("--data", help="CSV dataset (default: synthetic)")
    sp.add_argument("--assert-plateau", action="store_true",
                    help=f"fail unless max/min MAE over e_g <= {PLATEAU_LIMIT}")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plan", parents=[common], help="one day-ahead plan after warm-up")
    sp.add_argument("--ess-only", action="store_true", help="battery-only bid")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", parents=[common], help="closed-loop experiment")
    sp.add_argument("--scenario", action="append", choices=["A", "B", "C"],
                    help="scenario to run (repeatable; default from config)")
    sp.add_argument("--days", type=int, help="simulated days (overrides the config)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", parents=[common], help="markdown report of a run")
    sp.add_argument("run_dir", help="directory written by 'simulate'")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("DDPC_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ddpc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, ConfigError) as exc:
        print(f"ddpc: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"ddpc: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
