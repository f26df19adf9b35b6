"""Command-line front end.

Exit codes: 0 ok, 2 configuration or usage error, 3 stability violation,
4 analysis infeasible.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ANALYSES, ExperimentConfig
from .errors import (ConfigError, InputError, ReportError, ResolutionError, ScheduleError,
                     StabilityViolation, DivergenceError, UnsupportedError, UsageError)
from .experiment import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, EXIT_STABILITY, analyze_record, emit_report,
                         load_record, load_run, run_experiment, run_inclusion, seed_dir)

log = logging.getLogger("ttsa")

# CLI flag -> config key, for flags shared by run and simulate
OVERRIDES = {
    "steps": "steps", "a_coef": "a_coef", "a_exp": "a_exp", "b_coef": "b_coef", "b_exp": "b_exp",
    "noise": "noise", "sigma": "sigma", "budget": "budget", "window": "window", "cell_width": "cell_width",
    "out": "out",
}


def _add_overrides(p):
    p.add_argument("--steps", type=int, help="horizon N")
    p.add_argument("--a-coef", type=float)
    p.add_argument("--a-exp", type=float)
    p.add_argument("--b-coef", type=float)
    p.add_argument("--b-exp", type=float)
    p.add_argument("--noise", choices=["none", "gaussian"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--budget", type=float, help="stability budget on sup |x|+|y|")
    p.add_argument("--window", type=float, help="window length T")
    p.add_argument("--cell-width", type=float)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ttsa", description="Two-time-scale stochastic approximation laboratory")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--jobs", type=int, default=None, help="parallel seed groups (default: TTSA_JOBS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    _add_overrides(p)

    p = sub.add_parser("simulate", help="simulate one scenario and store trajectories")
    p.add_argument("--scenario")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, nargs="+", default=None)
    _add_overrides(p)

    p = sub.add_parser("analyze", help="analyze stored trajectories of a run directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--what", required=True, choices=["deviation", "occupation", "disintegration"])
    p.add_argument("--window", type=float)
    p.add_argument("--starts", type=int, nargs="+", help="window start steps")
    p.add_argument("--cell-width", type=float)
    p.add_argument("--seed", type=int, nargs="+")

    p = sub.add_parser("inclusion", help="set-valued slow drift and chain classes")
    p.add_argument("--scenario")
    p.add_argument("--config")
    p.add_argument("--grid", type=int, default=None, help="slow cells")
    p.add_argument("--eps-cells", type=float, default=None)
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--fast-grid", type=float, default=None, help="LP cell width (d > 1)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("dir")
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    return ap


def _base_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
        if getattr(args, "scenario", None):
            cfg = cfg.replace(scenario=args.scenario, instance=None)
        return cfg
    if not getattr(args, "scenario", None):
        raise UsageError("give --scenario or --config")
    cfg = ExperimentConfig(scenario=args.scenario)
    cfg.validate()
    return cfg


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {key: getattr(args, flag) for flag, key in OVERRIDES.items() if getattr(args, flag, None) is not None}
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
    if args.seeds:
        cfg = cfg.replace(seeds=args.seeds)
    return _finish(run_experiment(cfg, args.jobs))


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_base_config(args), args)
    cfg = cfg.replace(analyses=[], seeds=args.seed if args.seed else None)
    return _finish(run_experiment(cfg, args.jobs))


def _finish(result) -> int:
    for seed, st in result.manifest["seed_status"].items():
        if st["status"] != "ok":
            print(f"seed {seed}: {st['status']}: {st.get('message', '')}", file=sys.stderr)
    print(f"wrote {result.out} (exit {result.exit_code})")
    return result.exit_code


def cmd_analyze(args) -> int:
    manifest, cfg = load_run(args.dir)
    changes = {"analyses": [args.what]}
    if args.window is not None:
        changes["window"] = args.window
    if args.starts:
        changes["window_starts"] = args.starts
    if args.cell_width is not None:
        changes["cell_width"] = args.cell_width
    cfg = cfg.replace(**changes)
    inst = cfg.problem()
    seeds = args.seed or [int(s) for s, st in manifest["seed_status"].items() if st["status"] == "ok"]
    for seed in seeds:
        rec = load_record(args.dir, cfg, seed)
        info = analyze_record(rec, inst, cfg, seed_dir(args.dir, seed))
        print(f"seed {seed}: {json.dumps(info, sort_keys=True)}")
        if args.what != "deviation" and not info.get(f"{args.what}_windows"):
            raise InputError(f"seed {seed}: no requested window fits the record "
                             f"(windows of length {cfg.window} at steps {info['skipped_windows']})")
    return EXIT_OK


def cmd_inclusion(args) -> int:
    cfg = _base_config(args)
    changes = {"slow_cells": args.grid, "eps_cells": args.eps_cells, "t_min": args.t_min,
               "fast_grid": args.fast_grid, "out": args.out}
    cfg = cfg.replace(**changes)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    classes = run_inclusion(cfg, cfg.problem(), out)
    m = classes.model
    for k, c in enumerate(classes.classes):
        print(f"class {k}: y in [{m.centers[c[0]] - m.cell_width / 2:.6g}, {m.centers[c[-1]] + m.cell_width / 2:.6g}]"
              f" ({len(c)} cells)")
    print(f"wrote {out / 'inclusion.csv'} and {out / 'chain.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = emit_report(args.dir)
    Path(args.dir, "report.json").write_text(json.dumps(rep.data, indent=2, sort_keys=True) + "\n")
    Path(args.dir, "report.txt").write_text(rep.text)
    print(json.dumps(rep.data, indent=2, sort_keys=True) if args.json else rep.text, end="" if not args.json else "\n")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "inclusion": cmd_inclusion, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScheduleError, UsageError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StabilityViolation, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STABILITY
    except (ResolutionError, UnsupportedError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
