"""Command-line entry point: ``prost run|sweep|baseline|bounds|tempo``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .harness import (
    AGENTS,
    ConfigError,
    RunError,
    build_plan,
    export,
    load_config,
    load_record,
    record_bound,
    run_baseline,
    run_prost_t,
    sweep,
    validate,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_PARTIAL = 0, 1, 2, 3


def _config(args):
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    return cfg.with_overrides(over) if over else cfg


def _write_run(rec, out_dir):
    paths = export([rec], "csv", out_dir) + export([rec], "json", out_dir)
    for p in paths:
        print(p)


def cmd_run(args):
    cfg = _config(args)
    rec = run_prost_t(cfg)
    _write_run(rec, cfg.output_dir)
    return EXIT_OK


def cmd_baseline(args):
    cfg = _config(args)
    rec = run_baseline(cfg, args.kind)
    _write_run(rec, cfg.output_dir)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise ConfigError(f"grid file {grid_path} not found")
    try:
        grid = yaml.safe_load(grid_path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse grid: {e}") from e
    if not isinstance(grid, dict):
        raise ConfigError("grid must map config paths to value lists")
    res = sweep(cfg, grid, n_seeds=args.seeds, agent=args.agent, workers=args.workers)
    if res.records:
        for p in export(res.records, "csv", cfg.output_dir) + export(res.records, "plotdata", cfg.output_dir):
            print(p)
    for idx, over, msg in res.failures:
        print(f"cell {idx} {over} failed: {msg}", file=sys.stderr)
    return EXIT_PARTIAL if res.partial else EXIT_OK


def cmd_bounds(args):
    try:
        rec = load_record(args.run)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read run record: {e}") from e
    print(record_bound(rec).to_json())
    return EXIT_OK


def cmd_tempo(args):
    cfg = _config(args)
    env, hp = validate(cfg)
    try:
        plan = build_plan(cfg, env, hp)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(plan.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prost")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="one forecast-and-optimize run")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="one baseline run")
    p.add_argument("--kind", required=True, choices=sorted(k for k in AGENTS if k != "prost_t"))
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="grid of runs")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--agent", default="prost_t", choices=sorted(AGENTS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="regret ceiling of a stored run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("tempo", help="emit the interaction plan")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_tempo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, ValueError, RuntimeError, OSError) as e:
        print(f"run error: {e}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
