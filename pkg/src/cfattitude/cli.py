"""Command-line entry point: ``cfattitude {estimate,control,sweep,design-gains}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .controller import ControllerError
from .filters import FilterDesignError, FilterDivergenceError
from .harness import (
    ConfigError,
    HarnessConfig,
    ImuParseError,
    cmd_control,
    cmd_estimate,
    cmd_sweep,
    design_gain_file,
    load_config,
    selected_variants,
    write_log_csv,
    write_rows_csv,
)
from .hurwitz import IndeterminateHurwitzError
from .lyapunov import LyapunovError
from .simulator import SimulationDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3

log = logging.getLogger("cfattitude")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, help="override [scenario] seed")
    common.add_argument("--variant", choices=["direct", "passive"], help="filter variant (default: both)")
    common.add_argument("--order", type=int, help="filter order n >= 1")
    common.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cfattitude", description="Complementary-filter attitude estimation and control harness.")
    sub = p.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", parents=[common], help="run the filters + TRIAD on a simulated or logged stream")
    est.add_argument("--input", type=Path, help="IMU CSV to replay (t,ax,ay,az,mx,my,mz,wx,wy,wz)")
    ctl = sub.add_parser("control", parents=[common], help="closed-loop stabilization on the rigid-body plant")
    ctl.add_argument("--law", choices=["stabilization", "tracking", "raw"], help="override [controller] law")
    sw = sub.add_parser("sweep", parents=[common], help="randomized initial-condition sweep")
    sw.add_argument("--count", type=int, help="override [sweep] count")
    sw.add_argument("--model", choices=["closed_loop", "plant"], help="override [sweep] model")
    sub.add_parser("design-gains", parents=[common], help="validate gains and write a gain file")
    return p


def apply_overrides(cfg: HarnessConfig, args: argparse.Namespace) -> HarnessConfig:
    if args.seed is not None:
        cfg.scenario = replace(cfg.scenario, seed=args.seed)
    if args.variant is not None:
        cfg.filter = replace(cfg.filter, variant=args.variant)
    if args.order is not None:
        if args.order < 1:
            raise ConfigError("--order must be >= 1")
        cfg.filter = replace(cfg.filter, order=args.order)
    if getattr(args, "law", None):
        cfg.controller = replace(cfg.controller, law=args.law)
    if getattr(args, "count", None) is not None:
        if args.count < 1:
            raise ConfigError("--count must be >= 1")
        cfg.sweep = replace(cfg.sweep, count=args.count)
    if getattr(args, "model", None):
        cfg.sweep = replace(cfg.sweep, model=args.model)
    return cfg


def _run(args: argparse.Namespace) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "estimate":
        for res in cmd_estimate(cfg, args.input):
            write_log_csv(out / f"estimate_{res.variant}.csv", res.log)
            (out / f"metrics_{res.variant}.json").write_text(res.metrics.to_json() + "\n")
            if args.plot:
                from .plotting import plot_estimate

                plot_estimate(res.log, out / f"estimate_{res.variant}.png", res.variant)
            log.info("%s: %s", res.variant, res.metrics.to_json())
    elif args.command == "control":
        res = cmd_control(cfg)
        write_log_csv(out / "control.csv", res.log)
        (out / "metrics_control.json").write_text(res.metrics.to_json() + "\n")
        if args.plot:
            from .plotting import plot_control

            plot_control(res.log, out / "control.png", cfg.controller.law)
    elif args.command == "sweep":
        res = cmd_sweep(cfg)
        write_rows_csv(out / "sweep_runs.csv", res.rows)
        (out / "sweep_summary.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
        if args.plot:
            from .plotting import plot_sweep

            plot_sweep(res.rows, out / "sweep.png")
        print(json.dumps(res.summary, sort_keys=True))
    elif args.command == "design-gains":
        for variant in selected_variants(cfg):
            (out / f"gains_{variant}_n{cfg.filter.order}.ini").write_text(design_gain_file(cfg, variant))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (FilterDivergenceError, SimulationDivergenceError) as exc:
        t = getattr(exc, "t", None)
        print(f"error: divergence at t={t}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ImuParseError as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, FilterDesignError, ControllerError, LyapunovError, IndeterminateHurwitzError, ValueError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
