"""``epiga`` command line: experiments, sweep, peak oracle and plots."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmarks import get_problem, grid_oracle, write_peaks_csv
from .experiments import (
    ConfigError,
    parse_config,
    read_records_csv,
    run_experiment1,
    run_experiment2,
    run_sweep,
)
from .ga import GenerationRecord
from .svg import render_population_svg

log = logging.getLogger("epiga")


def _report(results, threshold: float) -> None:
    for r in results:
        status = "ok" if r.success else "miss"
        print(f"seed {r.seed}: best {r.fitness:.4f} at ({r.point[0]:.4f}, {r.point[1]:.4f}) "
              f"[{status}, threshold {threshold}] {r.duration:.1f}s")
    print(f"{sum(r.success for r in results)}/{len(results)} seeds reached the threshold")


def cmd_exp1(args) -> int:
    cfg = parse_config(args.config)
    results = run_experiment1(cfg, args.out)
    _report(results, cfg.threshold)
    return 0


def cmd_exp2(args) -> int:
    cfg = parse_config(args.config)
    results = run_experiment2(cfg, args.out)
    _report(results, cfg.threshold)
    return 0


def cmd_sweep(args) -> int:
    grid_path = Path(args.grid)
    try:
        grid = json.loads(grid_path.read_text())
    except FileNotFoundError:
        raise ConfigError("", f"grid file {grid_path} does not exist") from None
    except json.JSONDecodeError as err:
        raise ConfigError("", f"malformed JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    problem = grid.pop("problem", "bumpy") if isinstance(grid, dict) else "bumpy"
    rows, summary = run_sweep(grid, args.budget, problem=problem, seed=args.seed, out_dir=args.out)
    for r in rows:
        fit = "error" if r.best_fitness is None else f"{r.best_fitness:.4f}"
        print(f"config {r.index}: {'ok' if r.success else 'miss'} {fit} {r.error or ''}".rstrip())
    print(f"success rate {summary['success_rate']:.2f} ({summary['successes']}/{summary['budget']})")
    return 0


def cmd_oracle(args) -> int:
    problem = get_problem(args.problem)
    peaks = grid_oracle(problem, args.step)
    if args.top:
        peaks = peaks[: args.top]
    write_peaks_csv(problem, sys.stdout, peaks)
    return 0


def cmd_plot(args) -> int:
    problem = get_problem(args.problem)
    rows = read_records_csv(args.records)
    records = [
        GenerationRecord(
            r["generation"], r["best_fitness"], np.array([r["best_x"], r["best_y"]]), r["mean_fitness"],
            bool(r["diffusion_flag"]),
        )
        for r in rows
    ]
    out = args.out or str(Path(args.records).with_suffix(".svg"))
    render_population_svg(records, problem, out)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epiga", description="Epigenetic genetic algorithm experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exp1", help="single head, biased start near the BUMPY local peak")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_exp1)

    p = sub.add_parser("exp2", help="multi-head run with diffusion and peak report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_exp2)

    p = sub.add_parser("sweep", help="sample configurations from the parameter grid")
    p.add_argument("--grid", required=True, help="JSON object of allowed value lists, optional 'problem'")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="grid local maxima as CSV")
    p.add_argument("--problem", required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--top", type=int, default=0, help="keep only the tallest n peaks")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plot", help="SVG of best points from a per-generation CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, ValueError, OSError, RuntimeError, ArithmeticError) as err:
        print(f"epiga {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
