"""Command-line entry point: ``adaptive-apf {simulate,run,bench,converge}``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures (particle death, degenerate proposals, quadrature trouble).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .bench import ALL_FILTERS, BenchConfig, ConfigError
from .models import ObservationSequence, arch_model
from .sample import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file (keys of BenchConfig)")
    p.add_argument("--seed", type=_seed, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory (overrides config output_dir)")
    p.add_argument("--scale", type=_positive_float, help="multiply N, N_ref and runs")
    p.add_argument("--filters", help=f"comma list out of: {','.join(ALL_FILTERS)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-apf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write the outlier observation record as CSV")
    _common(p)

    p = sub.add_parser("run", help="one run of one filter with its full trace")
    _common(p)
    p.add_argument("--filter", dest="filter_name", help="filter name (default: first of --filters)")
    p.add_argument("--run-index", type=int, default=0, help="replicate index used to derive the seed")
    p.add_argument("--obs", type=Path, help="observation CSV (default: simulate from the config)")

    p = sub.add_parser("bench", help="full MSE study")
    _common(p)

    p = sub.add_parser("converge", help="entropy/CV² versus their limits, sweeping N")
    _common(p)
    p.add_argument("--sizes", default="1000,10000,100000", help="comma list of sample sizes")
    p.add_argument("--repeats", type=int, default=20, help="seeds per sample size")
    p.add_argument("--y", type=float, default=None, help="observation (default: outlier level)")
    return parser


def load_config(args) -> BenchConfig:
    cfg = BenchConfig.load(args.config) if args.config else BenchConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.filters is not None:
        names = tuple(f.strip() for f in args.filters.split(",") if f.strip())
        changes["filters"] = names
    if changes:
        try:
            cfg = dataclasses.replace(cfg, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if args.scale is not None:
        cfg = cfg.scaled(args.scale)
    return cfg


def cmd_simulate(cfg: BenchConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = bench.observations_for(cfg).to_csv(out / "observations.csv")
    print(path)
    return EXIT_OK


def cmd_run(cfg: BenchConfig, args) -> int:
    name = args.filter_name or (cfg.filters[0] if cfg.filters else None)
    if name is None:
        raise ConfigError("no filter selected")
    if args.run_index < 0:
        raise ConfigError("run index must be nonnegative")
    model = arch_model(cfg.arch)
    fdef = bench.build_filter(name, cfg, model)
    if args.obs is not None:
        try:
            obs = ObservationSequence.from_csv(args.obs)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read observations: {exc}") from exc
    else:
        obs = bench.observations_for(cfg)
    rng = make_rng(bench.derived_seed(cfg.seed, name, args.run_index))
    rec = bench.run_filter(fdef, model, obs, rng, args.run_index)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    print(bench.write_trace_csv([rec], out / f"trace_{name}.csv"))
    if rec.adapt_rows:
        print(bench.write_adapt_csv([rec], out / f"adapt_{name}.csv"))
    if not rec.ok:
        print(f"run failed at step {rec.failed_step}: {rec.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bench(cfg: BenchConfig, args) -> int:
    report, records = bench.run_benchmark(cfg, progress=lambda f: print(f"done: {f}", file=sys.stderr))
    for path in bench.emit_outputs(report, records, cfg.output_dir, cfg):
        print(path)
    for f in report.filters:
        r = report.ratio(f)
        ratio = "n/a" if r is None else f"{r:.4g}"
        print(f"{f:16s} window MSE {report.aggregate(f):.4g}  vs bootstrap {ratio}  "
              f"failed runs {len(report.failures[f])}", file=sys.stderr)
    return EXIT_OK


def cmd_converge(cfg: BenchConfig, args) -> int:
    try:
        sizes = tuple(int(s) for s in args.sizes.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --sizes: {exc}") from exc
    if not sizes or min(sizes) < 2 or args.repeats < 1:
        raise ConfigError("sizes must be >= 2 and repeats >= 1")
    y = cfg.outlier_multiplier * cfg.arch.stationary_std if args.y is None else args.y
    seeds = [cfg.seed + i for i in range(args.repeats)]
    rows, (kld, csd) = bench.convergence_study(cfg.arch, y, sizes, seeds)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "converge.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "seed", "entropy", "cv2", "limit_kld", "limit_csd"])
        for n, s, e, c in rows:
            w.writerow([n, s, repr(e), repr(c), repr(kld), repr(csd)])
    print(path)
    for n in sizes:
        e = np.array([r[2] for r in rows if r[0] == n])
        c = np.array([r[3] for r in rows if r[0] == n])
        print(f"N={n:>7d}  |mean entropy - KLD| = {abs(e.mean() - kld):.4g}  "
              f"|mean cv2 / CSD - 1| = {abs(c.mean() / csd - 1):.4g}", file=sys.stderr)
    print(json.dumps({"y": y, "limit_kld": kld, "limit_csd": csd}), file=sys.stderr)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "bench": cmd_bench, "converge": cmd_converge}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
