"""Command line entry point.

Subcommands: run, gradcheck, sweep-q1, sweep-q2, sweep-gamma, compare.
Each takes a config file of ``section.key = value`` lines plus optional
overrides.  Exit status is 0 only if every seed of every requested run
completed.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .harness import (
    ExperimentConfig,
    compare_optimizers,
    gradcheck,
    parse_config_file,
    run_experiment,
    sweep_gamma,
    sweep_q1,
    sweep_q2,
    tune_eta,
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="path to a section.key = value config file")
    sub.add_argument("--seed", type=int, default=None, help="run a single seed instead of run.seeds")
    sub.add_argument("--out", default=None, help="output directory (overrides run.out)")
    sub.add_argument("--eval-every", type=int, default=None, help="evaluation stride override")
    sub.add_argument(
        "--budget", type=int, default=None,
        help="total inner-oracle budget; iteration count becomes budget // (b1*b2)",
    )
    sub.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def _load(args) -> ExperimentConfig:
    raw = parse_config_file(args.config)
    cfg = ExperimentConfig.from_raw(
        raw, seed=args.seed, out=args.out, eval_every=args.eval_every, budget=args.budget
    )
    if getattr(args, "no_plots", False):
        cfg.plots = False
    return cfg


def _print_summary(rows: list[dict]) -> None:
    for row in rows:
        parts = [str(row.get("label", ""))]
        for key in ("final_F_mean", "final_F_std", "metric_mean", "median_iterations"):
            if row.get(key) is not None:
                parts.append(f"{key}={row[key]:.6g}")
        if row.get("n_aborted"):
            parts.append(f"aborted={row['n_aborted']}")
        print("  " + "  ".join(parts))


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fccopt",
        description="run and compare stochastic optimizers for coupled compositional objectives",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run the configured optimizer over all seeds")
    _add_common(p_run)
    p_run.add_argument(
        "--tune", action="store_true",
        help="pick eta from a 1e-4..1e-1 grid by final training loss before running",
    )

    p_grad = subs.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("config")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--points", type=int, default=10)

    for name in ("sweep-q1", "sweep-q2", "sweep-gamma", "compare"):
        _add_common(subs.add_parser(name, help=f"{name} over the configured variants"))

    args = parser.parse_args(argv)

    try:
        if args.command == "gradcheck":
            raw = parse_config_file(args.config)
            cfg = ExperimentConfig.from_raw(raw)
            ok, errors = gradcheck(cfg, n_points=args.points, seed=args.seed)
            for k, err in enumerate(errors):
                print(f"point {k}: rel err {err:.3e} {'ok' if err <= 1e-5 else 'FAIL'}")
            print("gradcheck " + ("passed" if ok else "FAILED"))
            return 0 if ok else 1

        cfg = _load(args)
        if args.command == "run":
            if args.tune:
                eta = tune_eta(cfg)
                print(f"tuned eta = {eta:g}")
                cfg.raw = dict(cfg.raw)
                cfg.raw["optimizer.eta"] = repr(eta)
                cfg.raw["optimizer.eta1"] = repr(eta)
            outcome = run_experiment(cfg)
            _print_summary(outcome.summary)
        elif args.command == "sweep-q1":
            outcome = sweep_q1(cfg)
            _print_summary(outcome.table)
        elif args.command == "sweep-q2":
            outcome = sweep_q2(cfg)
            _print_summary(outcome.table)
        elif args.command == "sweep-gamma":
            outcome = sweep_gamma(cfg)
            _print_summary(outcome.table)
        elif args.command == "compare":
            outcome = compare_optimizers(cfg)
            _print_summary(outcome.table)
        else:
            parser.error(f"unknown command {args.command}")
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"wrote {outcome.out_dir}")
    return 0 if outcome.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
