"""Command line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiments import (
    ExperimentConfig,
    load_config,
    parse_attachments,
    run_sweep,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridstorm",
        description="Simulate price-modification attacks on microgrids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run attack sweeps and write reports")
    run.add_argument("--config", help="INI config file")
    run.add_argument("--case", help="main grid case, built-in name or file path")
    run.add_argument(
        "--attach",
        action="append",
        metavar="HOST:CASE",
        help="attach a microgrid case at a host bus (repeatable)",
    )
    run.add_argument(
        "--capacity-reduction", type=float, help="uniform line rating reduction"
    )
    run.add_argument(
        "--resource", type=float, help="attacker resource fraction"
    )
    run.add_argument("--alpha", type=float, help="flow averaging weight")
    run.add_argument("--runs", type=int, help="random baseline runs per point")
    run.add_argument("--seed", type=int, help="base random seed")
    run.add_argument("--beta", type=float, help="derived-rating margin factor")
    run.add_argument("--workers", type=int, help="parallel sweep workers")
    run.add_argument(
        "--sweep",
        choices=("capacity", "resource", "mgload", "all"),
        default="all",
        help="which parameter sweep to run",
    )
    run.add_argument("--out", default="results", help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "run":
        return 2
    config = load_config(args.config) if args.config else ExperimentConfig()
    updates: dict = {}
    if args.case is not None:
        updates["main_case"] = args.case
    if args.attach:
        updates["attachments"] = parse_attachments(",".join(args.attach))
    if args.capacity_reduction is not None:
        updates["capacity_reduction"] = args.capacity_reduction
    if args.resource is not None:
        updates["resource_fraction"] = args.resource
    if args.alpha is not None:
        updates["alpha"] = args.alpha
    if args.runs is not None:
        updates["runs"] = args.runs
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.beta is not None:
        updates["beta"] = args.beta
    if args.workers is not None:
        updates["workers"] = args.workers
    if updates:
        config = dataclasses.replace(config, **updates)
    sweeps = None if args.sweep == "all" else (args.sweep,)
    written = run_sweep(config, args.out, sweeps)
    for group in ("csv", "charts", "reports"):
        for path in written[group]:
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
