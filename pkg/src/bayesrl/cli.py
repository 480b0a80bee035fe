"""Command line entry point: ``bayesrl run --env linear10 --agent structure-learning``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ArgumentError
from .harness import AGENT_KINDS, ENV_DEFAULTS, ExperimentConfig, run_experiment


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return v


def _gamma(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"gamma must lie in (0, 1), got {text}")
    return v


def _env(text: str) -> str:
    if text in ENV_DEFAULTS or (text.startswith("file:") and len(text) > 5):
        return text
    raise argparse.ArgumentTypeError(f"expected one of {', '.join(ENV_DEFAULTS)} or file:PATH, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate an agent on a network and write CSV metrics")
    run.add_argument("--env", type=_env, required=True, help="linear10 | tree13 | dense12 | file:PATH")
    run.add_argument("--agent", choices=AGENT_KINDS, required=True)
    run.add_argument("--k", type=_positive_int, help="graph particles (default per network)")
    run.add_argument("--resample-threshold", type=float, help="resample when ln L falls below this")
    run.add_argument("--depth", type=_positive_int)
    run.add_argument("--branch", type=_positive_int)
    run.add_argument("--gamma", type=_gamma, default=0.95)
    run.add_argument("--steps", type=_positive_int, default=1500)
    run.add_argument("--seeds", type=_positive_int, default=50)
    run.add_argument("--base-seed", type=int, default=0)
    run.add_argument("--metrics-interval", type=_positive_int, default=10)
    run.add_argument("--burn-in", type=_nonneg_int, default=1000)
    run.add_argument("--thinning", type=_positive_int, default=50)
    run.add_argument("--out", default="results")
    run.add_argument("--jobs", type=_positive_int, default=1, help="seeds simulated in parallel")
    run.add_argument("--no-timing", action="store_true", help="write planning_ms as 0 for byte-reproducible CSVs")
    run.add_argument(
        "--no-reboot-learning",
        action="store_true",
        help="do not update the learned model on reboot steps",
    )
    return parser


def parse_cli(argv=None) -> ExperimentConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ExperimentConfig.for_env(
            ns.env,
            agent=ns.agent,
            k=ns.k,
            resample_threshold=ns.resample_threshold,
            depth=ns.depth,
            branch=ns.branch,
            gamma=ns.gamma,
            steps=ns.steps,
            seeds=ns.seeds,
            base_seed=ns.base_seed,
            metrics_interval=ns.metrics_interval,
            burn_in=ns.burn_in,
            thinning=ns.thinning,
            out=ns.out,
            jobs=ns.jobs,
            timing=not ns.no_timing,
            learn_from_reboots=not ns.no_reboot_learning,
        )
    except ArgumentError as exc:
        parser.error(str(exc))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = parse_cli(argv)
    try:
        result = run_experiment(cfg)
    except (OSError, ArgumentError) as exc:
        print(f"bayesrl: {exc}", file=sys.stderr)
        return 1
    for i, path in sorted(result.seed_paths.items()):
        logging.info("seed %d -> %s", i, path)
    if result.aggregate_path:
        logging.info("aggregate -> %s", result.aggregate_path)
    return 1 if result.failed else 0


if __name__ == "__main__":
    sys.exit(main())
