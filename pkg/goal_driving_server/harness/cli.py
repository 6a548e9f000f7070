"""
Command-line driver for experiments.

    goal-driving run --scenario S1 --algo IGP2 --instances 100 --seed 1 --out runs/s1_igp2
    goal-driving report --in runs
    goal-driving variant --base s3 --irrational --out s3_irrational.json

Exit code 0 when every instance completed, 2 on any failed instance or error.
"""

import argparse
import dataclasses
import json
import logging
import sys
from typing import List, Optional

from goal_driving_server.core.exceptions import GoalDrivingError
from goal_driving_server.harness.algorithms import AlgorithmKind
from goal_driving_server.harness.experiment import run_experiment
from goal_driving_server.harness.reports import emit_reports, report_directory
from goal_driving_server.harness.scenarios import (
    irrational_variant,
    load_scenario,
    scenario_to_document,
    with_occlusion,
)
from goal_driving_server.utils.config_utils import PlannerConfig, load_config, log_level_from_env
from goal_driving_server.utils.file_utils import write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 2


def _config_with_overrides(args) -> PlannerConfig:
    config = load_config(args.config)
    if args.simulations is not None:
        config = dataclasses.replace(config, mcts=dataclasses.replace(config.mcts, simulations=args.simulations))
    return config


def run_command(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.irrational:
        scenario = irrational_variant(scenario)
    if args.occlusion:
        scenario = with_occlusion(scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.timeout is not None:
        overrides["timeout"] = args.timeout
    if overrides:
        scenario = dataclasses.replace(scenario, **overrides)
    config = _config_with_overrides(args)
    algorithm = AlgorithmKind.parse(args.algo)

    def progress(record):
        outcome = f"{record.driving_time:.1f} s" if record.completed else record.failure
        print(f"{record.scenario} {record.algorithm} #{record.instance:03d}: {outcome}", flush=True)

    records = run_experiment(scenario, algorithm, args.out, config, args.instances, on_instance=progress)
    emit_reports(records, args.out)
    failed = [r for r in records if not r.completed]
    print(f"{len(records) - len(failed)}/{len(records)} instances completed; results in {args.out}")
    return EXIT_FAILED if failed else EXIT_OK


def report_command(args) -> int:
    paths = report_directory(args.in_dir, args.out)
    for path in paths:
        print(path)
    return EXIT_OK


def variant_command(args) -> int:
    if not args.irrational:
        print("Nothing to derive: pass --irrational", file=sys.stderr)
        return EXIT_FAILED
    variant = irrational_variant(load_scenario(args.base.upper()))
    document = scenario_to_document(variant)
    if args.out:
        write_json(args.out, document)
        print(args.out)
    else:
        print(json.dumps(document, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goal-driving", description="Goal-recognition driving experiments")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="Simulate scenario instances under one algorithm")
    run.add_argument("--scenario", required=True, help="Scenario file, or bundled scenario id (S1..S4, TOWN)")
    run.add_argument("--algo", required=True, help=", ".join(k.value for k in AlgorithmKind))
    run.add_argument("--instances", type=int, default=None, help="Number of instances (default: from the scenario)")
    run.add_argument("--seed", type=int, default=None, help="Scenario seed override")
    run.add_argument("--out", required=True, help="Output directory")
    run.add_argument("--config", default=None, help="JSON planner configuration file")
    run.add_argument("--timeout", type=float, default=None, help="Simulated seconds per instance")
    run.add_argument("--simulations", type=int, default=None, help="MCTS simulations per decision")
    run.add_argument("--occlusion", action="store_true", help="Hide the tracked vehicle's lane change")
    run.add_argument("--irrational", action="store_true", help="Run the irrational variant (S3, S4)")
    run.set_defaults(func=run_command)

    report = sub.add_parser("report", help="Aggregate the runs under a directory")
    report.add_argument("--in", dest="in_dir", required=True, help="Directory holding one or more runs")
    report.add_argument("--out", default=None, help="Report directory (default: the input directory)")
    report.set_defaults(func=report_command)

    variant = sub.add_parser("variant", help="Write a derived scenario")
    variant.add_argument("--base", required=True, choices=["s3", "s4", "S3", "S4"])
    variant.add_argument("--irrational", action="store_true")
    variant.add_argument("--out", default=None, help="Output file (default: stdout)")
    variant.set_defaults(func=variant_command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=log_level_from_env(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GoalDrivingError, ValueError) as e:
        logger.error("%s failed: %s", args.cmd, e)
        print(f"Failed to {args.cmd}: {str(e)}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
