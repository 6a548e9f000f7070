"""
Experiment harness: scenarios, towns, ego policies, closed-loop runs and reports.
"""

from goal_driving_server.harness.scenarios import (
    ScenarioConfig,
    irrational_variant,
    list_scenarios,
    load_scenario,
    load_scenario_map,
    with_occlusion,
)
from goal_driving_server.harness.towns import TownLayout, build_town
from goal_driving_server.harness.algorithms import AlgorithmKind, EgoPolicy, predictor_for
from goal_driving_server.harness.experiment import MetricsRecord, run_experiment, run_instance
from goal_driving_server.harness.reports import emit_reports, load_records, report_directory

__all__ = [
    # Scenarios
    "ScenarioConfig",
    "irrational_variant",
    "list_scenarios",
    "load_scenario",
    "load_scenario_map",
    "with_occlusion",
    "TownLayout",
    "build_town",
    # Policies
    "AlgorithmKind",
    "EgoPolicy",
    "predictor_for",
    # Runs
    "MetricsRecord",
    "run_experiment",
    "run_instance",
    # Reports
    "emit_reports",
    "load_records",
    "report_directory",
]
