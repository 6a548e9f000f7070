"""
Experiment tools for the Goal Driving Server.
"""

import dataclasses
import json
import os
from typing import Optional

from goal_driving_server.harness.algorithms import AlgorithmKind
from goal_driving_server.harness.experiment import run_experiment
from goal_driving_server.harness.reports import emit_reports, report_directory, summary_lines, aggregate_driving_times
from goal_driving_server.harness.scenarios import (
    irrational_variant,
    list_scenarios as list_scenario_files,
    load_scenario,
    scenario_to_document,
    with_occlusion,
)
from goal_driving_server.utils.config_utils import load_config
from goal_driving_server.utils.file_utils import check_file_writeable, ensure_extension, write_json


async def run_scenario_experiment(
    scenario: str,
    algorithm: str,
    out_dir: str,
    instances: Optional[int] = None,
    seed: Optional[int] = None,
    occlusion: bool = False,
    irrational: bool = False,
    config_file: Optional[str] = None,
) -> str:
    """Simulate randomized instances of a driving scenario with one ego planning algorithm.

    Each instance places the vehicles of the scenario with randomized offsets and speeds,
    then runs the closed-loop simulation until the ego reaches its goal, collides or times out.
    Writes per-instance state traces, records.jsonl, decisions.jsonl and the report files.

    Use this tool when:
    - Comparing driving times of algorithms on a scenario
    - Checking how quickly goal recognition finds the true goal of the tracked vehicle
    - Reproducing a single instance with a fixed seed

    Args:
        scenario: Scenario file path or bundled id (S1, S2, S3, S4, TOWN)
        algorithm: One of IGP2, IGP2-MAP, CVel, CVel-Avg, Cons, SH-CVel
        out_dir: Directory for traces, records and reports
        instances: Number of instances (defaults to the scenario's count)
        seed: Overrides the scenario seed
        occlusion: Hide the tracked vehicle's lane change from the ego
        irrational: Use the irrational variant (S3 and S4 only)
        config_file: Optional JSON planner configuration

    Returns:
        Per-algorithm summary table, or error message if the run fails
    """
    try:
        kind = AlgorithmKind.parse(algorithm)
        config = load_scenario(scenario)
        if irrational:
            config = irrational_variant(config)
        if occlusion:
            config = with_occlusion(config)
        if seed is not None:
            config = dataclasses.replace(config, seed=seed)
        records = run_experiment(config, kind, out_dir, load_config(config_file), instances)
        emit_reports(records, out_dir)
        completed = sum(r.completed for r in records)
        table = "\n".join(summary_lines(aggregate_driving_times(records)))
        return f"{completed}/{len(records)} instances of {config.scenario_id} completed with {kind.value}. Results in {out_dir}\n\n{table}"
    except Exception as e:
        return f"Failed to run experiment: {str(e)}"


async def build_reports(in_dir: str, out_dir: Optional[str] = None) -> str:
    """Aggregate every run below a directory into report files.

    Writes driving_times.csv, goal_probs.csv, goal_probs_mean.csv, decisions.log,
    summary.txt and summary.docx.

    Args:
        in_dir: Directory holding one or more runs (records.jsonl files, searched recursively)
        out_dir: Where to write the reports (defaults to in_dir)

    Returns:
        List of written files, or error message if no records are found
    """
    if not os.path.isdir(in_dir):
        return f"Directory {in_dir} does not exist"
    try:
        paths = report_directory(in_dir, out_dir)
        return "Reports written:\n" + "\n".join(paths)
    except Exception as e:
        return f"Failed to build reports: {str(e)}"


async def create_irrational_variant(base: str, out_file: str) -> str:
    """Write the irrational variant of scenario S3 or S4 to a scenario file.

    In the variant the tracked vehicle slows down as in the base scenario, then
    accelerates and continues straight instead of exiting (S3) or stopping (S4).

    Args:
        base: S3 or S4 (or a path to a scenario file with an irrational block)
        out_file: Scenario file to write (.json is appended when missing)

    Returns:
        Success message with the file name, or error message
    """
    out_file = ensure_extension(out_file, ".json")
    is_writeable, error_message = check_file_writeable(out_file)
    if not is_writeable:
        return f"Cannot write variant: {error_message}"
    try:
        variant = irrational_variant(load_scenario(base))
        write_json(out_file, scenario_to_document(variant))
        return f"Scenario {variant.scenario_id} written to {out_file}"
    except Exception as e:
        return f"Failed to create variant: {str(e)}"


async def list_scenarios(directory: Optional[str] = None) -> str:
    """List scenario files with their ids, names and instance counts.

    Args:
        directory: Directory to search (defaults to the bundled scenarios)

    Returns:
        JSON list of scenarios
    """
    try:
        entries = list_scenario_files(directory) if directory else list_scenario_files()
        if not entries:
            return f"No scenario files found in {directory}"
        return json.dumps(entries, indent=2)
    except Exception as e:
        return f"Failed to list scenarios: {str(e)}"
