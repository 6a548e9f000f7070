"""
Tests for the MCP tool functions, called directly.
"""

import asyncio
import json
import os

import pytest

from goal_driving_server.main import mcp, register_tools
from goal_driving_server.tools import experiment_tools, map_tools
from goal_driving_server.utils.trace_utils import write_trace


def run(coro):
    return asyncio.run(coro)


def test_register_tools():
    register_tools()
    names = {tool.name for tool in run(mcp.list_tools())}
    assert {
        "run_scenario_experiment",
        "build_reports",
        "create_irrational_variant",
        "list_scenarios",
        "describe_map",
        "generate_goals_for_state",
        "recognize_goals_from_trace",
    } <= names


def test_list_scenarios():
    entries = json.loads(run(experiment_tools.list_scenarios()))
    assert "S1" in {e["id"] for e in entries}


def test_list_scenarios_empty_directory(tmp_path):
    assert run(experiment_tools.list_scenarios(str(tmp_path))).startswith("No scenario files found")


def test_create_irrational_variant(tmp_path):
    out = str(tmp_path / "s3_irrational")
    message = run(experiment_tools.create_irrational_variant("S3", out))
    assert message == f"Scenario S3-irrational written to {out}.json"
    assert os.path.exists(out + ".json")


def test_create_variant_of_s1_fails(tmp_path):
    message = run(experiment_tools.create_irrational_variant("S1", str(tmp_path / "x.json")))
    assert message.startswith("Failed to create variant:")


def test_build_reports_missing_directory(tmp_path):
    assert run(experiment_tools.build_reports(str(tmp_path / "missing"))).endswith("does not exist")


def test_unknown_algorithm(tmp_path):
    message = run(experiment_tools.run_scenario_experiment("S1", "MPC", str(tmp_path)))
    assert message.startswith("Failed to run experiment: Unknown algorithm MPC")


def test_describe_bundled_map():
    doc = json.loads(run(map_tools.describe_map("t_junction")))
    assert doc["roads"]
    assert doc["junctions"][0]["priority"]


def test_describe_missing_map():
    assert run(map_tools.describe_map("atlantis")).startswith("Failed to describe map:")


def test_generate_goals_for_state():
    doc = json.loads(run(map_tools.generate_goals_for_state("s1_exit", 10.0, -1.75, 0.0, 10.0)))
    assert doc["lane"] is not None
    assert len(doc["goals"]) == 2
    assert all(g["kind"] == "location" for g in doc["goals"])


def test_recognize_goals_from_trace(tmp_path):
    path = str(tmp_path / "trace.csv")
    rows = [(0.5 * k, "V1", 10.0 + 5.0 * k, -1.75, 0.0, 10.0, 0.0, "lane-follow") for k in range(5)]
    write_trace(path, rows)
    doc = json.loads(run(map_tools.recognize_goals_from_trace("s1_exit", path, "V1", maneuver="lane-follow")))
    assert doc["vehicle"] == "V1"
    assert doc["t"] == 2.0
    goals = doc["maneuvers"]["lane-follow"]["goals"]
    assert sum(g["probability"] for g in goals) == pytest.approx(1.0, abs=1e-5)


def test_recognize_unknown_vehicle(tmp_path):
    path = str(tmp_path / "trace.csv")
    write_trace(path, [(0.0, "V1", 10.0, -1.75, 0.0, 10.0, 0.0, "")])
    assert run(map_tools.recognize_goals_from_trace("s1_exit", path, "V2")).startswith("Vehicle V2 not in trace")
