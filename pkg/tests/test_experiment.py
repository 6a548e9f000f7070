"""
Tests for the closed-loop experiment runner.
"""

import dataclasses
import json
import math
import os

import pytest

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.inverse_planner import AStarBudget
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.harness.algorithms import AlgorithmKind, average_speed
from goal_driving_server.harness.experiment import (
    DECISIONS_FILE,
    MANIFEST_FILE,
    RECORDS_FILE,
    MetricsRecord,
    deterministic_budget,
    run_experiment,
    run_instance,
    trace_file_name,
)
from goal_driving_server.harness.scenarios import load_scenario
from goal_driving_server.utils.config_utils import build_config
from goal_driving_server.utils.file_utils import read_jsonl
from goal_driving_server.utils.trace_utils import read_trace


@pytest.fixture(scope="module")
def small_config():
    return build_config({"mcts": {"simulations": 3, "max_depth": 2}})


@pytest.fixture(scope="module")
def short_s1():
    return dataclasses.replace(load_scenario("S1"), timeout=3.0)


class TestMetricsRecord:
    def test_completed_needs_positive_time(self):
        with pytest.raises(ContractError):
            MetricsRecord("S1", "IGP2", 0, completed=True, driving_time=0.0)
        with pytest.raises(ContractError):
            MetricsRecord("S1", "IGP2", 0, completed=False, driving_time=12.0)

    def test_dict_form(self):
        record = MetricsRecord("S1", "IGP2", 4, True, False, 12.5, None, 9, 0, [(0.0, 0.25), (1.0, 0.8)])
        doc = json.loads(json.dumps(record.to_dict()))
        assert doc["goal_probabilities"] == [[0.0, 0.25], [1.0, 0.8]]
        assert MetricsRecord.from_dict(doc) == record


class TestAlgorithmKind:
    @pytest.mark.parametrize(
        "name, kind",
        [
            ("IGP2", AlgorithmKind.GOAL_RECOGNITION),
            ("igp2-map", AlgorithmKind.GOAL_RECOGNITION_MAP),
            ("cvel", AlgorithmKind.CONSTANT_VELOCITY),
            ("SH-CVel", AlgorithmKind.SHORT_HORIZON),
            ("conservative", AlgorithmKind.CONSERVATIVE),
        ],
    )
    def test_parse(self, name, kind):
        assert AlgorithmKind.parse(name) == kind

    def test_unknown(self):
        with pytest.raises(ValueError, match="Unknown algorithm"):
            AlgorithmKind.parse("MPC")

    def test_recognition_flag(self):
        assert AlgorithmKind.GOAL_RECOGNITION_MAP.uses_recognition
        assert not AlgorithmKind.CONSTANT_VELOCITY_AVERAGE.uses_recognition


def test_average_speed_window():
    history = [VehicleState((float(k), 0.0), 0.0, float(k), 0.0, float(k)) for k in range(6)]
    # samples at t = 3, 4, 5 fall inside the last two seconds
    assert average_speed(history) == pytest.approx(4.0)
    assert average_speed([]) == 0.0


def test_deterministic_budget_keeps_node_cap():
    budget = deterministic_budget(AStarBudget(max_time=0.5, max_nodes=200))
    assert budget.max_time == math.inf
    assert budget.max_nodes == 200


def test_instance_is_reproducible(short_s1, small_config):
    first = run_instance(short_s1, AlgorithmKind.CONSTANT_VELOCITY, 0, small_config)
    second = run_instance(short_s1, AlgorithmKind.CONSTANT_VELOCITY, 0, small_config)
    assert first.trace == second.trace
    assert first.record == second.record
    assert first.decisions == second.decisions
    assert first.trace[0][0] == 0.0
    assert {row[1] for row in first.trace} >= {"ego", "V1"}


def test_instance_times_out(short_s1, small_config):
    result = run_instance(short_s1, AlgorithmKind.CONSTANT_VELOCITY, 1, small_config)
    record = result.record
    if not record.completed:
        assert record.failure in ("timeout", "collision")
        assert record.driving_time == 0.0
    assert max(row[0] for row in result.trace) <= 3.0 + 1e-9


def test_run_experiment_writes_outputs(tmp_path, short_s1, small_config):
    out_dir = str(tmp_path / "run")
    seen = []
    records = run_experiment(short_s1, AlgorithmKind.CONSTANT_VELOCITY, out_dir, small_config, 2, on_instance=seen.append)
    assert [r.instance for r in records] == [0, 1]
    assert seen == records
    assert [MetricsRecord.from_dict(d) for d in read_jsonl(os.path.join(out_dir, RECORDS_FILE))] == records
    assert os.path.exists(os.path.join(out_dir, DECISIONS_FILE))
    with open(os.path.join(out_dir, MANIFEST_FILE), encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["scenario"] == "S1"
    assert manifest["algorithm"] == "CVel"
    assert manifest["instances"] == 2
    trace = read_trace(os.path.join(out_dir, "traces", trace_file_name("S1", AlgorithmKind.CONSTANT_VELOCITY, 0)))
    assert "ego" in trace


def test_run_experiment_needs_instances(tmp_path, short_s1):
    with pytest.raises(ContractError):
        run_experiment(short_s1, AlgorithmKind.CONSTANT_VELOCITY, str(tmp_path), instances=0)
