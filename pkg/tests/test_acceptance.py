"""
Whole-episode runs of the scenarios on a reduced number of seeded instances:
goal recognition convergence, driving-time ordering of the baselines,
occlusion, irrational vehicles and town routes.

Every test here simulates complete episodes and is marked slow; run them
with ``pytest -m slow``.
"""

import dataclasses

import numpy as np
import pytest

from goal_driving_server.harness.algorithms import AlgorithmKind
from goal_driving_server.harness.experiment import run_instance
from goal_driving_server.harness.scenarios import irrational_variant, load_scenario, load_scenario_map, with_occlusion
from goal_driving_server.harness.towns import build_town
from goal_driving_server.utils.config_utils import build_config

pytestmark = pytest.mark.slow

INSTANCES = 5
IGP2 = AlgorithmKind.GOAL_RECOGNITION
CVEL = AlgorithmKind.CONSTANT_VELOCITY
CONS = AlgorithmKind.CONSERVATIVE


@pytest.fixture(scope="module")
def config():
    return build_config({})


def run_records(scenario, algorithm, config, count=INSTANCES):
    if scenario.is_town:
        town = build_town(scenario.town)
        return [run_instance(scenario, algorithm, i, config, town=town).record for i in range(count)]
    road_map = load_scenario_map(scenario)
    return [run_instance(scenario, algorithm, i, config, road_map).record for i in range(count)]


def mean_driving_time(records):
    assert all(r.completed for r in records), [r.failure for r in records if not r.completed]
    return float(np.mean([r.driving_time for r in records]))


def recognized(record) -> bool:
    # above one half the true goal is the most likely one
    return bool(record.goal_probabilities) and record.goal_probabilities[-1][1] > 0.5


@pytest.mark.parametrize("name", ["S1", "S2", "S3", "S4"])
def test_true_goal_becomes_most_likely(name, config):
    records = run_records(load_scenario(name), IGP2, config)
    assert sum(recognized(r) for r in records) >= INSTANCES - 1
    first = np.mean([r.goal_probabilities[0][1] for r in records if r.goal_probabilities])
    last = np.mean([r.goal_probabilities[-1][1] for r in records if r.goal_probabilities])
    assert last >= first - 0.05


@pytest.mark.parametrize("name", ["S2", "S4"])
def test_recognition_beats_both_baselines(name, config):
    scenario = load_scenario(name)
    igp2 = mean_driving_time(run_records(scenario, IGP2, config))
    cvel = mean_driving_time(run_records(scenario, CVEL, config))
    cons = mean_driving_time(run_records(scenario, CONS, config))
    assert igp2 < cvel < cons


def test_recognition_beats_conservative_on_s3(config):
    scenario = load_scenario("S3")
    assert mean_driving_time(run_records(scenario, IGP2, config)) < mean_driving_time(run_records(scenario, CONS, config))


def test_s1_driving_times_agree(config):
    scenario = load_scenario("S1")
    means = [mean_driving_time(run_records(scenario, kind, config)) for kind in (IGP2, CVEL, CONS)]
    assert max(means) <= 1.03 * min(means)


@pytest.mark.parametrize("name", ["S1", "S3"])
def test_recognition_survives_occlusion(name, config):
    records = run_records(with_occlusion(load_scenario(name)), IGP2, config)
    assert sum(recognized(r) for r in records) >= INSTANCES - 1


@pytest.mark.parametrize("name", ["S3", "S4"])
def test_no_collisions_with_irrational_vehicle(name, config):
    records = run_records(irrational_variant(load_scenario(name)), IGP2, config)
    assert not any(r.collided for r in records)


@pytest.fixture(scope="module", params=[7, 8], ids=["town-7", "town-8"])
def town_scenario(request):
    base = load_scenario("town")
    return dataclasses.replace(base, seed=request.param, town=dataclasses.replace(base.town, seed=request.param))


def test_town_routes(town_scenario, config):
    igp2 = run_records(town_scenario, IGP2, config, count=3)
    cons = run_records(town_scenario, CONS, config, count=3)
    assert mean_driving_time(igp2) < mean_driving_time(cons)
    short = run_records(town_scenario, AlgorithmKind.SHORT_HORIZON, config, count=3)
    assert not any(r.completed for r in short)
