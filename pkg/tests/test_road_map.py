import json

import pytest

from conftest import straight_road_document
from goal_driving_server.core.exceptions import MapParseError, NoLaneError, TopologyError
from goal_driving_server.core.road_map import (
    Goal,
    GoalKind,
    ViewRegion,
    generate_goals,
    lane_at,
    load_map,
    serialize_map,
)
from goal_driving_server.core.trajectory import VehicleState


def test_load_map_links_neighbors_and_predecessors(s1_map):
    main_r = s1_map.lane("main_r")
    assert s1_map.neighbor(main_r, "left").id == "main_l"
    assert s1_map.neighbor(main_r, "right") is None
    assert [l.id for l in s1_map.predecessors(s1_map.lane("c_exit"))] == ["main_r"]
    assert s1_map.lane("c_exit").is_connector


def test_serialize_map_loads_back_identically(t_junction_map):
    document = serialize_map(t_junction_map)
    again = load_map(json.dumps(document))
    assert serialize_map(again) == document


def test_missing_key_names_the_path():
    doc = straight_road_document()
    del doc["roads"][0]["lanes"][1]["width"]
    with pytest.raises(MapParseError) as excinfo:
        load_map(doc)
    assert "roads[0].lanes[1]" in str(excinfo.value)


def test_unknown_successor_is_a_topology_error():
    doc = straight_road_document()
    doc["roads"][0]["lanes"][0]["successors"] = ["nowhere"]
    with pytest.raises(TopologyError):
        load_map(doc)


def test_non_mutual_neighbors_are_rejected():
    doc = straight_road_document()
    doc["roads"][0]["lanes"][1]["left"] = None
    with pytest.raises(TopologyError):
        load_map(doc)


def test_unknown_lane_lookup(straight_map):
    with pytest.raises(NoLaneError):
        straight_map.lane("missing")


def test_lane_at_picks_the_nearest_centerline(straight_map):
    assert lane_at(straight_map, (50.0, 1.0)).id == "left"
    assert lane_at(straight_map, (50.0, -2.5)).id == "right"
    assert lane_at(straight_map, (50.0, 4.0)) is None


def test_lane_at_heading_hint_ignores_opposite_lanes(straight_map):
    assert lane_at(straight_map, (50.0, 1.0), heading=3.14159) is None


def test_goals_of_the_exit_road(s1_map):
    state = VehicleState((20.0, -1.75), 0.0, 8.0)
    goals = generate_goals(s1_map, state, None)
    assert all(g.kind == GoalKind.LOCATION for g in goals)
    centers = sorted(g.center for g in goals)
    assert centers[0] == pytest.approx((80.0, -70.0))
    # both east lane ends merge into one goal across the road
    assert centers[1] == pytest.approx((150.0, 0.0))
    assert len(goals) == 2


def test_goals_clip_to_the_view(straight_map):
    state = VehicleState((10.0, -1.75), 0.0, 8.0)
    goals = generate_goals(straight_map, state, ViewRegion((10.0, -1.75), 30.0))
    assert len(goals) == 1
    assert goals[0].center[0] < 40.0 + 1e-6


def test_stopped_vehicle_in_view_adds_a_stopping_goal(straight_map):
    state = VehicleState((10.0, -1.75), 0.0, 8.0)
    parked = VehicleState((40.0, 1.75), 0.0, 0.0)
    goals = generate_goals(straight_map, state, None, traffic=[parked])
    stopping = [g for g in goals if g.kind == GoalKind.STOPPING]
    assert len(stopping) == 1
    assert stopping[0].center == (40.0, 1.75)
    assert stopping[0].requires_zero_velocity


def test_stopping_goal_needs_standstill():
    goal = Goal.stopping((0.0, 0.0), 2.0)
    assert not goal.satisfied_by((0.5, 0.0), 3.0)
    assert goal.satisfied_by((0.5, 0.0), 0.0)
    assert Goal.location((0.0, 0.0), 2.0).satisfied_by((0.5, 0.0), 3.0)
