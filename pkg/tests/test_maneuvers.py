import math

import numpy as np
import pytest

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.macro_actions import MacroAction, expand_macro
from goal_driving_server.core.maneuvers import (
    ManeuverConfig,
    ManeuverInstance,
    ManeuverKind,
    TrafficForecast,
    give_way_hold_time,
    instance_applicable,
    junction_blocked,
    maneuver_applicable,
    maneuver_terminated,
    plan_maneuver,
)
from goal_driving_server.core.trajectory import VehicleState


def on_right(x=10.0, speed=10.0):
    return VehicleState((x, -1.75), 0.0, speed)


class TestApplicability:
    def test_lane_changes_need_a_neighbor(self, straight_map):
        assert maneuver_applicable(ManeuverKind.LANE_CHANGE_LEFT, on_right(), straight_map)
        assert not maneuver_applicable(ManeuverKind.LANE_CHANGE_RIGHT, on_right(), straight_map)

    def test_no_turns_away_from_junctions(self, straight_map):
        assert not maneuver_applicable(ManeuverKind.TURN_LEFT, on_right(), straight_map)
        assert not maneuver_applicable(ManeuverKind.GIVE_WAY, on_right(), straight_map)

    def test_off_road_makes_nothing_applicable(self, straight_map):
        off_road = VehicleState((50.0, 30.0), 0.0, 10.0)
        assert not any(maneuver_applicable(kind, off_road, straight_map) for kind in ManeuverKind)


class TestPlanning:
    def test_lane_follow_stays_on_lane(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.LANE_FOLLOW, ("right",), termination_point=(100.0, -1.75))
        traj = plan_maneuver(inst, on_right(speed=6.0), straight_map)
        assert traj.speeds[0] == pytest.approx(6.0)
        assert np.all(np.abs(traj.xy[:, 1] + 1.75) < 0.05)
        assert np.all(traj.speeds <= 10.0 + 1e-9)
        assert traj.end_point[0] == pytest.approx(100.0, abs=1.0)

    def test_stop_ends_at_rest_on_the_point(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.STOP, ("right",), stopping_point=(30.0, -1.75))
        traj = plan_maneuver(inst, on_right(speed=5.0), straight_map)
        assert traj.final_speed == 0.0
        assert traj.end_point == pytest.approx((30.0, -1.75), abs=0.5)

    def test_lane_change_right_on_exit_layout(self, s1_map):
        state = VehicleState((20.0, 1.75), 0.0, 10.0)
        inst = expand_macro(MacroAction.CHANGE_RIGHT, state, s1_map)[-1]
        assert inst.kind == ManeuverKind.LANE_CHANGE_RIGHT
        traj = plan_maneuver(inst, state, s1_map)
        assert traj.end_point[1] == pytest.approx(-1.75, abs=0.1)
        assert traj.end_point[0] <= 20.0 + ManeuverConfig().lane_change_length + 3.0
        assert maneuver_terminated(inst, VehicleState(tuple(traj.end_point), 0.0, 10.0), s1_map)

    def test_off_road_start_is_rejected(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.LANE_FOLLOW, ("right",), termination_point=(100.0, -1.75))
        with pytest.raises(ContractError):
            plan_maneuver(inst, VehicleState((50.0, 30.0), 0.0, 10.0), straight_map)


class TestTermination:
    def test_stop_needs_rest_near_the_point(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.STOP, ("right",), stopping_point=(30.0, -1.75))
        assert maneuver_terminated(inst, VehicleState((29.5, -1.75), 0.0, 0.0), straight_map)
        assert not maneuver_terminated(inst, VehicleState((29.5, -1.75), 0.0, 3.0), straight_map)
        assert not maneuver_terminated(inst, VehicleState((20.0, -1.75), 0.0, 0.0), straight_map)

    def test_lane_follow_ends_at_termination_point(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.LANE_FOLLOW, ("right",), termination_point=(60.0, -1.75))
        assert not maneuver_terminated(inst, on_right(40.0), straight_map)
        assert maneuver_terminated(inst, on_right(60.0), straight_map)


class TestBoundInstances:
    def test_lane_change_onto_own_lane_is_rejected(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.LANE_CHANGE_LEFT, ("left", "left"))
        state = VehicleState((10.0, 1.75), 0.0, 10.0)
        assert not instance_applicable(inst, state, straight_map)
        with pytest.raises(ContractError):
            plan_maneuver(inst, state, straight_map)

    def test_turn_without_a_junction_is_rejected(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.TURN_LEFT, ("right",))
        with pytest.raises(ContractError):
            plan_maneuver(inst, on_right(), straight_map)

    def test_lane_change_across_the_boundary_may_finish(self, straight_map):
        inst = ManeuverInstance(ManeuverKind.LANE_CHANGE_LEFT, ("right", "left"))
        assert instance_applicable(inst, VehicleState((30.0, 1.0), 0.3, 10.0), straight_map)


def side_road(y, speed=0.0, time=0.0):
    return VehicleState((1.75, y), math.pi / 2, speed, 0.0, time)


def main_road(x, speed=10.0):
    return VehicleState((x, -1.75), 0.0, speed)


@pytest.fixture
def left_exit(t_junction_map):
    give_way, turn = expand_macro(MacroAction.EXIT_LEFT, side_road(-20.0, 8.0), t_junction_map)
    return give_way, turn


class TestTJunction:
    def test_exit_left_gives_way_to_the_main_road(self, left_exit):
        give_way, turn = left_exit
        assert give_way.kind == ManeuverKind.GIVE_WAY
        assert "c_we_straight" in give_way.relevant_lanes
        assert turn.kind == ManeuverKind.TURN_LEFT
        assert turn.lane_ids[-1] == "w_west"

    def test_turn_lands_on_the_exit_lane(self, t_junction_map, left_exit):
        _, turn = left_exit
        traj = plan_maneuver(turn, side_road(-9.0, 3.0), t_junction_map)
        x, y = traj.end_point
        assert t_junction_map.lane("w_west").contains((x, y))
        assert y == pytest.approx(1.75, abs=0.2)
        assert x < -8.0
        assert maneuver_terminated(turn, VehicleState((x, y), math.pi, 5.0), t_junction_map)

    def test_turn_out_of_reach_is_rejected(self, t_junction_map, left_exit):
        _, turn = left_exit
        with pytest.raises(ContractError):
            plan_maneuver(turn, side_road(-60.0, 8.0), t_junction_map)

    def test_give_way_slows_to_creep_at_the_hold_point(self, t_junction_map, left_exit):
        give_way, _ = left_exit
        cfg = ManeuverConfig()
        traj = plan_maneuver(give_way, side_road(-20.0, 8.0), t_junction_map, cfg)
        assert traj.speeds[0] == pytest.approx(8.0)
        assert traj.final_speed <= cfg.creep_speed + 1e-9
        assert traj.end_point[1] == pytest.approx(-8.0, abs=0.5)

    def test_oncoming_vehicle_in_the_gap_blocks(self, t_junction_map, left_exit):
        give_way, _ = left_exit
        cfg = ManeuverConfig()
        forecast = TrafficForecast(t_junction_map, [main_road(-30.0)])
        waiting = side_road(-9.0)
        assert junction_blocked(t_junction_map, give_way, waiting, forecast, cfg)
        assert not maneuver_terminated(give_way, waiting, t_junction_map, cfg, forecast)
        # released once the vehicle is past the crossing
        assert not junction_blocked(t_junction_map, give_way, waiting, forecast, cfg, time=4.0)
        hold = give_way_hold_time(t_junction_map, give_way, waiting, forecast, cfg)
        assert 0.0 < hold < cfg.max_hold_time
        assert hold == pytest.approx(3.5)

    def test_vehicle_that_passed_does_not_block(self, t_junction_map, left_exit):
        give_way, _ = left_exit
        forecast = TrafficForecast(t_junction_map, [main_road(20.0)])
        waiting = side_road(-9.0)
        assert not junction_blocked(t_junction_map, give_way, waiting, forecast, ManeuverConfig())
        assert maneuver_terminated(give_way, waiting, t_junction_map, ManeuverConfig(), forecast)

    def test_conservative_give_way_holds_longer(self, t_junction_map, left_exit):
        give_way, _ = left_exit
        forecast = TrafficForecast(t_junction_map, [main_road(-60.0)])
        waiting = side_road(-9.0)
        normal = ManeuverConfig()
        conservative = ManeuverConfig(conservative_give_way=True)
        assert not junction_blocked(t_junction_map, give_way, waiting, forecast, normal)
        assert give_way_hold_time(t_junction_map, give_way, waiting, forecast, normal) == 0.0
        assert junction_blocked(t_junction_map, give_way, waiting, forecast, conservative)
        assert give_way_hold_time(t_junction_map, give_way, waiting, forecast, conservative) == pytest.approx(6.5)
