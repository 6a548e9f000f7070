import pytest

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.macro_actions import (
    MacroAction,
    MacroContext,
    applicable_macros,
    expand_macro,
    macro_terminated,
    plan_macro,
)
from goal_driving_server.core.maneuvers import ManeuverKind, TrafficForecast
from goal_driving_server.core.road_map import Goal, GoalKind, ViewRegion
from goal_driving_server.core.trajectory import VehicleState


def on_right(x=10.0, speed=10.0):
    return VehicleState((x, -1.75), 0.0, speed)


def test_macro_order():
    assert [m.order for m in MacroAction] == list(range(7))
    assert MacroAction.CONTINUE.order < MacroAction.CHANGE_LEFT.order < MacroAction.STOP.order


def test_applicable_on_right_lane(straight_map):
    assert applicable_macros(on_right(), straight_map) == [MacroAction.CONTINUE, MacroAction.CHANGE_LEFT]


def test_applicable_on_left_lane(straight_map):
    state = VehicleState((10.0, 1.75), 0.0, 10.0)
    assert applicable_macros(state, straight_map) == [MacroAction.CONTINUE, MacroAction.CHANGE_RIGHT]


def test_off_road_has_no_macros(straight_map):
    assert applicable_macros(VehicleState((50.0, 30.0), 0.0, 10.0), straight_map) == []


def test_change_blocked_by_vehicle_alongside(straight_map):
    other = VehicleState((10.0, 1.75), 0.0, 10.0)
    ctx = MacroContext(forecast=TrafficForecast(straight_map, [other]))
    assert MacroAction.CHANGE_LEFT not in applicable_macros(on_right(), straight_map, ctx)


def test_stop_needs_stopping_goal_ahead(straight_map):
    with pytest.raises(ContractError):
        expand_macro(MacroAction.STOP, on_right(), straight_map)
    goal = Goal(GoalKind.STOPPING, (60.0, -1.75))
    ctx = MacroContext(goals=(goal,))
    assert MacroAction.STOP in applicable_macros(on_right(), straight_map, ctx)
    maneuvers = expand_macro(MacroAction.STOP, on_right(), straight_map, ctx)
    assert [m.kind for m in maneuvers] == [ManeuverKind.LANE_FOLLOW, ManeuverKind.STOP]
    assert maneuvers[-1].stopping_point == pytest.approx((60.0, -1.75))


def test_stopping_goal_behind_is_ignored(straight_map):
    ctx = MacroContext(goals=(Goal(GoalKind.STOPPING, (5.0, -1.75)),))
    assert MacroAction.STOP not in applicable_macros(on_right(), straight_map, ctx)


def test_change_left_expands_to_lane_change(straight_map):
    maneuvers = expand_macro(MacroAction.CHANGE_LEFT, on_right(), straight_map)
    assert maneuvers[-1].kind == ManeuverKind.LANE_CHANGE_LEFT


def test_continue_ends_at_view_boundary(straight_map):
    ctx = MacroContext(view=ViewRegion((10.0, -1.75), 30.0))
    mp = plan_macro(MacroAction.CONTINUE, on_right(), straight_map, ctx)
    assert mp.macro == MacroAction.CONTINUE
    assert mp.hold_time == 0.0
    assert 30.0 < mp.end_state.x <= 40.5
    assert mp.duration > 0.0


def test_continue_to_lane_end(straight_map):
    mp = plan_macro(MacroAction.CONTINUE, on_right(), straight_map)
    assert mp.end_state.x == pytest.approx(100.0, abs=1.0)
    assert mp.end_state.y == pytest.approx(-1.75, abs=0.1)


def test_change_left_terminates_on_target_lane(straight_map):
    maneuvers = expand_macro(MacroAction.CHANGE_LEFT, on_right(), straight_map)
    assert not macro_terminated(maneuvers, on_right(), straight_map)
    assert macro_terminated(maneuvers, VehicleState((40.0, 1.75), 0.0, 10.0), straight_map)
    # on the target lane but not yet aligned with it
    assert not macro_terminated(maneuvers, VehicleState((40.0, 1.75), 0.5, 10.0), straight_map)
