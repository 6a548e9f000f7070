import itertools
import math

import pytest

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.inverse_planner import (
    AStarBudget,
    Plan,
    astar_plan,
    extract_trajectory,
    heuristic,
    replay_plan,
)
from goal_driving_server.core.macro_actions import MacroAction
from goal_driving_server.core.road_map import Goal, GoalKind
from goal_driving_server.core.trajectory import Trajectory, VehicleState, fit_reference_path

import numpy as np

DETERMINISTIC = AStarBudget(max_time=math.inf)
LEFT_END = Goal(GoalKind.LOCATION, (95.0, 1.75), 2.0)


def start_state():
    return VehicleState((5.0, -1.75), 0.0, 10.0)


def exhaustive_best_cost(start, goal, road_map, depth=3):
    macros = (MacroAction.CONTINUE, MacroAction.CHANGE_LEFT, MacroAction.CHANGE_RIGHT)
    best = math.inf
    for n in range(1, depth + 1):
        for sequence in itertools.product(macros, repeat=n):
            replayed = replay_plan(Plan(goal, sequence, (), None, 0.0, start), start, road_map)
            if replayed is not None:
                best = min(best, replayed.cost)
    return best


class TestHeuristic:
    def test_time_at_map_speed_limit(self, straight_map):
        goal = Goal(GoalKind.LOCATION, (100.0, -1.75))
        assert heuristic(VehicleState((0.0, -1.75), 0.0, 5.0), goal, straight_map) == pytest.approx(10.0)

    def test_faster_vehicle_lowers_bound(self, straight_map):
        goal = Goal(GoalKind.LOCATION, (100.0, -1.75))
        assert heuristic(VehicleState((0.0, -1.75), 0.0, 5.0), goal, straight_map, speed=20.0) == pytest.approx(5.0)

    def test_zero_inside_goal(self, straight_map):
        goal = Goal(GoalKind.LOCATION, (100.0, -1.75))
        assert heuristic(VehicleState((99.0, -1.75), 0.0, 5.0), goal, straight_map) == 0.0


class TestAStar:
    def test_first_plan_is_optimal(self, straight_map):
        plans = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)
        assert plans
        assert plans[0].macros[0] == MacroAction.CHANGE_LEFT
        assert plans[0].cost <= exhaustive_best_cost(start_state(), LEFT_END, straight_map) + 1e-6

    @pytest.mark.parametrize(
        "x, lane_y, goal_y",
        [(x, lane_y, goal_y) for x in (5.0, 20.0, 35.0, 50.0, 65.0) for lane_y in (-1.75, 1.75) for goal_y in (-1.75, 1.75)],
    )
    def test_first_plan_matches_enumeration(self, straight_map, x, lane_y, goal_y):
        start = VehicleState((x, lane_y), 0.0, 10.0)
        goal = Goal(GoalKind.LOCATION, (95.0, goal_y), 2.0)
        plans = astar_plan(start, None, goal, straight_map, DETERMINISTIC)
        assert plans
        assert plans[0].cost <= exhaustive_best_cost(start, goal, straight_map) + 1e-6

    def test_plans_in_cost_order(self, straight_map):
        plans = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)
        costs = [p.cost for p in plans]
        assert costs == sorted(costs)
        assert len(plans) <= DETERMINISTIC.max_plans

    def test_cost_bounded_by_heuristic(self, straight_map):
        plans = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)
        assert plans[0].cost >= heuristic(start_state(), LEFT_END, straight_map) - 1e-9

    def test_trajectory_ends_in_goal(self, straight_map):
        plan = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)[0]
        traj = extract_trajectory(plan)
        assert LEFT_END.contains(traj.end_point)

    def test_start_inside_goal(self, straight_map):
        state = VehicleState((95.0, 1.75), 0.0, 10.0)
        plans = astar_plan(state, None, LEFT_END, straight_map)
        assert len(plans) == 1
        assert plans[0].macros == ()
        assert plans[0].cost == 0.0

    def test_stopping_goal_needs_stop(self, straight_map):
        goal = Goal(GoalKind.STOPPING, (60.0, -1.75))
        plans = astar_plan(start_state(), None, goal, straight_map, DETERMINISTIC)
        assert plans
        assert plans[0].macros[-1] == MacroAction.STOP

    def test_unreachable_goal(self, straight_map):
        behind = Goal(GoalKind.LOCATION, (-20.0, -1.75))
        assert astar_plan(start_state(), None, behind, straight_map, DETERMINISTIC) == []

    def test_initial_segment_must_end_at_start(self, straight_map):
        path = fit_reference_path([(0.0, -1.75), (3.0, -1.75)])
        segment = Trajectory(path, np.array([0.0, 3.0]), np.array([10.0, 10.0]))
        with pytest.raises(ContractError):
            astar_plan(start_state(), segment, LEFT_END, straight_map)

    def test_trace_records_expansions(self, straight_map):
        trace = []
        astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC, trace=trace)
        assert trace[0]["depth"] == 0
        assert trace[0]["macros"] == []
        assert trace[0]["lane"] == "right"
        assert all(entry["f"] == pytest.approx(entry["cost"] + entry["h"]) for entry in trace)

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            AStarBudget(max_nodes=0)


class TestReplay:
    def test_replay_from_later_state(self, straight_map):
        plan = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)[0]
        replayed = replay_plan(plan, VehicleState((15.0, -1.75), 0.0, 10.0), straight_map)
        assert replayed is not None
        assert replayed.macros == plan.macros
        assert replayed.cost < plan.cost

    def test_replay_fails_once_inapplicable(self, straight_map):
        plan = astar_plan(start_state(), None, LEFT_END, straight_map, DETERMINISTIC)[0]
        assert replay_plan(plan, VehicleState((50.0, 1.75), 0.0, 10.0), straight_map) is None
