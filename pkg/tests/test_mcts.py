"""
Tests for the tree statistics, macro selection and the MCTS planner.
"""

import json
import math

import pytest

from goal_driving_server.core.agents import EgoAgent
from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.macro_actions import MacroAction
from goal_driving_server.core.mcts import MctsConfig, MctsResult, TreeNode, backup, plan, select_macro
from goal_driving_server.core.road_map import Goal, GoalKind
from goal_driving_server.core.simulator import Vehicle, WorldState
from goal_driving_server.core.trajectory import VehicleState

A = MacroAction.CONTINUE
B = MacroAction.CHANGE_LEFT
C = MacroAction.CONTINUE_NEXT_EXIT
D = MacroAction.STOP


@pytest.fixture
def searched_root():
    root = TreeNode((0, ()))
    backup([(root, A), (root.child(A), C)], -0.5)
    backup([(root, B)], -0.2)
    backup([(root, A), (root.child(A), D)], -0.1)
    return root


class TestBackup:
    def test_leaf_takes_reward(self, searched_root):
        child = searched_root.children[A]
        assert child.q == {C: pytest.approx(-0.5), D: pytest.approx(-0.1)}
        assert child.visits == {C: 1, D: 1}

    def test_parent_takes_best_child_value(self, searched_root):
        # first visit saw max(-0.5) = -0.5, second max(-0.5, -0.1) = -0.1; mean of the two
        assert searched_root.q[A] == pytest.approx(-0.3)
        assert searched_root.q[B] == pytest.approx(-0.2)
        assert searched_root.total_visits == 3

    def test_child_keys_extend_history(self, searched_root):
        assert searched_root.children[A].key == (1, (A,))

    def test_empty_path(self):
        with pytest.raises(ContractError):
            backup([], -1.0)

    def test_best_value_needs_a_visit(self):
        with pytest.raises(ContractError):
            TreeNode((0, ())).best_value()


class TestSelectMacro:
    def test_unvisited_first_in_fixed_order(self, searched_root):
        assert select_macro(searched_root, [MacroAction.STOP, A, B, MacroAction.CHANGE_RIGHT], MctsConfig()) == (
            MacroAction.CHANGE_RIGHT
        )

    def test_upper_confidence_bound(self, searched_root):
        # A: -0.3 + sqrt(2) * sqrt(ln 3 / 2) = 0.748, B: -0.2 + sqrt(2) * sqrt(ln 3) = 1.282
        assert select_macro(searched_root, [A, B], MctsConfig()) == B

    def test_greedy_without_exploration(self, searched_root):
        searched_root.visits[B] = 2
        searched_root.q[B] = -0.4
        assert select_macro(searched_root, [A, B], MctsConfig(ucb_c=0.0)) == A

    def test_ties_go_to_lower_index(self):
        node = TreeNode((0, ()), q={A: -0.2, B: -0.2}, visits={A: 1, B: 1})
        assert select_macro(node, [B, A], MctsConfig()) == A

    def test_nothing_applicable(self):
        with pytest.raises(ContractError):
            select_macro(TreeNode((0, ())), [], MctsConfig())


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"simulations": 0}, {"max_depth": 0}, {"collision_reward": 0.5}, {"tick_period": 0.0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            MctsConfig(**kwargs)

    def test_defaults(self):
        cfg = MctsConfig()
        assert cfg.simulations == 30
        assert cfg.max_depth == 5
        assert cfg.ucb_c == pytest.approx(math.sqrt(2))
        assert cfg.reward.time_scale == 60.0


def test_result_record_is_json_ready():
    result = MctsResult(A, {A: -0.123456789, B: -1.0}, {A: 3, B: 1}, {"v1": {"location@1.0,2.0": 4}}, 2.5)
    record = json.loads(json.dumps(result.record()))
    assert record["macro"] == "Continue"
    assert record["q"] == {"Continue": -0.123457, "ChangeLeft": -1.0}
    assert record["visits"] == {"Continue": 3, "ChangeLeft": 1}
    assert record["t"] == 2.5


def test_plan_leaves_world_untouched(straight_map):
    ego_state = VehicleState((5.0, -1.75), 0.0, 10.0)
    world = WorldState()
    world.add(Vehicle("ego", ego_state, EgoAgent(), is_ego=True))
    goal = Goal(GoalKind.LOCATION, (95.0, -1.75), 3.0)
    result = plan(world, "ego", goal, {}, straight_map, MctsConfig(simulations=4, max_depth=2))
    assert result.macro in (A, B)
    assert sum(result.visits.values()) == 4
    assert world.time == 0.0
    assert world.vehicles["ego"].state == ego_state
    assert len(world.vehicles["ego"].history) == 1
