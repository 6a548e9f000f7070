"""
Tests for goal recognition by inverse planning.
"""

import math

import numpy as np
import pytest

from conftest import straight_history
from goal_driving_server.core.exceptions import ContractError, ReconstructionInfeasibleError
from goal_driving_server.core.goal_recognition import (
    GoalRecognitionConfig,
    GoalRecognizer,
    ManeuverDetection,
    TrajectoryPredictionConfig,
    boltzmann,
    detect_maneuver_simulated,
    fill_occlusions,
    goal_posteriors,
)
from goal_driving_server.core.inverse_planner import AStarBudget
from goal_driving_server.core.maneuvers import ManeuverKind
from goal_driving_server.core.road_map import Goal, GoalKind
from goal_driving_server.core.trajectory import VehicleState, trajectory_from_states

LF = ManeuverKind.LANE_FOLLOW
RIGHT_END = Goal(GoalKind.LOCATION, (95.0, -1.75))
LEFT_END = Goal(GoalKind.LOCATION, (95.0, 1.75))
BEHIND = Goal(GoalKind.LOCATION, (-20.0, -1.75))


@pytest.fixture
def config():
    return GoalRecognitionConfig(budget=AStarBudget(max_time=math.inf))


@pytest.fixture
def history():
    return straight_history(5.0, -1.75, 10.0, 5)


class TestBoltzmann:
    def test_two_rewards(self):
        assert boltzmann([0.0, -1.0], 1.0) == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_larger_gamma_sharpens(self):
        soft = boltzmann([0.0, -1.0], 0.5)
        sharp = boltzmann([0.0, -1.0], 4.0)
        assert sharp[0] > soft[0] > 0.5

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_prediction_rejects_non_positive_gamma(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            TrajectoryPredictionConfig(gamma=gamma)

    def test_empty(self):
        with pytest.raises(ContractError):
            boltzmann([], 1.0)


class TestManeuverDetection:
    def test_true_maneuver_gets_p_correct(self):
        detection = detect_maneuver_simulated(
            LF, [LF, ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.STOP], 0.9
        )
        assert detection.probabilities[LF] == pytest.approx(0.9)
        assert detection.probabilities[ManeuverKind.STOP] == pytest.approx(0.05)
        assert detection.mode == LF
        assert detection.support == [LF, ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.STOP]

    def test_single_applicable_is_certain(self):
        assert detect_maneuver_simulated(LF, [LF], 0.9).probabilities == {LF: 1.0}

    def test_true_maneuver_must_apply(self):
        with pytest.raises(ContractError):
            detect_maneuver_simulated(ManeuverKind.TURN_LEFT, [LF], 0.9)

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ContractError):
            ManeuverDetection({LF: 0.5})


class TestPosterior:
    def test_normalized_with_infeasible_goal_at_zero(self, straight_map, history, config):
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[RIGHT_END, LEFT_END, BEHIND])
        probs = posterior.goal_probabilities()
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)
        assert probs[BEHIND] == 0.0
        assert not posterior.hypothesis(LF, BEHIND).feasible
        assert posterior.hypothesis(LF, RIGHT_END).feasible
        assert posterior.time == pytest.approx(2.0)

    def test_zero_prior_removes_goal(self, straight_map, history):
        cfg = GoalRecognitionConfig(budget=AStarBudget(max_time=math.inf), priors={RIGHT_END.goal_id: 0.0})
        posterior = goal_posteriors(history, LF, straight_map, cfg, goals=[RIGHT_END, LEFT_END])
        assert posterior.goal_probabilities()[RIGHT_END] == 0.0
        assert posterior.goal_probabilities()[LEFT_END] == pytest.approx(1.0)
        assert posterior.most_likely_goal() == LEFT_END

    def test_probability_at_goal_location(self, straight_map, history, config):
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[RIGHT_END, LEFT_END])
        probs = posterior.goal_probabilities()
        assert posterior.probability_at((95.0, -1.75)) == pytest.approx(probs[RIGHT_END])
        assert posterior.probability_at((50.0, 20.0)) == 0.0

    def test_predictions_weighted_per_goal(self, straight_map, history, config):
        prediction = TrajectoryPredictionConfig(gamma=1.0, k_traj=2)
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[RIGHT_END], prediction=prediction)
        hyp = posterior.hypothesis(LF, RIGHT_END)
        assert 1 <= len(hyp.trajectories) <= 2
        assert sum(p for _, p in hyp.trajectories) == pytest.approx(1.0)
        assert RIGHT_END.contains(hyp.best_trajectory.end_point)

    def test_all_goals_infeasible(self, straight_map, history, config):
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[BEHIND])
        assert posterior.all_infeasible()
        assert posterior.most_likely_goal() is None
        kind, goal, traj = posterior.sample(np.random.default_rng(0))
        assert kind == LF and goal is None and traj is None

    def test_collapse_to_mode(self, straight_map, history, config):
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[RIGHT_END, LEFT_END, BEHIND])
        collapsed = posterior.collapse_to_mode()
        probs = collapsed.goal_probabilities()
        assert sorted(probs.values()) == [0.0, 0.0, 1.0]
        assert probs[posterior.most_likely_goal()] == 1.0
        assert collapsed.detection.probabilities == {LF: 1.0}

    def test_rows(self, straight_map, history, config):
        posterior = goal_posteriors(history, LF, straight_map, config, goals=[RIGHT_END, BEHIND])
        rows = posterior.rows()
        assert len(rows) == 2
        assert {r[4] for r in rows} == {RIGHT_END.goal_id, BEHIND.goal_id}
        assert all(r[2] == "lane-follow" and r[3] == 1.0 for r in rows)


def test_recognizer_reuses_plans_for_small_moves(straight_map, config):
    recognizer = GoalRecognizer(straight_map, config)
    full = straight_history(5.0, -1.75, 10.0, 6, dt=0.05)
    recognizer.recognize("v", full[:5], goals=[RIGHT_END], detection=ManeuverDetection.certain(LF))
    searches = recognizer.searches
    recognizer.recognize("v", full, goals=[RIGHT_END], detection=ManeuverDetection.certain(LF))
    assert recognizer.reuses == 1
    assert recognizer.searches == searches
    recognizer.reset("v")
    recognizer.recognize("v", full, goals=[RIGHT_END], detection=ManeuverDetection.certain(LF))
    assert recognizer.searches > searches


def test_empty_history(straight_map):
    with pytest.raises(ContractError):
        goal_posteriors([], LF, straight_map)


def observed(x0, speed, t0, count=3, dt=0.5):
    return trajectory_from_states(
        [VehicleState((x0 + speed * dt * k, -1.75), 0.0, speed, 0.0, t0 + dt * k) for k in range(count)]
    )


class TestFillOcclusions:
    def test_bridges_gap(self, straight_map, config):
        first = observed(5.0, 10.0, 0.0)
        second = observed(35.0, 10.0, 3.0)
        stitched = fill_occlusions([first, second], straight_map, config)
        assert stitched.is_timed
        assert stitched.end_point == pytest.approx((45.0, -1.75), abs=0.1)
        assert stitched.length == pytest.approx(40.0, abs=1.5)
        assert np.all(np.diff(stitched.times) > 0)

    def test_observed_samples_keep_their_times(self, straight_map, config):
        first = observed(5.0, 10.0, 0.0)
        second = observed(40.0, 2.0, 10.0)
        stitched = fill_occlusions([first, second], straight_map, config)
        assert stitched.times[0] == pytest.approx(0.0)
        assert stitched.times[-1] == pytest.approx(11.0)
        assert stitched.end_point == pytest.approx((42.0, -1.75), abs=0.1)
        for t in list(first.times) + list(second.times):
            assert np.min(np.abs(stitched.times - t)) < 1e-6
        states = {round(s.time, 6): s for s in stitched.states()}
        assert states[10.0].position == pytest.approx((40.0, -1.75), abs=0.1)
        assert states[10.0].speed == pytest.approx(2.0)
        assert states[1.0].speed == pytest.approx(10.0)
        assert np.all(np.diff(stitched.times) > 0)
        assert np.all(np.diff(stitched.positions) >= -1e-9)

    def test_bridge_covers_the_gap_at_its_average_speed(self, straight_map, config):
        stitched = fill_occlusions([observed(5.0, 10.0, 0.0), observed(40.0, 2.0, 10.0)], straight_map, config)
        inside = (stitched.times > 1.0) & (stitched.times < 10.0)
        assert np.any(inside)
        assert np.all(stitched.speeds[inside] < 10.0)

    @pytest.mark.parametrize("t0", [0.0, 0.5, 1.0])
    def test_overlapping_fragments_are_rejected(self, straight_map, config, t0):
        with pytest.raises(ContractError, match="time-ordered"):
            fill_occlusions([observed(5.0, 10.0, 0.0), observed(35.0, 10.0, t0)], straight_map, config)

    def test_single_fragment_is_returned(self, straight_map, config):
        first = observed(5.0, 10.0, 0.0)
        assert fill_occlusions([first], straight_map, config) is first

    def test_unreachable_fragment(self, straight_map, config):
        first = observed(50.0, 10.0, 0.0)
        second = observed(10.0, 10.0, 3.0)
        with pytest.raises(ReconstructionInfeasibleError):
            fill_occlusions([first, second], straight_map, config)

    def test_needs_fragments(self, straight_map):
        with pytest.raises(ContractError):
            fill_occlusions([], straight_map)
