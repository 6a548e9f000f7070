"""
Ego decision-making policies compared in the experiments.

Every policy turns what the ego currently observes into one macro action.
They differ only in how they predict the other vehicles and in how far
they look ahead.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from goal_driving_server.core.agents import extend_trajectory
from goal_driving_server.core.exceptions import GoalDrivingError
from goal_driving_server.core.goal_recognition import GoalPosterior, GoalRecognizer
from goal_driving_server.core.maneuvers import ManeuverConfig, ManeuverKind, TrafficForecast, complete_current_maneuver
from goal_driving_server.core.mcts import MctsResult, ShortHorizonPlanner, plan
from goal_driving_server.core.road_map import STOP_SPEED_THRESHOLD, Goal, RoadMap, ViewRegion
from goal_driving_server.core.simulator import WorldState
from goal_driving_server.core.trajectory import Trajectory, VehicleState
from goal_driving_server.utils.config_utils import PlannerConfig

logger = logging.getLogger(__name__)

AVERAGE_WINDOW = 2.0


class AlgorithmKind(str, Enum):
    GOAL_RECOGNITION = "IGP2"
    GOAL_RECOGNITION_MAP = "IGP2-MAP"
    CONSTANT_VELOCITY = "CVel"
    CONSTANT_VELOCITY_AVERAGE = "CVel-Avg"
    CONSERVATIVE = "Cons"
    SHORT_HORIZON = "SH-CVel"

    @property
    def uses_recognition(self) -> bool:
        return self in (AlgorithmKind.GOAL_RECOGNITION, AlgorithmKind.GOAL_RECOGNITION_MAP)

    @classmethod
    def parse(cls, name: str) -> "AlgorithmKind":
        for kind in cls:
            if kind.value.lower() == name.lower() or kind.name.lower() == name.lower():
                return kind
        raise ValueError(f"Unknown algorithm {name}; expected one of {', '.join(k.value for k in cls)}")


@dataclass
class Observation:
    """What the ego knows at a decision point."""

    world: WorldState
    ego_id: str
    ego_goal: Goal
    histories: Dict[str, List[VehicleState]]
    maneuvers: Dict[str, str] = field(default_factory=dict)
    view: Optional[ViewRegion] = None

    @property
    def others(self) -> List[str]:
        return sorted(vid for vid in self.world.vehicles if vid != self.ego_id)


def maneuver_kind(label: str) -> Optional[ManeuverKind]:
    try:
        return ManeuverKind(label)
    except ValueError:
        return None


def average_speed(history: Sequence[VehicleState], window: float = AVERAGE_WINDOW) -> float:
    """Mean speed over the last window seconds of a history."""
    if not history:
        return 0.0
    now = history[-1].time
    recent = [s.speed for s in history if s.time >= now - window - 1e-9]
    return float(np.mean(recent))


def constant_velocity_prediction(
    history: Sequence[VehicleState],
    label: str,
    road_map: RoadMap,
    cfg: ManeuverConfig,
    horizon: float,
    averaged: bool = False,
) -> Optional[Trajectory]:
    """
    Finish the vehicle's current maneuver, then keep going along the lane,
    all at its current (or recently averaged) speed. None for vehicles
    standing still.
    """
    state = history[-1]
    speed = average_speed(history) if averaged else state.speed
    if speed <= STOP_SPEED_THRESHOLD:
        return None
    kind = maneuver_kind(label)
    traj = None
    if kind is not None and kind != ManeuverKind.STOP:
        try:
            _, traj = complete_current_maneuver(kind, state, road_map, cfg)
        except GoalDrivingError as e:
            logger.debug("Cannot complete %s from (%.1f, %.1f): %s", label, state.x, state.y, e)
    if traj is None:
        return TrafficForecast(road_map, [state.replace(speed=speed)]).trajectory(0, horizon)
    traj = traj.with_speeds(np.full(len(traj.speeds), speed))
    return extend_trajectory(traj, road_map, speed * horizon)


class EgoPolicy:
    """Chooses the ego's next macro action."""

    kind: AlgorithmKind

    def __init__(self, road_map: RoadMap, config: PlannerConfig, rng: np.random.Generator):
        self.road_map = road_map
        self.config = config
        self.rng = rng
        self.posteriors: Dict[str, GoalPosterior] = {}

    @property
    def maneuver_config(self) -> ManeuverConfig:
        return self.config.maneuver

    def predictions(self, obs: Observation, averaged: bool = False) -> Dict[str, Optional[Trajectory]]:
        horizon = self.config.mcts.rollout_time_cap
        return {
            vid: constant_velocity_prediction(
                obs.histories[vid], obs.maneuvers.get(vid, ""), self.road_map, self.maneuver_config, horizon, averaged
            )
            for vid in obs.others
        }

    def decide(self, obs: Observation) -> MctsResult:
        raise NotImplementedError


class RecognitionPolicy(EgoPolicy):
    """MCTS over goal posteriors from inverse planning; optionally only their most likely mode."""

    def __init__(self, road_map: RoadMap, config: PlannerConfig, rng: np.random.Generator, map_only: bool = False):
        super().__init__(road_map, config, rng)
        self.kind = AlgorithmKind.GOAL_RECOGNITION_MAP if map_only else AlgorithmKind.GOAL_RECOGNITION
        self.map_only = map_only
        self.recognizer = GoalRecognizer(road_map, config.recognition, config.prediction)

    def recognize(self, obs: Observation) -> Dict[str, GoalPosterior]:
        posteriors = {}
        states = {vid: v.state for vid, v in obs.world.vehicles.items()}
        for vid in obs.others:
            traffic = [s for other, s in sorted(states.items()) if other != vid]
            try:
                posterior = self.recognizer.recognize(
                    vid,
                    obs.histories[vid],
                    true_maneuver=maneuver_kind(obs.maneuvers.get(vid, "")),
                    traffic=traffic,
                    view=obs.view,
                )
            except GoalDrivingError as e:
                logger.debug("Goal recognition failed for %s: %s", vid, e)
                continue
            posteriors[vid] = posterior.collapse_to_mode() if self.map_only else posterior
        return posteriors

    def decide(self, obs: Observation) -> MctsResult:
        self.posteriors = self.recognize(obs)
        fallback = {vid: p for vid, p in self.predictions(obs).items() if vid not in self.posteriors}
        return plan(
            obs.world,
            obs.ego_id,
            obs.ego_goal,
            self.posteriors,
            self.road_map,
            self.config.mcts,
            self.config.sim,
            self.maneuver_config,
            view=obs.view,
            others=obs.others,
            rng=self.rng,
            predictions=fallback,
        )


class ConstantVelocityPolicy(EgoPolicy):
    """MCTS with every other vehicle predicted at constant velocity."""

    def __init__(
        self,
        road_map: RoadMap,
        config: PlannerConfig,
        rng: np.random.Generator,
        averaged: bool = False,
        conservative: bool = False,
    ):
        super().__init__(road_map, config, rng)
        self.averaged = averaged
        self.conservative = conservative
        if conservative:
            self.kind = AlgorithmKind.CONSERVATIVE
        else:
            self.kind = AlgorithmKind.CONSTANT_VELOCITY_AVERAGE if averaged else AlgorithmKind.CONSTANT_VELOCITY

    @property
    def maneuver_config(self) -> ManeuverConfig:
        if self.conservative:
            return replace(self.config.maneuver, conservative_give_way=True)
        return self.config.maneuver

    def decide(self, obs: Observation) -> MctsResult:
        return plan(
            obs.world,
            obs.ego_id,
            obs.ego_goal,
            {},
            self.road_map,
            self.config.mcts,
            self.config.sim,
            self.maneuver_config,
            view=obs.view,
            others=obs.others,
            rng=self.rng,
            predictions=self.predictions(obs, self.averaged),
        )


class ShortHorizonPolicy(EgoPolicy):
    """One macro followed by Continue, constant-velocity traffic, no tree search."""

    kind = AlgorithmKind.SHORT_HORIZON

    def __init__(self, road_map: RoadMap, config: PlannerConfig, rng: np.random.Generator):
        super().__init__(road_map, config, rng)
        self.planner = ShortHorizonPlanner(road_map, config.mcts, config.sim, config.maneuver)

    def decide(self, obs: Observation) -> MctsResult:
        return self.planner.plan(obs.world, obs.ego_id, obs.ego_goal, obs.view, obs.others, self.predictions(obs))


def predictor_for(kind: AlgorithmKind, road_map: RoadMap, config: PlannerConfig, rng: np.random.Generator) -> EgoPolicy:
    if kind == AlgorithmKind.GOAL_RECOGNITION:
        return RecognitionPolicy(road_map, config, rng)
    if kind == AlgorithmKind.GOAL_RECOGNITION_MAP:
        return RecognitionPolicy(road_map, config, rng, map_only=True)
    if kind == AlgorithmKind.CONSTANT_VELOCITY:
        return ConstantVelocityPolicy(road_map, config, rng)
    if kind == AlgorithmKind.CONSTANT_VELOCITY_AVERAGE:
        return ConstantVelocityPolicy(road_map, config, rng, averaged=True)
    if kind == AlgorithmKind.CONSERVATIVE:
        return ConstantVelocityPolicy(road_map, config, rng, conservative=True)
    return ShortHorizonPolicy(road_map, config, rng)
