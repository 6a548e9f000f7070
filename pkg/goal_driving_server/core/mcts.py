"""
Monte Carlo Tree Search over macro actions.

Each simulation samples a maneuver, goal and trajectory for every other
vehicle from its goal posterior, then descends the tree choosing macros by
UCB1. The ego drives each macro closed loop in a cloned world while the
others track their sampled trajectories. Values are backed up with a
one-step off-policy rule: the leaf takes the simulation reward, every
parent the best value of its child.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.agents import (
    EgoAgent,
    ParkedAgent,
    TrajectoryAgent,
    cv_forecast,
    extend_trajectory,
    route_forecast,
)
from goal_driving_server.core.exceptions import ContractError, DegenerateInputError, GoalDrivingError, PlannerStuckError
from goal_driving_server.core.goal_recognition import GoalPosterior
from goal_driving_server.core.macro_actions import MacroAction, MacroContext, applicable_macros, expand_macro
from goal_driving_server.core.maneuvers import ManeuverConfig, ManeuverKind, TrafficForecast
from goal_driving_server.core.road_map import Goal, RoadMap, ViewRegion
from goal_driving_server.core.simulator import SimConfig, Vehicle, WorldState, step
from goal_driving_server.core.trajectory import RewardConfig, Trajectory, VehicleState, trajectory_from_states, trajectory_reward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MctsConfig:
    simulations: int = 30
    max_depth: int = 5
    collision_reward: float = -1.0
    termination_reward: float = -1.0
    ucb_c: float = math.sqrt(2)
    tick_period: float = 1.0
    rng_seed: int = 0
    rollout_time_cap: float = 30.0
    extension_length: float = 150.0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.simulations < 1 or self.max_depth < 1:
            raise ValueError("simulations and max_depth must be at least 1")
        if self.collision_reward > 0:
            raise ValueError("collision_reward must not be positive")
        if self.tick_period <= 0 or self.rollout_time_cap <= 0:
            raise ValueError("tick_period and rollout_time_cap must be positive")


@dataclass(eq=False)
class TreeNode:
    """Search node keyed by (depth, macro history) with per-macro Q and visit counts."""

    key: Tuple[int, Tuple[MacroAction, ...]]
    q: Dict[MacroAction, float] = field(default_factory=dict)
    visits: Dict[MacroAction, int] = field(default_factory=dict)
    children: Dict[MacroAction, "TreeNode"] = field(default_factory=dict)

    @property
    def total_visits(self) -> int:
        return sum(self.visits.values())

    def child(self, macro: MacroAction) -> "TreeNode":
        if macro not in self.children:
            depth, history = self.key
            self.children[macro] = TreeNode((depth + 1, history + (macro,)))
        return self.children[macro]

    def best_value(self) -> float:
        visited = [self.q[m] for m, n in self.visits.items() if n > 0]
        if not visited:
            raise ContractError(f"Node {self.key} has no visited macro")
        return max(visited)


class RolloutOutcome(str, Enum):
    COLLISION = "collision"
    GOAL_REACHED = "ego_goal_reached"
    IN_PROGRESS = "in_progress"
    TIMEOUT = "timeout"


@dataclass(frozen=True, eq=False)
class SampledWorld:
    """One draw of maneuver, goal and trajectory for every other vehicle."""

    samples: Dict[str, Tuple[Optional[ManeuverKind], Optional[Goal], Optional[Trajectory]]]

    def summary(self) -> Dict[str, str]:
        return {vid: goal.goal_id if goal is not None else "constant-velocity" for vid, (_, goal, _) in self.samples.items()}


@dataclass(frozen=True, eq=False)
class MctsResult:
    macro: MacroAction
    q: Dict[MacroAction, float]
    visits: Dict[MacroAction, int]
    samples: Dict[str, Dict[str, int]]
    time: float = 0.0

    def record(self) -> Dict[str, Any]:
        """Decision-log entry."""
        return {
            "t": round(self.time, 3),
            "macro": self.macro.value,
            "q": {m.value: round(v, 6) for m, v in self.q.items()},
            "visits": {m.value: n for m, n in self.visits.items()},
            "samples": self.samples,
        }


def select_macro(node: TreeNode, applicable: Sequence[MacroAction], cfg: MctsConfig) -> MacroAction:
    """UCB1: unvisited macros first in fixed order, then the highest upper bound; ties to the lower index."""
    if not applicable:
        raise ContractError("No applicable macro to select from")
    ordered = sorted(applicable, key=lambda m: m.order)
    for macro in ordered:
        if node.visits.get(macro, 0) == 0:
            return macro
    total = node.total_visits
    best, best_value = ordered[0], -math.inf
    for macro in ordered:
        value = node.q[macro] + cfg.ucb_c * math.sqrt(math.log(total) / node.visits[macro])
        if value > best_value + 1e-12:
            best, best_value = macro, value
    return best


def backup(path: Sequence[Tuple[TreeNode, MacroAction]], reward: float):
    """
    Update the selected branch from the leaf up. Each visit count is bumped
    before its Q moves toward the target by 1/visits.

    Raises:
        ContractError: the path is empty
    """
    if not path:
        raise ContractError("Cannot back up an empty path")
    for i in range(len(path) - 1, -1, -1):
        node, macro = path[i]
        node.visits[macro] = node.visits.get(macro, 0) + 1
        q = node.q.get(macro, 0.0)
        target = reward if i == len(path) - 1 else path[i + 1][0].best_value()
        node.q[macro] = q + (target - q) / node.visits[macro]


def sample_world(
    posteriors: Dict[str, GoalPosterior],
    rng: np.random.Generator,
    predictions: Optional[Dict[str, Optional[Trajectory]]] = None,
) -> SampledWorld:
    """Draw from every posterior in vehicle id order; fixed predictions are taken as they are."""
    samples = {vid: (None, None, traj) for vid, traj in (predictions or {}).items()}
    for vid in sorted(posteriors):
        samples[vid] = posteriors[vid].sample(rng)
    return SampledWorld(samples)


def rollout_world(
    world: WorldState,
    ego_id: str,
    sampled: SampledWorld,
    road_map: RoadMap,
    others: Sequence[str],
    cfg: MctsConfig,
    maneuver_config: ManeuverConfig,
) -> WorldState:
    """
    The ego and the observed vehicles only. Vehicles with a sampled
    trajectory track it, extended along their lane; the rest keep their
    lane at constant speed.
    """
    ego = world.vehicles[ego_id]
    sim = WorldState(world.time)
    routes = {}
    agents = {}
    forecast = TrafficForecast(road_map, [world.vehicles[vid].state for vid in others])
    for i, vid in enumerate(others):
        _, _, traj = sampled.samples.get(vid, (None, None, None))
        if traj is None:
            traj = forecast.trajectory(i, cfg.rollout_time_cap)
        if traj is None:
            agents[vid] = ParkedAgent()
            continue
        agent = TrajectoryAgent(extend_trajectory(traj, road_map, cfg.extension_length), road_map)
        agents[vid] = agent
        if agent.route:
            routes[vid] = agent.route
    sim.add(Vehicle(ego_id, ego.state, EgoAgent(maneuver_config, route_forecast(routes)), ego.goal, True))
    for vid in others:
        sim.add(Vehicle(vid, world.vehicles[vid].state, agents[vid]))
    return sim


def rollout_macro(
    macro: MacroAction,
    sim: WorldState,
    ego_id: str,
    ego_goal: Goal,
    road_map: RoadMap,
    ctx: MacroContext,
    cfg: MctsConfig,
    sim_config: SimConfig,
) -> Tuple[List[VehicleState], RolloutOutcome]:
    """Drive one macro to its termination, a collision, the ego goal, or the time cap."""
    ego = sim.vehicles[ego_id]
    ego.agent.follow(macro, expand_macro(macro, ego.state, road_map, ctx))
    cap = sim.time + cfg.rollout_time_cap
    states = []
    while sim.time < cap - 1e-9:
        step(sim, road_map, sim_config)
        states.append(ego.state)
        if ego.collided:
            return states, RolloutOutcome.COLLISION
        if ego_goal.satisfied_by(ego.state.position, ego.state.speed):
            return states, RolloutOutcome.GOAL_REACHED
        if ego.agent.idle:
            return states, RolloutOutcome.IN_PROGRESS
    return states, RolloutOutcome.TIMEOUT


def _ego_reward(states: Sequence[VehicleState], cfg: RewardConfig, dt: float) -> float:
    try:
        return trajectory_reward(trajectory_from_states(states), cfg, dt)
    except DegenerateInputError:
        # never left its start point
        return 0.0


def _argmax_macro(root: TreeNode) -> MacroAction:
    visited = sorted((m for m, n in root.visits.items() if n > 0), key=lambda m: m.order)
    best = visited[0]
    for macro in visited[1:]:
        if root.q[macro] > root.q[best] + 1e-12:
            best = macro
    return best


def plan(
    world: WorldState,
    ego_id: str,
    ego_goal: Goal,
    posteriors: Dict[str, GoalPosterior],
    road_map: RoadMap,
    cfg: Optional[MctsConfig] = None,
    sim_config: Optional[SimConfig] = None,
    maneuver_config: Optional[ManeuverConfig] = None,
    view: Optional[ViewRegion] = None,
    others: Optional[Sequence[str]] = None,
    rng: Optional[np.random.Generator] = None,
    predictions: Optional[Dict[str, Optional[Trajectory]]] = None,
) -> MctsResult:
    """
    Best macro for the ego in the current world.

    Args:
        world: Current world; it is cloned, never modified
        ego_id: Vehicle to plan for
        ego_goal: Where the ego is heading
        posteriors: Goal posteriors of the observed vehicles
        others: Vehicles simulated alongside the ego; defaults to every vehicle with a posterior or prediction
        rng: Random source for world sampling; seeded from cfg.rng_seed when omitted
        predictions: Fixed trajectories for vehicles predicted without goal recognition

    Raises:
        PlannerStuckError: no macro applies to the ego
    """
    cfg = cfg or MctsConfig()
    sim_config = sim_config or SimConfig()
    maneuver_config = maneuver_config or ManeuverConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    others = sorted(others if others is not None else set(posteriors) | set(predictions or {}))
    ego_state = world.vehicles[ego_id].state
    goals = (ego_goal,) if ego_goal.requires_zero_velocity else ()

    def context(sim: WorldState) -> MacroContext:
        return MacroContext(goals, view, cv_forecast(ego_id, sim, road_map), maneuver_config)

    root_macros = applicable_macros(ego_state, road_map, MacroContext(goals, view, None, maneuver_config))
    if not root_macros:
        raise PlannerStuckError(f"No macro action applies to {ego_id} at ({ego_state.x:.1f}, {ego_state.y:.1f})")
    if len(root_macros) == 1:
        return MctsResult(root_macros[0], {}, {}, {}, world.time)

    root = TreeNode((0, ()))
    sampled_goals: Dict[str, Counter] = {vid: Counter() for vid in others}
    for _ in range(cfg.simulations):
        sampled = sample_world(posteriors, rng, predictions)
        for vid, goal_id in sampled.summary().items():
            if vid in sampled_goals:
                sampled_goals[vid][goal_id] += 1
        sim = rollout_world(world, ego_id, sampled, road_map, others, cfg, maneuver_config)
        ego = sim.vehicles[ego_id]
        node, path, trajectory = root, [], [ego.state]
        reward = cfg.termination_reward
        while True:
            ctx = context(sim)
            macros = root_macros if node is root else applicable_macros(ego.state, road_map, ctx)
            if not macros:
                break
            macro = select_macro(node, macros, cfg)
            path.append((node, macro))
            try:
                states, outcome = rollout_macro(macro, sim, ego_id, ego_goal, road_map, ctx, cfg, sim_config)
            except GoalDrivingError as e:
                logger.debug("Rollout of %s failed: %s", macro.value, e)
                break
            trajectory.extend(states)
            if outcome == RolloutOutcome.COLLISION:
                reward = cfg.collision_reward
                break
            if outcome == RolloutOutcome.GOAL_REACHED:
                reward = _ego_reward(trajectory, cfg.reward, sim_config.dt)
                break
            if outcome == RolloutOutcome.TIMEOUT or len(path) >= cfg.max_depth:
                break
            node = node.child(macro)
        if path:
            backup(path, reward)

    if not root.visits:
        raise PlannerStuckError(f"Every rollout failed for {ego_id} at t={world.time:.1f}")
    best = _argmax_macro(root)
    result = MctsResult(
        best,
        {m: root.q[m] for m in sorted(root.q, key=lambda m: m.order)},
        {m: root.visits[m] for m in sorted(root.visits, key=lambda m: m.order)},
        {vid: dict(sorted(c.items())) for vid, c in sampled_goals.items()},
        world.time,
    )
    logger.info("t=%.1f: %s chose %s (Q=%.3f)", world.time, ego_id, best.value, root.q[best])
    return result


class ShortHorizonPlanner:
    """
    Depth-one lookahead: every applicable macro followed by Continue,
    with other vehicles keeping their lane at constant speed. Picks the
    macro with the highest reward of the simulated trajectory.
    """

    def __init__(
        self,
        road_map: RoadMap,
        cfg: Optional[MctsConfig] = None,
        sim_config: Optional[SimConfig] = None,
        maneuver_config: Optional[ManeuverConfig] = None,
    ):
        self.road_map = road_map
        self.cfg = cfg or MctsConfig()
        self.sim_config = sim_config or SimConfig()
        self.maneuver_config = maneuver_config or ManeuverConfig()

    def plan(
        self,
        world: WorldState,
        ego_id: str,
        ego_goal: Goal,
        view: Optional[ViewRegion] = None,
        others: Sequence[str] = (),
        predictions: Optional[Dict[str, Optional[Trajectory]]] = None,
    ) -> MctsResult:
        cfg, road_map = self.cfg, self.road_map
        goals = (ego_goal,) if ego_goal.requires_zero_velocity else ()
        ego_state = world.vehicles[ego_id].state
        macros = applicable_macros(ego_state, road_map, MacroContext(goals, view, None, self.maneuver_config))
        if not macros:
            raise PlannerStuckError(f"No macro action applies to {ego_id} at ({ego_state.x:.1f}, {ego_state.y:.1f})")
        values: Dict[MacroAction, float] = {}
        for macro in macros:
            sampled = SampledWorld({vid: (None, None, traj) for vid, traj in (predictions or {}).items()})
            sim = rollout_world(world, ego_id, sampled, road_map, sorted(others), cfg, self.maneuver_config)
            ego = sim.vehicles[ego_id]
            trajectory = [ego.state]
            reward = cfg.termination_reward
            for follow_up in (macro, MacroAction.CONTINUE):
                ctx = MacroContext(goals, view, cv_forecast(ego_id, sim, road_map), self.maneuver_config)
                try:
                    states, outcome = rollout_macro(follow_up, sim, ego_id, ego_goal, road_map, ctx, cfg, self.sim_config)
                except GoalDrivingError:
                    break
                trajectory.extend(states)
                if outcome == RolloutOutcome.COLLISION:
                    trajectory = None
                    reward = cfg.collision_reward
                    break
                if outcome != RolloutOutcome.IN_PROGRESS:
                    break
            if trajectory is not None and len(trajectory) > 1:
                reward = _ego_reward(trajectory, cfg.reward, self.sim_config.dt)
            values[macro] = reward
        best = max(macros, key=lambda m: (values[m], -m.order))
        logger.info("t=%.1f: %s chose %s by short-horizon lookahead", world.time, ego_id, best.value)
        return MctsResult(best, values, {m: 1 for m in macros}, {}, world.time)
