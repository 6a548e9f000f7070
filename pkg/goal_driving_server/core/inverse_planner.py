"""
A* search over macro actions.

Nodes are vehicle states reached by planning macros back to back; edge cost
is driving time of the pre-smoothing maneuver profiles plus predicted
give-way holds. Other vehicles follow constant-velocity lane-following
predictions and collisions are not checked.
"""

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import ConsistencyError, ContractError, GoalDrivingError
from goal_driving_server.core.macro_actions import MacroAction, MacroContext, MacroPlan, applicable_macros, plan_macro
from goal_driving_server.core.maneuvers import ManeuverInstance, current_lane
from goal_driving_server.core.road_map import STOP_SPEED_THRESHOLD, Goal, RoadMap
from goal_driving_server.core.trajectory import (
    Trajectory,
    VehicleState,
    concatenate_trajectories,
    truncate_trajectory,
)

logger = logging.getLogger(__name__)

PRUNE_BUCKET = 1.0


@dataclass(frozen=True)
class AStarBudget:
    """Wall-clock limit plus a deterministic node-expansion cap."""

    max_time: float = 1.0
    max_nodes: int = 10000
    max_plans: int = 2
    max_depth: int = 4

    def __post_init__(self):
        if self.max_time <= 0 or self.max_nodes < 1 or self.max_plans < 1 or self.max_depth < 1:
            raise ValueError("A* budget values must be positive")


@dataclass(frozen=True, eq=False)
class Plan:
    goal: Goal
    macros: Tuple[MacroAction, ...]
    macro_plans: Tuple[MacroPlan, ...]
    trajectory: Optional[Trajectory]
    cost: float
    start_state: VehicleState

    @property
    def maneuvers(self) -> List[ManeuverInstance]:
        return [m for mp in self.macro_plans for m in mp.maneuvers]

    def __str__(self) -> str:
        names = ", ".join(m.value for m in self.macros) or "(at goal)"
        return f"[{names}] cost={self.cost:.2f}s"


@dataclass(eq=False)
class SearchNode:
    state: VehicleState
    macro: Optional[MacroAction]
    cost: float
    heuristic: float
    parent: Optional["SearchNode"]
    depth: int
    macro_plan: Optional[MacroPlan] = None
    reached: bool = False

    @property
    def f(self) -> float:
        return self.cost + self.heuristic

    def history(self) -> List["SearchNode"]:
        nodes, cur = [], self
        while cur is not None and cur.macro is not None:
            nodes.append(cur)
            cur = cur.parent
        return nodes[::-1]

    def macro_order(self) -> Tuple[int, ...]:
        return tuple(n.macro.order for n in self.history())


def heuristic(state: VehicleState, goal: Goal, road_map: RoadMap, speed: Optional[float] = None) -> float:
    """Straight-line time to the goal center at the fastest permitted speed; zero inside the goal."""
    if goal.contains(state.position):
        return 0.0
    top = max(road_map.max_speed_limit, speed if speed is not None else state.speed)
    return goal.distance(state.position) / top


def _goal_hit(traj: Trajectory, goal: Goal) -> Optional[int]:
    """Sample where the trajectory best meets the goal: the closest approach of its first pass."""
    xy = traj.xy
    dist = np.hypot(xy[:, 0] - goal.center[0], xy[:, 1] - goal.center[1])
    inside = dist <= goal.radius
    if goal.requires_zero_velocity:
        inside &= traj.speeds <= STOP_SPEED_THRESHOLD
    if not inside.any():
        return None
    first = int(np.argmax(inside))
    last = first
    while last + 1 < len(inside) and inside[last + 1]:
        last += 1
    return first + int(np.argmin(dist[first : last + 1]))


def _truncate_at_goal(mp: MacroPlan, goal: Goal) -> Optional[Tuple[MacroPlan, float]]:
    """The macro plan cut at the goal and the time it takes to get there."""
    elapsed = 0.0
    for k, traj in enumerate(mp.trajectories):
        hit = _goal_hit(traj, goal)
        if hit is not None:
            if hit == 0 and k > 0:
                cut = mp.trajectories[:k]
                return replace(mp, trajectories=cut, maneuvers=mp.maneuvers[:k], hold_times=mp.hold_times[:k]), elapsed
            part = truncate_trajectory(traj, hit) if hit < len(traj) - 1 else traj
            duration = part.duration if hit > 0 else 0.0
            trajectories = mp.trajectories[:k] + (part,)
            end = part.end_state(time=mp.start_state.time + elapsed)
            cut = replace(
                mp,
                trajectories=trajectories,
                maneuvers=mp.maneuvers[: k + 1],
                hold_times=mp.hold_times[:k] + (0.0,),
                end_state=end,
            )
            return cut, elapsed + duration
        elapsed += traj.duration + mp.hold_times[k]
    return None


def _prune_key(node: SearchNode, road_map: RoadMap):
    lane = current_lane(road_map, node.state)
    if lane is None:
        return None
    return lane.id, int(math.floor(lane.project(node.state.position) / PRUNE_BUCKET)), node.depth


def _to_plan(node: SearchNode, goal: Goal, start: VehicleState) -> Plan:
    history = node.history()
    macro_plans = tuple(n.macro_plan for n in history)
    trajectories = [t for mp in macro_plans for t in mp.trajectories]
    trajectory = concatenate_trajectories(trajectories) if trajectories else None
    return Plan(goal, tuple(n.macro for n in history), macro_plans, trajectory, node.cost, start)


def astar_plan(
    start: VehicleState,
    initial_segment: Optional[Trajectory],
    goal: Goal,
    road_map: RoadMap,
    budget: Optional[AStarBudget] = None,
    ctx: Optional[MacroContext] = None,
    trace: Optional[List[Dict[str, Any]]] = None,
) -> List[Plan]:
    """
    Cost-ascending goal-reaching plans from start (the end of initial_segment).

    Plans are collected as goal-reaching nodes leave the frontier, so the
    first is optimal under the admissible heuristic. Returns an empty list
    when the budget runs out before any plan is found.
    """
    budget = budget or AStarBudget()
    ctx = ctx or MacroContext()
    ctx = replace(ctx, goals=(goal,) if goal.requires_zero_velocity else ())
    if initial_segment is not None and len(initial_segment):
        gap = float(np.linalg.norm(initial_segment.end_point - np.asarray(start.position)))
        if gap > 0.1:
            raise ContractError(f"Initial segment ends {gap:.2f} m away from the search start")

    if goal.satisfied_by(start.position, start.speed):
        return [Plan(goal, (), (), None, 0.0, start)]

    top_speed = max(road_map.max_speed_limit, start.speed)
    counter = itertools.count()
    root = SearchNode(start, None, 0.0, heuristic(start, goal, road_map, top_speed), None, 0)
    frontier = [(root.f, 0, (), next(counter), root)]
    seen = set()
    plans: List[Plan] = []
    expanded = 0
    started = time.perf_counter()

    while frontier and len(plans) < budget.max_plans:
        if expanded >= budget.max_nodes or time.perf_counter() - started > budget.max_time:
            logger.debug("A* budget exhausted after %d expansions with %d plans", expanded, len(plans))
            break
        _, _, _, _, node = heapq.heappop(frontier)
        if node.reached:
            plans.append(_to_plan(node, goal, start))
            continue
        key = _prune_key(node, road_map)
        if key is None or key in seen:
            continue
        seen.add(key)
        expanded += 1
        if trace is not None:
            trace.append(
                {
                    "depth": node.depth,
                    "macros": [m.value for m in (n.macro for n in node.history())],
                    "cost": node.cost,
                    "h": node.heuristic,
                    "f": node.f,
                    "lane": key[0],
                }
            )
        if node.depth >= budget.max_depth:
            continue
        for macro in applicable_macros(node.state, road_map, ctx):
            try:
                mp = plan_macro(macro, node.state, road_map, ctx)
            except GoalDrivingError as e:
                logger.debug("Skipping %s at depth %d: %s", macro.value, node.depth, e)
                continue
            hit = _truncate_at_goal(mp, goal)
            if hit is not None:
                cut, elapsed = hit
                child = SearchNode(cut.end_state, macro, node.cost + elapsed, 0.0, node, node.depth + 1, cut, True)
            else:
                h = heuristic(mp.end_state, goal, road_map, top_speed)
                child = SearchNode(mp.end_state, macro, node.cost + mp.duration, h, node, node.depth + 1, mp)
            heapq.heappush(frontier, (child.f, child.depth, child.macro_order(), next(counter), child))

    logger.debug("A* to %s: %d plans, %d expansions", goal.goal_id, len(plans), expanded)
    return plans


def replay_plan(
    plan: Plan, start: VehicleState, road_map: RoadMap, ctx: Optional[MacroContext] = None
) -> Optional[Plan]:
    """Re-plan the macro sequence of a plan from a new start; None once it no longer reaches the goal."""
    goal = plan.goal
    if goal.satisfied_by(start.position, start.speed):
        return Plan(goal, (), (), None, 0.0, start)
    ctx = replace(ctx or MacroContext(), goals=(goal,) if goal.requires_zero_velocity else ())
    node = SearchNode(start, None, 0.0, 0.0, None, 0)
    for macro in plan.macros:
        try:
            mp = plan_macro(macro, node.state, road_map, ctx)
        except GoalDrivingError:
            return None
        hit = _truncate_at_goal(mp, goal)
        if hit is not None:
            cut, elapsed = hit
            node = SearchNode(cut.end_state, macro, node.cost + elapsed, 0.0, node, node.depth + 1, cut, True)
            return _to_plan(node, goal, start)
        node = SearchNode(mp.end_state, macro, node.cost + mp.duration, 0.0, node, node.depth + 1, mp)
    return None


def extract_trajectory(plan: Plan, initial_segment: Optional[Trajectory] = None) -> Trajectory:
    """
    Initial segment followed by the plan's maneuver trajectories.

    Raises:
        ConsistencyError: a join is discontinuous or the result misses the goal
    """
    parts = [initial_segment] if initial_segment is not None and len(initial_segment) else []
    parts += [t for mp in plan.macro_plans for t in mp.trajectories]
    if not parts:
        raise ContractError("Plan and initial segment are both empty")
    trajectory = concatenate_trajectories(parts)
    if plan.macros and not plan.goal.contains(trajectory.end_point):
        raise ConsistencyError(f"Plan trajectory ends outside goal {plan.goal.goal_id}")
    return trajectory
