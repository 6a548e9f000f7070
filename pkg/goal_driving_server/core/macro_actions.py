"""
Macro actions: context-dependent maneuver sequences shared by inverse
planning and MCTS.

    Continue          lane-follow (end of visible lane)
    ContinueNextExit  lane-follow (next exit point); in a roundabout, not on its outer lane
    ChangeLeft/Right  lane-follow (until target lane clear), lane-change-left/right
    ExitLeft/Right    lane-follow (exit point), give-way (relevant lanes), turn-left/right
    Stop              lane-follow (close to stopping point), stop; needs a stopping goal ahead

Leading lane-follows of zero length are left out, so a vehicle already at a
junction entry expands ExitLeft to [give-way, turn-left].
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.maneuvers import (
    MIN_PROGRESS,
    LaneSequence,
    ManeuverConfig,
    ManeuverInstance,
    ManeuverKind,
    TrafficForecast,
    current_lane,
    find_exit,
    give_way_hold_time,
    lane_sequence_ahead,
    maneuver_applicable,
    maneuver_terminated,
    plan_maneuver,
    straight_successor,
    visible_end,
)
from goal_driving_server.core.road_map import Goal, RoadMap, ViewRegion
from goal_driving_server.core.trajectory import Trajectory, VehicleState, concatenate_trajectories

logger = logging.getLogger(__name__)


class MacroAction(str, Enum):
    CONTINUE = "Continue"
    CONTINUE_NEXT_EXIT = "ContinueNextExit"
    CHANGE_LEFT = "ChangeLeft"
    CHANGE_RIGHT = "ChangeRight"
    EXIT_LEFT = "ExitLeft"
    EXIT_RIGHT = "ExitRight"
    STOP = "Stop"

    @property
    def order(self) -> int:
        return list(MacroAction).index(self)


@dataclass(frozen=True)
class MacroContext:
    """What macro expansion may look at besides the vehicle's own state."""

    goals: Tuple[Goal, ...] = ()
    view: Optional[ViewRegion] = None
    forecast: Optional[TrafficForecast] = None
    config: ManeuverConfig = field(default_factory=ManeuverConfig)


@dataclass(frozen=True, eq=False)
class MacroPlan:
    """A macro planned maneuver by maneuver from a start state."""

    macro: MacroAction
    maneuvers: Tuple[ManeuverInstance, ...]
    trajectories: Tuple[Trajectory, ...]
    hold_times: Tuple[float, ...]
    start_state: VehicleState
    end_state: VehicleState

    @property
    def duration(self) -> float:
        return float(sum(t.duration for t in self.trajectories) + sum(self.hold_times))

    @property
    def hold_time(self) -> float:
        return float(sum(self.hold_times))

    @property
    def trajectory(self) -> Trajectory:
        return concatenate_trajectories(self.trajectories)


def _point(seq: LaneSequence, s: float) -> Tuple[float, float]:
    p = seq.point_at(s)
    return float(p[0]), float(p[1])


def _route_ahead(state: VehicleState, road_map: RoadMap, ctx: MacroContext):
    lane = current_lane(road_map, state)
    if lane is None:
        return None, None, 0.0
    seq = LaneSequence(lane_sequence_ahead(road_map, lane, lane.project(state.position), ctx.view, ctx.config.view_length))
    return lane, seq, seq.project(state.position)


def _lane_follow(seq: LaneSequence, upto: int, s_end: float) -> ManeuverInstance:
    return ManeuverInstance(ManeuverKind.LANE_FOLLOW, seq.lane_ids[: upto + 1], termination_point=_point(seq, s_end))


def _expand_continue(state, road_map, ctx):
    lane, seq, s0 = _route_ahead(state, road_map, ctx)
    if seq is None:
        return None
    cfg = ctx.config
    end = visible_end(seq, s0, ctx.view)
    last = seq.lanes[-1]
    if end >= seq.length - 1e-6:
        nxt = straight_successor(road_map, last)
        if nxt is not None and nxt.id == seq.lanes[0].id:
            # the route closes on itself (roundabout ring)
            end = seq.length - 1.0
        elif last.successors and nxt is None:
            # stop short of the junction so an exit can still give way
            end = seq.length - cfg.approach_distance
    if end - s0 < MIN_PROGRESS:
        return None
    return [_lane_follow(seq, len(seq.lanes) - 1, end)]


def _expand_continue_next_exit(state, road_map, ctx):
    lane, seq, s0 = _route_ahead(state, road_map, ctx)
    if seq is None or not lane.roundabout_ring or road_map.neighbor(lane, "right") is None:
        return None
    if not road_map.neighbor(lane, "right").roundabout_ring:
        return None
    cfg = ctx.config
    for i, ring_lane in enumerate(seq.lanes):
        outer = road_map.neighbor(ring_lane, "right")
        if outer is None:
            continue
        if any(s.is_connector and s.turn_direction() == "right" for s in road_map.successors(outer)):
            exit_point = float(seq.offsets[i + 1]) - cfg.lane_change_length
            if exit_point - s0 >= MIN_PROGRESS:
                return [_lane_follow(seq, i, exit_point)]
    return None


def _target_clear(
    target_seq: LaneSequence, ego_point: np.ndarray, speed: float, others: Sequence[VehicleState], cfg: ManeuverConfig
) -> bool:
    half_width = target_seq.lanes[0].width / 2.0
    ego_s = target_seq.project(ego_point)
    window = max(cfg.t_gap * speed, cfg.vehicle_length)
    for other in others:
        if target_seq.distance(other.position) > half_width:
            continue
        if abs(target_seq.project(other.position) - ego_s) <= window:
            return False
    return True


def _expand_change(side: str, state, road_map, ctx):
    kind = ManeuverKind.LANE_CHANGE_LEFT if side == "left" else ManeuverKind.LANE_CHANGE_RIGHT
    lane, seq, s0 = _route_ahead(state, road_map, ctx)
    if seq is None or lane.is_connector:
        return None
    target = road_map.neighbor(lane, side)
    if target is None:
        return None
    cfg = ctx.config
    target_seq = LaneSequence(lane_sequence_ahead(road_map, target, target.project(state.position)))
    speed = max(state.speed, 1.0)
    latest = min(seq.length, target_seq.length - cfg.min_lane_change_length - 2.0 + (s0 - target_seq.project(state.position)))
    delay = 0.0
    while True:
        s = s0 + speed * delay
        if s > latest:
            return None
        others = ctx.forecast.at(state.time + delay) if ctx.forecast is not None else []
        if _target_clear(target_seq, seq.point_at(s), speed, others, cfg):
            break
        delay += 0.5
    change = ManeuverInstance(kind, (lane.id, target.id))
    if s - s0 < MIN_PROGRESS:
        return [change]
    return [_lane_follow(seq, len(seq.lanes) - 1, s), change]


def _expand_exit(side: str, state, road_map, ctx):
    turn = ManeuverKind.TURN_LEFT if side == "left" else ManeuverKind.TURN_RIGHT
    lane, seq, s0 = _route_ahead(state, road_map, ctx)
    if seq is None:
        return None
    if lane.is_connector:
        if lane.turn_direction() != side:
            return None
        return [ManeuverInstance(turn, (lane.id,) + tuple(lane.successors[:1]))]
    found = find_exit(road_map, seq, side)
    if found is None:
        return None
    i, connector = found
    if ctx.view is not None and not ctx.view.contains(seq.lanes[i].end):
        return None
    cfg = ctx.config
    approach_ids = seq.lane_ids[: i + 1]
    turn_inst = ManeuverInstance(turn, approach_ids + (connector.id,) + tuple(connector.successors[:1]))
    to_end = float(seq.offsets[i + 1]) - s0
    if to_end <= MIN_PROGRESS:
        return [turn_inst]
    relevant = tuple(l.id for l in road_map.relevant_lanes(connector))
    give_way = ManeuverInstance(ManeuverKind.GIVE_WAY, approach_ids + (connector.id,), relevant_lanes=relevant)
    if to_end <= cfg.approach_distance + MIN_PROGRESS:
        return [give_way, turn_inst]
    return [_lane_follow(seq, i, float(seq.offsets[i + 1]) - cfg.approach_distance), give_way, turn_inst]


def _expand_stop(state, road_map, ctx):
    lane, seq, s0 = _route_ahead(state, road_map, ctx)
    if seq is None:
        return None
    cfg = ctx.config
    ahead = []
    for goal in ctx.goals:
        if not goal.requires_zero_velocity:
            continue
        if seq.distance(goal.center) > lane.width / 2.0:
            continue
        s_goal = seq.project(goal.center)
        if s_goal - s0 > MIN_PROGRESS:
            ahead.append((s_goal, goal))
    if not ahead:
        return None
    s_goal, _ = min(ahead, key=lambda a: a[0])
    stop = ManeuverInstance(ManeuverKind.STOP, seq.lane_ids, stopping_point=_point(seq, s_goal))
    if s_goal - s0 <= cfg.stop_distance + MIN_PROGRESS:
        return [stop]
    return [_lane_follow(seq, len(seq.lanes) - 1, s_goal - cfg.stop_distance), stop]


_EXPANSIONS = {
    MacroAction.CONTINUE: _expand_continue,
    MacroAction.CONTINUE_NEXT_EXIT: _expand_continue_next_exit,
    MacroAction.CHANGE_LEFT: lambda *a: _expand_change("left", *a),
    MacroAction.CHANGE_RIGHT: lambda *a: _expand_change("right", *a),
    MacroAction.EXIT_LEFT: lambda *a: _expand_exit("left", *a),
    MacroAction.EXIT_RIGHT: lambda *a: _expand_exit("right", *a),
    MacroAction.STOP: _expand_stop,
}


def _try_expand(macro: MacroAction, state: VehicleState, road_map: RoadMap, ctx: MacroContext):
    maneuvers = _EXPANSIONS[macro](state, road_map, ctx)
    if not maneuvers:
        return None
    if not maneuver_applicable(maneuvers[0].kind, state, road_map, ctx.config):
        return None
    return maneuvers


def expand_macro(
    macro: MacroAction, state: VehicleState, road_map: RoadMap, ctx: Optional[MacroContext] = None
) -> List[ManeuverInstance]:
    """
    Maneuver sequence of a macro in the given state.

    Raises:
        ContractError: the macro is not applicable here
    """
    maneuvers = _try_expand(macro, state, road_map, ctx or MacroContext())
    if maneuvers is None:
        raise ContractError(f"{macro.value} is not applicable at {state.position}")
    return maneuvers


def applicable_macros(state: VehicleState, road_map: RoadMap, ctx: Optional[MacroContext] = None) -> List[MacroAction]:
    """Macros whose conditions hold in the state, in fixed macro order."""
    ctx = ctx or MacroContext()
    return [m for m in MacroAction if _try_expand(m, state, road_map, ctx) is not None]


def plan_maneuvers(
    macro: MacroAction,
    maneuvers: Sequence[ManeuverInstance],
    state: VehicleState,
    road_map: RoadMap,
    ctx: MacroContext,
) -> MacroPlan:
    """Plan expanded maneuvers back to back, adding predicted give-way holds."""
    trajectories, holds = [], []
    cur = state
    for inst in maneuvers:
        traj = plan_maneuver(inst, cur, road_map, ctx.config)
        end = traj.end_state(time=cur.time)
        hold = 0.0
        if inst.kind == ManeuverKind.GIVE_WAY and ctx.forecast is not None:
            hold = give_way_hold_time(road_map, inst, end, ctx.forecast, ctx.config)
            if hold > 0:
                end = end.replace(speed=0.0, time=end.time + hold)
        trajectories.append(traj)
        holds.append(hold)
        cur = end
    return MacroPlan(macro, tuple(maneuvers), tuple(trajectories), tuple(holds), state, cur)


def plan_macro(
    macro: MacroAction, state: VehicleState, road_map: RoadMap, ctx: Optional[MacroContext] = None
) -> MacroPlan:
    ctx = ctx or MacroContext()
    return plan_maneuvers(macro, expand_macro(macro, state, road_map, ctx), state, road_map, ctx)


def macro_terminated(
    maneuvers: Sequence[ManeuverInstance],
    state: VehicleState,
    road_map: RoadMap,
    ctx: Optional[MacroContext] = None,
) -> bool:
    """A macro ends when its last maneuver does."""
    ctx = ctx or MacroContext()
    return maneuver_terminated(maneuvers[-1], state, road_map, ctx.config, ctx.forecast)
