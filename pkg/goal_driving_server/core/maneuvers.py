"""
Maneuvers: applicability, local trajectory generation, and termination.

Every maneuver produces a position-indexed Trajectory that starts at the
vehicle's position and speed. Lane geometry comes from the RoadMap; other
vehicles are only ever predicted by constant-velocity lane following
(TrafficForecast).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.road_map import (
    STOP_SPEED_THRESHOLD,
    Goal,
    Lane,
    RoadMap,
    ViewRegion,
    lane_at,
    wrap_angle,
)
from goal_driving_server.core.trajectory import (
    Trajectory,
    VehicleState,
    fit_reference_path,
    target_velocities,
)

logger = logging.getLogger(__name__)

MIN_PROGRESS = 0.5


class ManeuverKind(str, Enum):
    LANE_FOLLOW = "lane-follow"
    LANE_CHANGE_LEFT = "lane-change-left"
    LANE_CHANGE_RIGHT = "lane-change-right"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"
    GIVE_WAY = "give-way"
    STOP = "stop"

    @property
    def side(self) -> Optional[str]:
        if self in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.TURN_LEFT):
            return "left"
        if self in (ManeuverKind.LANE_CHANGE_RIGHT, ManeuverKind.TURN_RIGHT):
            return "right"
        return None


@dataclass(frozen=True)
class ManeuverConfig:
    lane_change_length: float = 20.0
    min_lane_change_length: float = 8.0
    t_gap: float = 2.0
    give_way_margin: float = 1.5
    hold_offset: float = 2.0
    align_tol: float = 0.1
    stop_distance: float = 5.0
    approach_distance: float = 15.0
    turn_reach: float = 10.0
    turn_extension: float = 3.0
    commit_distance: float = 10.0
    lat_acc_max: float = 3.0
    creep_speed: float = 2.0
    comfort_decel: float = 3.0
    cross_accel: float = 2.0
    vehicle_length: float = 4.0
    view_length: float = 200.0
    blend_distance: float = 6.0
    waypoint_spacing: float = 2.0
    stop_tolerance: float = 2.0
    max_hold_time: float = 20.0
    conservative_give_way: bool = False

    def __post_init__(self):
        if self.lane_change_length <= 0 or self.t_gap <= 0 or self.align_tol <= 0:
            raise ValueError("lane_change_length, t_gap and align_tol must be positive")
        if self.lat_acc_max <= 0 or self.comfort_decel <= 0 or self.creep_speed <= 0:
            raise ValueError("lat_acc_max, comfort_decel and creep_speed must be positive")


@dataclass(frozen=True)
class ManeuverInstance:
    """
    A maneuver bound to its route context.

    lane_ids is the lane route the maneuver drives along; for give-way and
    turns its last two entries are (approach lane, connector) or (connector,
    exit lane). Free parameters: lane-follow takes termination_point,
    give-way takes relevant_lanes, stop takes stopping_point.
    """

    kind: ManeuverKind
    lane_ids: Tuple[str, ...]
    termination_point: Optional[Tuple[float, float]] = None
    relevant_lanes: Optional[Tuple[str, ...]] = None
    stopping_point: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        required = {
            ManeuverKind.LANE_FOLLOW: "termination_point",
            ManeuverKind.GIVE_WAY: "relevant_lanes",
            ManeuverKind.STOP: "stopping_point",
        }.get(self.kind)
        for name in ("termination_point", "relevant_lanes", "stopping_point"):
            present = getattr(self, name) is not None
            if present != (name == required):
                raise ContractError(f"{self.kind.value} {'needs' if not present else 'takes no'} {name}")
        if not self.lane_ids:
            raise ContractError(f"{self.kind.value} needs a lane route")

    def __str__(self) -> str:
        return self.kind.value


class LaneSequence:
    """Consecutive lanes treated as one arc-length parameterized route."""

    def __init__(self, lanes: Sequence[Lane]):
        if not lanes:
            raise ContractError("A lane sequence needs at least one lane")
        self.lanes = list(lanes)
        self.offsets = np.concatenate([[0.0], np.cumsum([lane.length for lane in self.lanes])])

    @property
    def length(self) -> float:
        return float(self.offsets[-1])

    @property
    def lane_ids(self) -> Tuple[str, ...]:
        return tuple(lane.id for lane in self.lanes)

    def offset_of(self, lane_id: str) -> float:
        for i, lane in enumerate(self.lanes):
            if lane.id == lane_id:
                return float(self.offsets[i])
        raise ContractError(f"Lane {lane_id} is not on this route")

    def _locate(self, s: float) -> Tuple[Lane, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self.offsets, s, side="right") - 1, 0, len(self.lanes) - 1))
        return self.lanes[i], s - float(self.offsets[i])

    def lane_at(self, s: float) -> Lane:
        return self._locate(s)[0]

    def project(self, point: Sequence[float], after: Optional[float] = None) -> float:
        """
        Arc position of the nearest lane; ties go to the earlier lane. With
        `after`, positions behind it are only used when nothing lies ahead
        (routes that loop back to their start).
        """
        candidates = [
            (lane.distance(point), float(offset) + lane.project(point)) for offset, lane in zip(self.offsets, self.lanes)
        ]
        if after is not None:
            ahead = [c for c in candidates if c[1] >= after - 1e-6]
            candidates = ahead or candidates
        best, best_d = 0.0, math.inf
        for d, arc in candidates:
            if d < best_d - 1e-6:
                best, best_d = arc, d
        return best

    def distance(self, point: Sequence[float]) -> float:
        return min(lane.distance(point) for lane in self.lanes)

    def point_at(self, s: float) -> np.ndarray:
        lane, local = self._locate(s)
        return np.asarray(lane.point_at(local), dtype=float)

    def heading_at(self, s: float) -> float:
        lane, local = self._locate(s)
        return lane.heading_at(min(local, lane.length - 1e-6))

    def points_between(self, s0: float, s1: float, spacing: float) -> np.ndarray:
        s1 = min(s1, self.length)
        if s1 <= s0:
            return np.atleast_2d(self.point_at(s0))
        count = max(2, int(math.ceil((s1 - s0) / spacing)) + 1)
        return np.array([self.point_at(s) for s in np.linspace(s0, s1, count)])

    def speed_limit(self) -> float:
        return min(lane.speed_limit for lane in self.lanes)


def straight_successor(road_map: RoadMap, lane: Lane) -> Optional[Lane]:
    """The successor a vehicle keeps to without turning, if it is unambiguous."""
    successors = road_map.successors(lane)
    plain = [s for s in successors if not s.is_connector]
    if len(plain) == 1:
        return plain[0]
    if plain:
        return None
    straight = [s for s in successors if s.turn_direction() == "straight"]
    return straight[0] if len(straight) == 1 else None


def lane_sequence_ahead(
    road_map: RoadMap,
    lane: Lane,
    s: float = 0.0,
    view: Optional[ViewRegion] = None,
    max_length: float = 200.0,
) -> List[Lane]:
    """Lanes followed from a position without turning, until a branch, the view edge, or max_length."""
    lanes, visited = [lane], {lane.id}
    total = lane.length - s
    cur = lane
    while total < max_length:
        if view is not None and not view.contains(cur.end):
            break
        nxt = straight_successor(road_map, cur)
        if nxt is None or nxt.id in visited:
            break
        lanes.append(nxt)
        visited.add(nxt.id)
        total += nxt.length
        cur = nxt
    return lanes


def visible_end(sequence: LaneSequence, s0: float, view: Optional[ViewRegion]) -> float:
    """Last arc position ahead of s0 still inside the view."""
    if view is None:
        return sequence.length
    samples = np.append(np.arange(s0, sequence.length, 1.0), sequence.length)
    inside = [view.contains(sequence.point_at(s)) for s in samples]
    if all(inside):
        return sequence.length
    first_out = inside.index(False)
    return float(samples[max(first_out - 1, 0)])


def turn_connectors(road_map: RoadMap, lane: Lane, side: str) -> List[Lane]:
    return [s for s in road_map.successors(lane) if s.is_connector and s.turn_direction() == side]


def find_exit(road_map: RoadMap, sequence: LaneSequence, side: str) -> Optional[Tuple[int, Lane]]:
    """First lane on the route with a connector turning to the given side."""
    for i, lane in enumerate(sequence.lanes):
        if lane.is_connector and i == 0:
            continue
        connectors = turn_connectors(road_map, lane, side)
        if connectors:
            return i, connectors[0]
    return None


def current_lane(road_map: RoadMap, state: VehicleState) -> Optional[Lane]:
    return lane_at(road_map, state.position, state.heading)


def route_lanes(road_map: RoadMap, trajectory: Trajectory, spacing: float = 2.0) -> List[str]:
    """Lanes a trajectory drives through, in order of first entry."""
    samples = np.append(np.arange(trajectory.positions[0], trajectory.positions[-1], spacing), trajectory.positions[-1])
    points = np.atleast_2d(trajectory.path.point_at(samples))
    headings = np.atleast_1d(trajectory.path.heading_at(samples))
    lanes: List[str] = []
    for p, h in zip(points, headings):
        lane = lane_at(road_map, p, float(h))
        if lane is not None and lane.id not in lanes:
            lanes.append(lane.id)
    return lanes


def travel_time(distance: float, speed: float, accel: float, speed_cap: float) -> float:
    """Time to cover a distance starting at speed, accelerating up to speed_cap."""
    if distance <= 0:
        return 0.0
    speed = min(max(speed, 0.0), speed_cap)
    ramp = (speed_cap**2 - speed**2) / (2 * accel)
    if distance <= ramp:
        return (-speed + math.sqrt(speed**2 + 2 * accel * distance)) / accel
    return (speed_cap - speed) / accel + (distance - ramp) / speed_cap


# Prediction of other vehicles


@dataclass
class _Track:
    state: VehicleState
    sequence: Optional[LaneSequence]
    s0: float


class TrafficForecast:
    """
    Constant-velocity predictions of other vehicles along their lanes.

    By default a vehicle keeps to its lane without turning; routes, when
    given, replace that guess by the lanes a predicted trajectory drives
    through.
    """

    def __init__(
        self,
        road_map: RoadMap,
        traffic: Sequence[VehicleState],
        horizon_length: float = 300.0,
        routes: Optional[Sequence[Optional[Sequence[str]]]] = None,
    ):
        self.road_map = road_map
        self.tracks: List[_Track] = []
        for i, state in enumerate(traffic):
            route = routes[i] if routes is not None and i < len(routes) else None
            if route:
                sequence = LaneSequence([road_map.lane(lane_id) for lane_id in route])
                self.tracks.append(_Track(state, sequence, sequence.project(state.position)))
                continue
            lane = current_lane(road_map, state)
            if lane is None:
                self.tracks.append(_Track(state, None, 0.0))
                continue
            s = lane.project(state.position)
            sequence = LaneSequence(lane_sequence_ahead(road_map, lane, s, max_length=horizon_length))
            self.tracks.append(_Track(state, sequence, s))

    def __len__(self) -> int:
        return len(self.tracks)

    @property
    def states(self) -> List[VehicleState]:
        return [track.state for track in self.tracks]

    def arc_at(self, track: _Track, time: float) -> float:
        return track.s0 + track.state.speed * max(time - track.state.time, 0.0)

    def state_at(self, track: _Track, time: float) -> VehicleState:
        if track.sequence is None:
            dt = max(time - track.state.time, 0.0)
            h = track.state.heading
            p = (track.state.x + track.state.speed * dt * math.cos(h), track.state.y + track.state.speed * dt * math.sin(h))
            return VehicleState(p, h, track.state.speed, 0.0, time)
        s = self.arc_at(track, time)
        seq = track.sequence
        speed = track.state.speed if s < seq.length else 0.0
        return VehicleState(tuple(seq.point_at(s)), seq.heading_at(s), speed, 0.0, time)

    def at(self, time: float) -> List[VehicleState]:
        return [self.state_at(track, time) for track in self.tracks]

    def trajectory(self, index: int, horizon: float, dt: float = 0.5) -> Optional[Trajectory]:
        """Position-indexed constant-velocity trajectory of one vehicle, or None when it cannot move."""
        track = self.tracks[index]
        if track.sequence is None or track.state.speed <= STOP_SPEED_THRESHOLD:
            return None
        seq = track.sequence
        s_end = min(seq.length, track.s0 + track.state.speed * horizon)
        if s_end - track.s0 < MIN_PROGRESS:
            return None
        points = seq.points_between(track.s0, s_end, 2.0)
        path = fit_reference_path(points)
        positions = np.linspace(0.0, path.length, max(2, int(math.ceil(horizon / dt)) + 1))
        return Trajectory(path, positions, np.full(len(positions), track.state.speed))


# Give-way predicate


def _approach_and_connector(road_map: RoadMap, inst: ManeuverInstance) -> Tuple[Lane, Lane]:
    if len(inst.lane_ids) < 2:
        raise ContractError("give-way needs an approach lane and a connector")
    return road_map.lane(inst.lane_ids[-2]), road_map.lane(inst.lane_ids[-1])


def junction_blocked(
    road_map: RoadMap,
    inst: ManeuverInstance,
    state: VehicleState,
    forecast: TrafficForecast,
    cfg: ManeuverConfig,
    time: Optional[float] = None,
    view: Optional[ViewRegion] = None,
) -> bool:
    """
    Whether a vehicle on a relevant lane stops us from entering the junction.

    A vehicle blocks when its constant-speed time to the conflict point is
    shorter than our crossing time plus the safety margin. With
    conservative give-way any vehicle on a relevant lane that has not yet
    passed the conflict point blocks.
    """
    relevant = inst.relevant_lanes or ()
    if not relevant or not len(forecast):
        return False
    time = state.time if time is None else time
    approach, connector = _approach_and_connector(road_map, inst)
    to_entry = max(approach.length - approach.project(state.position), 0.0)
    if connector.contains(state.position) and not approach.contains(state.position):
        to_entry = 0.0
    limit = connector.speed_limit

    for track in forecast.tracks:
        if track.sequence is None:
            continue
        seq = track.sequence
        s_other = forecast.arc_at(track, time)
        other = forecast.state_at(track, time)
        if view is not None and not view.contains(other.position):
            continue
        for lane_id in relevant:
            if lane_id not in seq.lane_ids:
                continue
            lane = road_map.lane(lane_id)
            conflict = road_map.conflict_point(connector, lane)
            gap = seq.offset_of(lane_id) + lane.project(conflict) - s_other
            if gap <= -cfg.vehicle_length:
                continue
            if cfg.conservative_give_way:
                return True
            if gap <= cfg.vehicle_length:
                return True
            if other.speed <= STOP_SPEED_THRESHOLD:
                continue
            arrival = gap / other.speed
            crossing = travel_time(
                to_entry + connector.project(conflict) + cfg.vehicle_length, state.speed, cfg.cross_accel, limit
            )
            if arrival < crossing + cfg.give_way_margin:
                return True
    return False


def give_way_hold_time(
    road_map: RoadMap,
    inst: ManeuverInstance,
    arrival: VehicleState,
    forecast: TrafficForecast,
    cfg: ManeuverConfig,
    step: float = 0.5,
) -> float:
    """Predicted wait at the hold point before the junction is clear."""
    if not inst.relevant_lanes:
        return 0.0
    if not junction_blocked(road_map, inst, arrival, forecast, cfg):
        return 0.0
    waiting = arrival.replace(speed=0.0)
    hold = step
    while hold <= cfg.max_hold_time:
        if not junction_blocked(road_map, inst, waiting, forecast, cfg, time=arrival.time + hold):
            return hold
        hold += step
    return cfg.max_hold_time


# Applicability


def _within_turn_reach(lane: Lane, state: VehicleState, cfg: ManeuverConfig) -> bool:
    return lane.length - lane.project(state.position) <= cfg.turn_reach


def maneuver_applicable(
    kind: ManeuverKind, state: VehicleState, road_map: RoadMap, cfg: Optional[ManeuverConfig] = None
) -> bool:
    """Applicability of a maneuver kind in a state; off-road states make nothing applicable."""
    cfg = cfg or ManeuverConfig()
    lane = current_lane(road_map, state)
    if lane is None:
        return False
    if kind == ManeuverKind.LANE_FOLLOW:
        return lane.length - lane.project(state.position) > MIN_PROGRESS or bool(lane.successors)
    if kind in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.LANE_CHANGE_RIGHT):
        return not lane.is_connector and road_map.neighbor(lane, kind.side) is not None
    if kind in (ManeuverKind.TURN_LEFT, ManeuverKind.TURN_RIGHT):
        if lane.is_connector:
            return lane.turn_direction() == kind.side
        return bool(turn_connectors(road_map, lane, kind.side)) and _within_turn_reach(lane, state, cfg)
    if kind == ManeuverKind.GIVE_WAY:
        if lane.is_connector:
            return False
        to_end = lane.length - lane.project(state.position)
        has_entry = any(s.is_connector for s in road_map.successors(lane))
        return has_entry and MIN_PROGRESS < to_end <= cfg.approach_distance + MIN_PROGRESS
    if kind == ManeuverKind.STOP:
        return True
    return False


def instance_applicable(
    inst: ManeuverInstance, state: VehicleState, road_map: RoadMap, cfg: Optional[ManeuverConfig] = None
) -> bool:
    """
    Applicability of a bound maneuver in a state.

    Lane changes and junction maneuvers are checked against the instance's
    own route, so a maneuver planned after an earlier one of its macro is
    judged where that one ends. A lane change already across the boundary
    but not yet aligned may still be completed.
    """
    cfg = cfg or ManeuverConfig()
    lanes = road_map.lanes_at(state.position, state.heading)
    if not lanes:
        return False
    kind = inst.kind
    if any(lane_id not in road_map.lanes for lane_id in inst.lane_ids):
        return False
    if kind in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.LANE_CHANGE_RIGHT):
        lane = lanes[0]
        ahead = {l.id for l in lane_sequence_ahead(road_map, road_map.lanes[inst.lane_ids[-1]])}
        if lane.id in ahead:
            return not maneuver_terminated(inst, state, road_map, cfg)
        neighbor = None if lane.is_connector else road_map.neighbor(lane, kind.side)
        return neighbor is not None and neighbor.id in ahead
    if kind in (ManeuverKind.TURN_LEFT, ManeuverKind.TURN_RIGHT):
        seq = _route(road_map, inst)
        connector = _turn_connector(seq, kind)
        if connector is None or connector.turn_direction() != kind.side:
            return False
        if not any(l.id in inst.lane_ids for l in lanes):
            return False
        to_connector = seq.offset_of(connector.id) - seq.project(state.position)
        return to_connector <= cfg.turn_reach + MIN_PROGRESS
    if kind == ManeuverKind.GIVE_WAY:
        if not road_map.lanes[inst.lane_ids[-1]].is_connector:
            return False
        approach = inst.lane_ids[:-1]
        if not approach or not any(l.id in approach for l in lanes):
            return False
        seq = LaneSequence([road_map.lanes[lane_id] for lane_id in approach])
        to_end = seq.length - seq.project(state.position)
        return MIN_PROGRESS - 1e-6 < to_end <= cfg.approach_distance + MIN_PROGRESS + 1e-6
    return maneuver_applicable(kind, state, road_map, cfg)


def applicable_maneuvers(state: VehicleState, road_map: RoadMap, cfg: Optional[ManeuverConfig] = None) -> List[ManeuverKind]:
    return [kind for kind in ManeuverKind if maneuver_applicable(kind, state, road_map, cfg)]


# Trajectory generation


def _follow_path(state: VehicleState, sequence: LaneSequence, s1: float, cfg: ManeuverConfig):
    s0 = sequence.project(state.position)
    s1 = min(max(s1, s0 + MIN_PROGRESS), sequence.length)
    if s1 - s0 < MIN_PROGRESS - 1e-6:
        raise ContractError(f"Route ends {s1 - s0:.2f} m ahead; nothing to follow")
    blend = min(cfg.blend_distance, 0.5 * (s1 - s0))
    ahead = sequence.points_between(s0 + blend, s1, cfg.waypoint_spacing)
    waypoints = np.vstack([np.asarray(state.position), ahead])
    return fit_reference_path(waypoints), s0, s1


def _with_start_speed(traj: Trajectory, state: VehicleState) -> Trajectory:
    speeds = traj.speeds.copy()
    speeds[0] = state.speed
    return traj.with_speeds(speeds)


def _route(road_map: RoadMap, inst: ManeuverInstance) -> LaneSequence:
    return LaneSequence([road_map.lane(lane_id) for lane_id in inst.lane_ids])


def _plan_lane_follow(inst, state, road_map, cfg):
    seq = _route(road_map, inst)
    s0 = seq.project(state.position)
    path, _, _ = _follow_path(state, seq, seq.project(inst.termination_point, after=s0), cfg)
    return target_velocities(path, seq.speed_limit(), cfg.lat_acc_max)


def _plan_lane_change(inst, state, road_map, cfg):
    target = road_map.lane(inst.lane_ids[-1])
    seq = LaneSequence(lane_sequence_ahead(road_map, target, target.project(state.position)))
    t0 = seq.project(state.position)
    available = seq.length - t0 - 2.0
    length = min(cfg.lane_change_length, available)
    if length < cfg.min_lane_change_length:
        raise ContractError(f"Only {available:.1f} m left on lane {target.id} for a lane change")
    offset = target.lateral_offset(state.position)
    u = np.linspace(0.0, 1.0, max(3, int(math.ceil(length)) + 1))
    w = 3 * u**2 - 2 * u**3
    points = []
    for ui, wi in zip(u, w):
        s = t0 + ui * length
        base = seq.point_at(s)
        h = seq.heading_at(s)
        normal = np.array([-math.sin(h), math.cos(h)])
        points.append(base + normal * offset * (1.0 - wi))
    points[0] = np.asarray(state.position)
    tail = seq.points_between(t0 + length + 1.0, t0 + length + 2.0, 1.0)
    path = fit_reference_path(np.vstack([points, tail]))
    return target_velocities(path, min(seq.speed_limit(), road_map.lane(inst.lane_ids[0]).speed_limit), cfg.lat_acc_max)


def _turn_connector(seq: LaneSequence, kind: ManeuverKind) -> Optional[Lane]:
    """The connector a turn takes: the first one turning to its side, else the last one on the route."""
    connectors = [lane for lane in seq.lanes if lane.is_connector]
    return next((lane for lane in connectors if lane.turn_direction() == kind.side), connectors[-1] if connectors else None)


def _plan_turn(inst, state, road_map, cfg):
    seq = _route(road_map, inst)
    connector = _turn_connector(seq, inst.kind)
    s1 = seq.offset_of(connector.id) + connector.length + cfg.turn_extension
    path, _, _ = _follow_path(state, seq, s1, cfg)
    return target_velocities(path, seq.speed_limit(), cfg.lat_acc_max)


def _plan_give_way(inst, state, road_map, cfg):
    seq = LaneSequence([road_map.lane(lane_id) for lane_id in inst.lane_ids[:-1]])
    path, _, _ = _follow_path(state, seq, seq.length, cfg)
    traj = target_velocities(path, seq.speed_limit(), cfg.lat_acc_max)
    if not inst.relevant_lanes:
        return traj
    hold = max(path.length - cfg.hold_offset, 0.0)
    remaining = np.clip(hold - traj.positions, 0.0, None)
    slow = np.sqrt(cfg.creep_speed**2 + 2 * cfg.comfort_decel * remaining)
    return traj.with_speeds(np.minimum(traj.speeds, slow))


def _plan_stop(inst, state, road_map, cfg):
    seq = _route(road_map, inst)
    start = seq.project(state.position)
    path, _, _ = _follow_path(state, seq, seq.project(inst.stopping_point, after=start), cfg)
    traj = target_velocities(path, seq.speed_limit(), cfg.lat_acc_max)
    braking = np.sqrt(2 * cfg.comfort_decel * np.clip(path.length - traj.positions, 0.0, None))
    speeds = np.minimum(traj.speeds, braking)
    speeds[-1] = 0.0
    return traj.with_speeds(speeds)


_PLANNERS = {
    ManeuverKind.LANE_FOLLOW: _plan_lane_follow,
    ManeuverKind.LANE_CHANGE_LEFT: _plan_lane_change,
    ManeuverKind.LANE_CHANGE_RIGHT: _plan_lane_change,
    ManeuverKind.TURN_LEFT: _plan_turn,
    ManeuverKind.TURN_RIGHT: _plan_turn,
    ManeuverKind.GIVE_WAY: _plan_give_way,
    ManeuverKind.STOP: _plan_stop,
}


def plan_maneuver(
    inst: ManeuverInstance, state: VehicleState, road_map: RoadMap, cfg: Optional[ManeuverConfig] = None
) -> Trajectory:
    """
    Local trajectory of a maneuver from a state.

    Raises:
        ContractError: the maneuver is not applicable in this state
    """
    cfg = cfg or ManeuverConfig()
    if current_lane(road_map, state) is None:
        raise ContractError(f"{inst.kind.value} planned from off-road position {state.position}")
    if not instance_applicable(inst, state, road_map, cfg):
        raise ContractError(f"{inst.kind.value} along {', '.join(inst.lane_ids)} is not applicable at {state.position}")
    return _with_start_speed(_PLANNERS[inst.kind](inst, state, road_map, cfg), state)


# Termination


def _aligned(heading: float, lane_heading: float, cfg: ManeuverConfig) -> bool:
    return abs(wrap_angle(heading - lane_heading)) < cfg.align_tol


def maneuver_terminated(
    inst: ManeuverInstance,
    state: VehicleState,
    road_map: RoadMap,
    cfg: Optional[ManeuverConfig] = None,
    forecast: Optional[TrafficForecast] = None,
) -> bool:
    """Kind-specific termination; give-way consults the forecast of other vehicles."""
    cfg = cfg or ManeuverConfig()
    kind = inst.kind
    if kind == ManeuverKind.LANE_FOLLOW:
        seq = _route(road_map, inst)
        s = seq.project(state.position)
        return s >= seq.project(inst.termination_point) - MIN_PROGRESS
    if kind in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.LANE_CHANGE_RIGHT):
        target = road_map.lane(inst.lane_ids[-1])
        seq = LaneSequence(lane_sequence_ahead(road_map, target))
        if seq.distance(state.position) > target.width / 2.0:
            return False
        return _aligned(state.heading, seq.heading_at(seq.project(state.position)), cfg)
    if kind in (ManeuverKind.TURN_LEFT, ManeuverKind.TURN_RIGHT):
        seq = _route(road_map, inst)
        connector = _turn_connector(seq, kind)
        if connector is None:
            return False
        exit_start = seq.offset_of(connector.id) + connector.length
        return seq.project(state.position) >= exit_start + min(1.0, cfg.turn_extension) - 1e-6
    if kind == ManeuverKind.GIVE_WAY:
        approach, connector = _approach_and_connector(road_map, inst)
        to_end = approach.length - approach.project(state.position)
        if to_end <= 1e-3 or (connector.contains(state.position) and connector.project(state.position) > MIN_PROGRESS):
            return True
        if to_end > cfg.commit_distance:
            return False
        return forecast is None or not junction_blocked(road_map, inst, state, forecast, cfg)
    if kind == ManeuverKind.STOP:
        point = inst.stopping_point
        near = math.hypot(state.x - point[0], state.y - point[1]) <= cfg.stop_tolerance
        return near and state.speed <= STOP_SPEED_THRESHOLD
    return False


# Current maneuver completion


def _route_to(road_map: RoadMap, lanes: Sequence[Lane], connector: Lane) -> Tuple[str, ...]:
    ids = [lane.id for lane in lanes]
    exit_ids = tuple(connector.successors[:1])
    return tuple(ids) + (connector.id,) + exit_ids


def current_maneuver_instance(
    kind: ManeuverKind,
    state: VehicleState,
    road_map: RoadMap,
    cfg: Optional[ManeuverConfig] = None,
    goals: Sequence[Goal] = (),
) -> Optional[ManeuverInstance]:
    """
    The instance a vehicle executing this kind of maneuver is presumed to be in.

    Lane-follow is interruptible at any moment and yields None.
    """
    cfg = cfg or ManeuverConfig()
    lane = current_lane(road_map, state)
    if lane is None:
        raise ContractError(f"No lane at {state.position}")
    s = lane.project(state.position)
    if kind == ManeuverKind.LANE_FOLLOW:
        return None
    if kind in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.LANE_CHANGE_RIGHT):
        target = road_map.neighbor(lane, kind.side)
        if target is None:
            opposite = "right" if kind.side == "left" else "left"
            if road_map.neighbor(lane, opposite) is None:
                raise ContractError(f"{kind.value} has no target lane at {state.position}")
            # already across the lane boundary
            target = lane
        return ManeuverInstance(kind, (lane.id, target.id))
    if kind in (ManeuverKind.TURN_LEFT, ManeuverKind.TURN_RIGHT):
        if lane.is_connector:
            return ManeuverInstance(kind, (lane.id,) + tuple(lane.successors[:1]))
        connectors = turn_connectors(road_map, lane, kind.side)
        if not connectors:
            raise ContractError(f"No {kind.side} turn from lane {lane.id}")
        return ManeuverInstance(kind, _route_to(road_map, [lane], connectors[0]))
    if kind == ManeuverKind.GIVE_WAY:
        connectors = [c for side in ("left", "right", "straight") for c in road_map.successors(lane)
                      if c.is_connector and c.turn_direction() == side]
        if not connectors:
            raise ContractError(f"Lane {lane.id} does not enter a junction")
        connector = connectors[0]
        relevant = tuple(l.id for l in road_map.relevant_lanes(connector))
        return ManeuverInstance(kind, (lane.id, connector.id), relevant_lanes=relevant)
    seq = LaneSequence(lane_sequence_ahead(road_map, lane, s))
    s0 = seq.project(state.position)
    point = None
    for goal in goals:
        if goal.requires_zero_velocity and seq.distance(goal.center) <= lane.width / 2.0 + goal.radius:
            if seq.project(goal.center) > s0 + MIN_PROGRESS:
                point = goal.center
                break
    if point is None:
        braking = max(state.speed**2 / (2 * cfg.comfort_decel), 1.0)
        point = tuple(seq.point_at(min(s0 + braking, seq.length)))
    return ManeuverInstance(kind, seq.lane_ids, stopping_point=(float(point[0]), float(point[1])))


def complete_current_maneuver(
    kind: ManeuverKind,
    state: VehicleState,
    road_map: RoadMap,
    cfg: Optional[ManeuverConfig] = None,
    goals: Sequence[Goal] = (),
) -> Tuple[Optional[ManeuverInstance], Optional[Trajectory]]:
    """Instance and trajectory finishing the current maneuver; (None, None) when interruptible or already done."""
    inst = current_maneuver_instance(kind, state, road_map, cfg, goals)
    if inst is None:
        return None, None
    if inst.kind in (ManeuverKind.LANE_CHANGE_LEFT, ManeuverKind.LANE_CHANGE_RIGHT) and maneuver_terminated(
        inst, state, road_map, cfg
    ):
        return None, None
    return inst, plan_maneuver(inst, state, road_map, cfg)
