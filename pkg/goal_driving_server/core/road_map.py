"""
Lane-level road network: map loading, lane lookup, and goal generation.

Maps are JSON documents with explicit lane links:

    {"speed_limit": 10.0,
     "roads": [{"id": "r1", "speed_limit": 10.0,
                "lanes": [{"id": "r1_0", "centerline": [[0, 0], [100, 0]],
                           "width": 3.5, "direction": 1,
                           "left": null, "right": null, "successors": [],
                           "roundabout_ring": false}]}],
     "junctions": [{"id": "j1", "connectors": ["c1"], "priority": "r1"}]}

Centerlines are stored in driving order. Lanes listed as junction connectors
are the lanes a vehicle drives on inside the junction.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPoint, Point

from goal_driving_server.core.exceptions import MapParseError, NoLaneError, TopologyError

logger = logging.getLogger(__name__)

DEFAULT_GOAL_RADIUS = 2.0
STOP_SPEED_THRESHOLD = 0.1
TURN_ANGLE_THRESHOLD = 0.35
DEFAULT_SPEED_LIMIT = 10.0

Point2 = Tuple[float, float]


def wrap_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


class GoalKind(str, Enum):
    LOCATION = "location"
    STOPPING = "stopping"


@dataclass(frozen=True)
class Goal:
    """A target region; stopping goals additionally require standing still."""

    kind: GoalKind
    center: Point2
    radius: float = DEFAULT_GOAL_RADIUS
    requires_zero_velocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius <= 0:
            raise ValueError(f"Goal radius must be positive, got {self.radius}")
        if self.kind == GoalKind.STOPPING and not self.requires_zero_velocity:
            object.__setattr__(self, "requires_zero_velocity", True)

    @property
    def goal_id(self) -> str:
        return f"{self.kind.value}@{self.center[0]:.1f},{self.center[1]:.1f}"

    def distance(self, point: Sequence[float]) -> float:
        return math.hypot(point[0] - self.center[0], point[1] - self.center[1])

    def contains(self, point: Sequence[float]) -> bool:
        return self.distance(point) <= self.radius

    def satisfied_by(self, point: Sequence[float], speed: float) -> bool:
        if not self.contains(point):
            return False
        return not self.requires_zero_velocity or speed <= STOP_SPEED_THRESHOLD

    @classmethod
    def location(cls, center: Sequence[float], radius: float = DEFAULT_GOAL_RADIUS) -> "Goal":
        return cls(GoalKind.LOCATION, (center[0], center[1]), radius)

    @classmethod
    def stopping(cls, center: Sequence[float], radius: float = DEFAULT_GOAL_RADIUS) -> "Goal":
        return cls(GoalKind.STOPPING, (center[0], center[1]), radius, True)


@dataclass(frozen=True)
class ViewRegion:
    """Closed disc the observer can see."""

    center: Point2
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius <= 0:
            raise ValueError(f"View radius must be positive, got {self.radius}")

    def contains(self, point: Sequence[float]) -> bool:
        return math.hypot(point[0] - self.center[0], point[1] - self.center[1]) <= self.radius + 1e-9


@dataclass(eq=False)
class Lane:
    id: str
    road_id: str
    centerline: np.ndarray
    width: float
    direction: int = 1
    left: Optional[str] = None
    right: Optional[str] = None
    successors: Tuple[str, ...] = ()
    speed_limit: float = DEFAULT_SPEED_LIMIT
    roundabout_ring: bool = False
    junction_id: Optional[str] = None
    predecessors: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        self.successors = tuple(self.successors)
        seg = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    @cached_property
    def geometry(self) -> LineString:
        return LineString(self.centerline)

    @property
    def is_connector(self) -> bool:
        return self.junction_id is not None

    @property
    def start(self) -> np.ndarray:
        return self.centerline[0]

    @property
    def end(self) -> np.ndarray:
        return self.centerline[-1]

    def project(self, point: Sequence[float]) -> float:
        return float(self.geometry.project(Point(point[0], point[1])))

    def distance(self, point: Sequence[float]) -> float:
        return float(self.geometry.distance(Point(point[0], point[1])))

    def contains(self, point: Sequence[float]) -> bool:
        return self.distance(point) <= self.width / 2.0 + 1e-9

    def point_at(self, s: Union[float, np.ndarray]) -> np.ndarray:
        s = np.clip(s, 0.0, self.length)
        return np.column_stack(
            [np.interp(s, self._cum, self.centerline[:, 0]), np.interp(s, self._cum, self.centerline[:, 1])]
        ).squeeze()

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self.centerline) - 2))
        # skip zero-length segments
        while i < len(self.centerline) - 2 and self._cum[i + 1] - self._cum[i] < 1e-9:
            i += 1
        d = self.centerline[i + 1] - self.centerline[i]
        return math.atan2(d[1], d[0])

    def lateral_offset(self, point: Sequence[float]) -> float:
        """Signed distance of a point from the centerline, positive to the left."""
        s = self.project(point)
        base = self.point_at(s)
        h = self.heading_at(min(s, self.length - 1e-6))
        dx, dy = point[0] - base[0], point[1] - base[1]
        return -math.sin(h) * dx + math.cos(h) * dy

    def points_between(self, s0: float, s1: float, spacing: float = 2.0) -> np.ndarray:
        s0, s1 = max(0.0, s0), min(self.length, s1)
        if s1 <= s0:
            return np.atleast_2d(self.point_at(s0))
        count = max(2, int(math.ceil((s1 - s0) / spacing)) + 1)
        return np.atleast_2d(self.point_at(np.linspace(s0, s1, count)))

    def turn_direction(self) -> str:
        """Classify a lane by the heading change between its ends."""
        delta = wrap_angle(self.heading_at(self.length) - self.heading_at(0.0))
        if delta > TURN_ANGLE_THRESHOLD:
            return "left"
        if delta < -TURN_ANGLE_THRESHOLD:
            return "right"
        return "straight"


@dataclass
class Road:
    id: str
    lane_ids: Tuple[str, ...]
    speed_limit: Optional[float] = None


@dataclass
class Junction:
    id: str
    connectors: Tuple[str, ...]
    priority: Optional[str] = None


class RoadMap:
    """Immutable lane graph. Safe to share between planners."""

    def __init__(
        self,
        roads: Iterable[Road],
        lanes: Iterable[Lane],
        junctions: Iterable[Junction] = (),
        speed_limit: float = DEFAULT_SPEED_LIMIT,
    ):
        self.roads: Dict[str, Road] = {r.id: r for r in roads}
        self.lanes: Dict[str, Lane] = {lane.id: lane for lane in lanes}
        self.junctions: Dict[str, Junction] = {j.id: j for j in junctions}
        self.speed_limit = speed_limit
        self._conflicts: Dict[Tuple[str, str], np.ndarray] = {}
        self._link()

    def _link(self):
        preds: Dict[str, List[str]] = {lane_id: [] for lane_id in self.lanes}
        for lane in self.lanes.values():
            for succ in lane.successors:
                if succ not in self.lanes:
                    raise TopologyError(f"Lane {lane.id} has unknown successor {succ}")
                preds[succ].append(lane.id)
            for side in ("left", "right"):
                other_id = getattr(lane, side)
                if other_id is None:
                    continue
                if other_id not in self.lanes:
                    raise TopologyError(f"Lane {lane.id} has unknown {side} neighbor {other_id}")
                other = self.lanes[other_id]
                if other.direction == lane.direction:
                    back = other.right if side == "left" else other.left
                else:
                    back = other.left if side == "left" else other.right
                if back != lane.id:
                    raise TopologyError(f"Neighbor relation between {lane.id} and {other_id} is not mutual")
        for lane_id, pred in preds.items():
            self.lanes[lane_id].predecessors = tuple(sorted(pred))
        for junction in self.junctions.values():
            if junction.priority is not None and junction.priority not in self.roads:
                raise TopologyError(f"Junction {junction.id} names unknown priority road {junction.priority}")
            for connector_id in junction.connectors:
                connector = self.lanes.get(connector_id)
                if connector is None:
                    raise TopologyError(f"Junction {junction.id} has unknown connector {connector_id}")
                if not connector.predecessors or not connector.successors:
                    raise TopologyError(f"Connector {connector_id} of junction {junction.id} does not join two lanes")
                connector.junction_id = junction.id

    # Lookup

    def lane(self, lane_id: str) -> Lane:
        try:
            return self.lanes[lane_id]
        except KeyError:
            raise NoLaneError(f"Unknown lane {lane_id}") from None

    def successors(self, lane: Lane) -> List[Lane]:
        return [self.lanes[s] for s in lane.successors]

    def predecessors(self, lane: Lane) -> List[Lane]:
        return [self.lanes[p] for p in lane.predecessors]

    @property
    def max_speed_limit(self) -> float:
        return max([lane.speed_limit for lane in self.lanes.values()] + [self.speed_limit])

    def neighbor(self, lane: Lane, side: str) -> Optional[Lane]:
        """Same-direction neighbor on the given side, if any."""
        other_id = lane.left if side == "left" else lane.right
        if other_id is None:
            return None
        other = self.lanes[other_id]
        return other if other.direction == lane.direction else None

    def same_direction_lanes(self, lane: Lane) -> List[Lane]:
        """The lane and all same-direction lanes reachable through neighbors."""
        found = [lane]
        for side in ("left", "right"):
            cur = self.neighbor(lane, side)
            while cur is not None and cur not in found:
                found.append(cur)
                cur = self.neighbor(cur, side)
        return found

    def is_priority_lane(self, lane: Lane) -> bool:
        """Lanes of a junction's priority road, and connectors leaving it."""
        for junction in self.junctions.values():
            if junction.priority is None:
                continue
            if lane.road_id == junction.priority:
                return True
            if lane.junction_id == junction.id and any(
                self.lanes[p].road_id == junction.priority for p in lane.predecessors
            ):
                return True
        return False

    def relevant_lanes(self, connector: Lane) -> List[Lane]:
        """Priority lanes crossed by or merging with a junction connector."""
        if connector.junction_id is None:
            return []
        junction = self.junctions[connector.junction_id]
        if junction.priority is None:
            return []
        own_preds = set(connector.predecessors)
        endpoints = MultiPoint([tuple(connector.start), tuple(connector.end)]).buffer(0.5)
        found = []
        for lane in self.lanes.values():
            if lane.id == connector.id or lane.id in own_preds or lane.id in connector.successors:
                continue
            if own_preds & set(lane.predecessors) or not self.is_priority_lane(lane):
                continue
            merges = bool(set(lane.successors) & set(connector.successors))
            crosses = False
            if lane.junction_id == junction.id:
                inter = lane.geometry.intersection(connector.geometry)
                crosses = not inter.is_empty and not inter.difference(endpoints).is_empty
            if merges or crosses:
                found.append(lane)
        return sorted(found, key=lambda l: l.id)

    def conflict_point(self, connector: Lane, lane: Lane) -> np.ndarray:
        """Where a relevant lane meets a connector: the crossing point, or the shared merge point."""
        key = (connector.id, lane.id)
        if key not in self._conflicts:
            point = lane.end
            if not set(lane.successors) & set(connector.successors):
                inter = lane.geometry.intersection(connector.geometry)
                coords = shapely.get_coordinates(inter)
                if len(coords):
                    point = min(coords, key=lambda c: lane.project(c))
            self._conflicts[key] = np.asarray(point, dtype=float)
        return self._conflicts[key]

    def lanes_at(self, point: Sequence[float], heading: Optional[float] = None) -> List[Lane]:
        """All lanes whose corridor contains the point, nearest centerline first."""
        candidates = []
        for lane in self.lanes.values():
            d = lane.distance(point)
            if d > lane.width / 2.0 + 1e-9:
                continue
            if heading is not None:
                s = min(lane.project(point), lane.length - 1e-6)
                if abs(wrap_angle(lane.heading_at(s) - heading)) > math.pi / 2:
                    continue
            candidates.append((round(d, 9), lane.id, lane))
        candidates.sort(key=lambda c: (c[0], c[1]))
        return [c[2] for c in candidates]

    def __repr__(self) -> str:
        return f"RoadMap(roads={len(self.roads)}, lanes={len(self.lanes)}, junctions={len(self.junctions)})"


def lane_at(road_map: RoadMap, point: Sequence[float], heading: Optional[float] = None) -> Optional[Lane]:
    """
    Lane whose corridor (centerline +- width/2) contains the point.

    The nearest centerline wins; exact ties go to the lower lane id. With a
    heading hint, lanes driven against the heading are ignored.
    """
    lanes = road_map.lanes_at(point, heading)
    return lanes[0] if lanes else None


# Loading and serialization


def _require(doc: Mapping, key: str, path: str):
    if not isinstance(doc, Mapping) or key not in doc:
        raise MapParseError(path, f"missing required key '{key}'")
    return doc[key]


def _parse_direction(value: Any, path: str) -> int:
    if value in (1, "forward", True):
        return 1
    if value in (-1, "backward", False):
        return -1
    raise MapParseError(path, f"direction must be 1/-1 or forward/backward, got {value!r}")


def _parse_lane(doc: Mapping, road_id: str, road_limit: float, path: str) -> Lane:
    lane_id = str(_require(doc, "id", path))
    centerline = _require(doc, "centerline", path)
    try:
        points = np.asarray(centerline, dtype=float)
    except (TypeError, ValueError):
        raise MapParseError(f"{path}.centerline", "points must be numeric [x, y] pairs") from None
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 2:
        raise MapParseError(f"{path}.centerline", "needs at least two [x, y] points")
    if np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)) <= 0:
        raise MapParseError(f"{path}.centerline", "arc length must be positive")
    width = float(_require(doc, "width", path))
    if width <= 0:
        raise MapParseError(f"{path}.width", "must be positive")
    limit = float(doc.get("speed_limit", road_limit))
    if limit <= 0:
        raise MapParseError(f"{path}.speed_limit", "must be positive")
    successors = doc.get("successors", [])
    if not isinstance(successors, list):
        raise MapParseError(f"{path}.successors", "must be a list of lane ids")
    return Lane(
        id=lane_id,
        road_id=road_id,
        centerline=points,
        width=width,
        direction=_parse_direction(doc.get("direction", 1), f"{path}.direction"),
        left=doc.get("left"),
        right=doc.get("right"),
        successors=tuple(str(s) for s in successors),
        speed_limit=limit,
        roundabout_ring=bool(doc.get("roundabout_ring", False)),
    )


def load_map(map_document: Union[str, Mapping[str, Any]]) -> RoadMap:
    """
    Parse and validate a map document (JSON text or an already-decoded dict).

    Raises:
        MapParseError: the document violates the schema; the message names the path
        TopologyError: a lane or junction refers to something that does not exist
    """
    if isinstance(map_document, str):
        try:
            doc = json.loads(map_document)
        except json.JSONDecodeError as e:
            raise MapParseError("$", f"invalid JSON: {e}") from None
    else:
        doc = map_document
    if not isinstance(doc, Mapping):
        raise MapParseError("$", "document must be an object")

    default_limit = float(doc.get("speed_limit", DEFAULT_SPEED_LIMIT))
    roads_doc = _require(doc, "roads", "$")
    if not isinstance(roads_doc, list):
        raise MapParseError("roads", "must be a list")

    roads, lanes, seen = [], [], set()
    for i, road_doc in enumerate(roads_doc):
        road_path = f"roads[{i}]"
        road_id = str(_require(road_doc, "id", road_path))
        road_limit = float(road_doc.get("speed_limit", default_limit))
        lane_docs = _require(road_doc, "lanes", road_path)
        if not isinstance(lane_docs, list) or not lane_docs:
            raise MapParseError(f"{road_path}.lanes", "must be a non-empty list")
        lane_ids = []
        for j, lane_doc in enumerate(lane_docs):
            lane = _parse_lane(lane_doc, road_id, road_limit, f"{road_path}.lanes[{j}]")
            if lane.id in seen:
                raise MapParseError(f"{road_path}.lanes[{j}].id", f"duplicate lane id {lane.id}")
            seen.add(lane.id)
            lanes.append(lane)
            lane_ids.append(lane.id)
        roads.append(Road(road_id, tuple(lane_ids), road_doc.get("speed_limit")))

    junctions = []
    for i, junction_doc in enumerate(doc.get("junctions", [])):
        path = f"junctions[{i}]"
        connectors = _require(junction_doc, "connectors", path)
        if not isinstance(connectors, list):
            raise MapParseError(f"{path}.connectors", "must be a list of lane ids")
        junctions.append(
            Junction(
                id=str(_require(junction_doc, "id", path)),
                connectors=tuple(str(c) for c in connectors),
                priority=junction_doc.get("priority"),
            )
        )

    road_map = RoadMap(roads, lanes, junctions, default_limit)
    logger.debug("Loaded %r", road_map)
    return road_map


def load_map_file(path: str) -> RoadMap:
    with open(path, "r", encoding="utf-8") as f:
        return load_map(f.read())


def serialize_map(road_map: RoadMap) -> Dict[str, Any]:
    """Inverse of load_map: produce a document that loads back field-for-field."""
    roads = []
    for road in road_map.roads.values():
        lanes = []
        for lane_id in road.lane_ids:
            lane = road_map.lanes[lane_id]
            lanes.append(
                {
                    "id": lane.id,
                    "centerline": lane.centerline.tolist(),
                    "width": lane.width,
                    "direction": lane.direction,
                    "left": lane.left,
                    "right": lane.right,
                    "successors": list(lane.successors),
                    "speed_limit": lane.speed_limit,
                    "roundabout_ring": lane.roundabout_ring,
                }
            )
        entry: Dict[str, Any] = {"id": road.id, "lanes": lanes}
        if road.speed_limit is not None:
            entry["speed_limit"] = road.speed_limit
        roads.append(entry)
    junctions = [
        {"id": j.id, "connectors": list(j.connectors), "priority": j.priority} for j in road_map.junctions.values()
    ]
    return {"speed_limit": road_map.speed_limit, "roads": roads, "junctions": junctions}


# Goal generation


def _visible_extent(lane: Lane, s0: float, view: Optional[ViewRegion]) -> Tuple[float, bool]:
    """Arc position where the lane leaves the view (or its end) and whether it was clipped."""
    if view is None:
        return lane.length, False
    samples = np.append(np.arange(s0, lane.length, 1.0), lane.length)
    points = np.atleast_2d(lane.point_at(samples))
    inside = np.hypot(points[:, 0] - view.center[0], points[:, 1] - view.center[1]) <= view.radius
    if inside.all():
        return lane.length, False
    first_out = int(np.argmin(inside))
    if first_out == 0:
        return s0, True
    return float(samples[first_out - 1]), True


def _road_end_points(road_map: RoadMap, lane: Lane, s: float, view: Optional[ViewRegion]) -> List[Tuple[str, np.ndarray]]:
    """
    Walk forward from a lane position and collect visible road ends.

    The current road's end counts only when it is a dead end or leaves the
    view; when it runs into a junction the connecting roads are walked
    instead. Roundabout rings are followed all the way round.
    """
    ends: List[Tuple[str, np.ndarray]] = []
    stack = [(start, start.project(lane.point_at(s)), 1) for start in road_map.same_direction_lanes(lane)]
    visited = set()
    while stack:
        cur, s0, budget = stack.pop()
        if cur.id in visited:
            continue
        visited.add(cur.id)
        if view is not None and not view.contains(cur.point_at(s0)):
            continue
        s_end, clipped = _visible_extent(cur, s0, view)
        if clipped:
            ends.append((cur.road_id, cur.point_at(s_end)))
            continue
        successors = road_map.successors(cur)
        if not successors:
            ends.append((cur.road_id, cur.end))
            continue
        for nxt in successors:
            enters_junction = nxt.is_connector and not cur.is_connector
            if not enters_junction or cur.roundabout_ring:
                stack.append((nxt, 0.0, budget))
            elif budget > 0:
                stack.append((nxt, 0.0, budget - 1))
            else:
                ends.append((cur.road_id, cur.end))
        # exits from a ring connect onward without consuming the budget
        for nxt in successors:
            if nxt.roundabout_ring:
                for neighbor in road_map.same_direction_lanes(nxt):
                    stack.append((neighbor, 0.0, budget))
    return ends


def _cluster_goals(ends: List[Tuple[str, np.ndarray]], goal_radius: float) -> List[Goal]:
    clusters: List[Tuple[str, List[np.ndarray]]] = []
    for road_id, point in ends:
        for cluster_road, members in clusters:
            if cluster_road == road_id and min(np.linalg.norm(point - m) for m in members) < 8.0:
                members.append(point)
                break
        else:
            clusters.append((road_id, [point]))
    goals = []
    for _, members in clusters:
        pts = np.array(members)
        center = pts.mean(axis=0)
        spread = float(np.max(np.linalg.norm(pts - center, axis=1)))
        radius = goal_radius if spread == 0 else max(goal_radius, spread + 0.5)
        goals.append(Goal.location(center, radius))
    return goals


def generate_goals(
    road_map: RoadMap,
    vehicle,
    view: Optional[ViewRegion],
    traffic: Sequence = (),
    goal_radius: float = DEFAULT_GOAL_RADIUS,
    stop_speed_threshold: float = STOP_SPEED_THRESHOLD,
) -> List[Goal]:
    """
    Candidate goals of a vehicle: one location goal per visible end of its
    current road and of each connecting road, plus a stopping goal at every
    vehicle in view that stands (nearly) still.

    Raises:
        NoLaneError: the vehicle is not on any lane
    """
    lane = lane_at(road_map, vehicle.position, vehicle.heading)
    if lane is None:
        raise NoLaneError(f"Vehicle at {vehicle.position} is not on a lane")
    s = lane.project(vehicle.position)
    goals = _cluster_goals(_road_end_points(road_map, lane, s, view), goal_radius)

    for other in [vehicle, *traffic]:
        if other.speed > stop_speed_threshold:
            continue
        if view is not None and not view.contains(other.position):
            continue
        stop = Goal.stopping(other.position, goal_radius)
        if all(g.goal_id != stop.goal_id for g in goals):
            goals.append(stop)

    goals.sort(key=lambda g: (g.kind.value, g.center))
    return goals
