"""
Generated town maps for long-route experiments.

A town is a grid of junctions joined by two-way roads with one or two
lanes per direction. Each junction gives priority to one of its two
crossing roads, picked at random. Ego routes are shortest paths through
the lane graph from one edge of the town to another; the ego only ever
plans towards the furthest point of its route it can currently see.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from goal_driving_server.core.agents import Agent, Command, ForecastFactory, ManeuverExecutor, cv_forecast
from goal_driving_server.core.exceptions import ContractError, GoalDrivingError
from goal_driving_server.core.macro_actions import MacroAction, MacroContext, applicable_macros, expand_macro
from goal_driving_server.core.maneuvers import ManeuverConfig, ManeuverInstance, current_lane
from goal_driving_server.core.road_map import Goal, RoadMap, load_map
from goal_driving_server.core.simulator import AgentFactory
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.harness.scenarios import TownSpec

logger = logging.getLogger(__name__)

LANE_WIDTH = 3.5
JUNCTION_HALF_SIZE = 11.0
LANE_CHANGE_COST = 15.0
ROUTE_SPACING = 2.0
ROUTE_GOAL_RADIUS = 4.0
START_OFFSET = 5.0

# unit direction of travel into a junction from each arm, and out of it
_IN = {"W": (1, 0), "E": (-1, 0), "S": (0, 1), "N": (0, -1)}
_OUT = {"W": (-1, 0), "E": (1, 0), "S": (0, -1), "N": (0, 1)}


@dataclass(frozen=True)
class TownRoute:
    lanes: Tuple[str, ...]
    start: VehicleState
    goal: Goal
    waypoints: np.ndarray = field(compare=False)


@dataclass
class TownLayout:
    spec: TownSpec
    document: Dict
    road_map: RoadMap
    graph: nx.DiGraph
    entries: List[str]
    exits: List[str]
    routes: List[TownRoute]


# Geometry


def _bezier(p0, u0, p3, u1, samples: int = 9) -> List[List[float]]:
    p0, u0, p3, u1 = (np.asarray(v, dtype=float) for v in (p0, u0, p3, u1))
    chord = float(np.linalg.norm(p3 - p0))
    straight = abs(float(np.dot(u0, u1)) - 1.0) < 1e-9
    reach = chord / 3.0 if straight else 0.4 * chord
    p1, p2 = p0 + reach * u0, p3 - reach * u1
    t = np.linspace(0.0, 1.0, samples)[:, None]
    points = (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3
    return np.round(points, 4).tolist()


def _lane_doc(lane_id: str, start, end, index: int, count: int, prefix: str, speed_limit: float) -> Dict:
    # index 0 is the innermost (leftmost) lane
    return {
        "id": lane_id,
        "centerline": [list(start), list(end)],
        "width": LANE_WIDTH,
        "direction": 1,
        "left": f"{prefix}{index - 1}" if index > 0 else None,
        "right": f"{prefix}{index + 1}" if index + 1 < count else None,
        "successors": [],
        "speed_limit": speed_limit,
    }


def generate_town_document(spec: TownSpec) -> Dict:
    """Map document of a town; identical for identical specs."""
    if spec.rows < 1 or spec.cols < 1:
        raise ContractError("A town needs at least one row and one column of junctions")
    if spec.spacing / 2.0 <= JUNCTION_HALF_SIZE + 5.0:
        raise ContractError(f"Junction spacing {spec.spacing} m is too small")
    rng = np.random.default_rng(spec.seed)
    s, h = spec.spacing, JUNCTION_HALF_SIZE
    n_h = [int(rng.integers(1, 3)) for _ in range(spec.rows)]
    n_v = [int(rng.integers(1, 3)) for _ in range(spec.cols)]
    lanes: Dict[str, Dict] = {}
    roads: List[Dict] = []

    def nodes(count: int) -> List[Tuple[float, bool]]:
        # (coordinate, is_junction) along one grid line
        return [(-s / 2.0, False)] + [(k * s, True) for k in range(count)] + [((count - 1) * s + s / 2.0, False)]

    for j in range(spec.rows):
        y, n, ids = j * s, n_h[j], []
        line = nodes(spec.cols)
        for g in range(len(line) - 1):
            (xa, ja), (xb, jb) = line[g], line[g + 1]
            xa, xb = xa + (h if ja else 0.0), xb - (h if jb else 0.0)
            for k in range(n):
                off = (k + 0.5) * LANE_WIDTH
                east, west = f"h{j}s{g}e", f"h{j}s{g}w"
                lanes[f"{east}{k}"] = _lane_doc(f"{east}{k}", (xa, y - off), (xb, y - off), k, n, east, spec.speed_limit)
                lanes[f"{west}{k}"] = _lane_doc(f"{west}{k}", (xb, y + off), (xa, y + off), k, n, west, spec.speed_limit)
                ids += [f"{east}{k}", f"{west}{k}"]
        roads.append({"id": f"h{j}", "speed_limit": spec.speed_limit, "lane_ids": ids})

    for i in range(spec.cols):
        x, n, ids = i * s, n_v[i], []
        line = nodes(spec.rows)
        for g in range(len(line) - 1):
            (ya, ja), (yb, jb) = line[g], line[g + 1]
            ya, yb = ya + (h if ja else 0.0), yb - (h if jb else 0.0)
            for k in range(n):
                off = (k + 0.5) * LANE_WIDTH
                north, south = f"v{i}s{g}n", f"v{i}s{g}s"
                lanes[f"{north}{k}"] = _lane_doc(f"{north}{k}", (x + off, ya), (x + off, yb), k, n, north, spec.speed_limit)
                lanes[f"{south}{k}"] = _lane_doc(f"{south}{k}", (x - off, yb), (x - off, ya), k, n, south, spec.speed_limit)
                ids += [f"{north}{k}", f"{south}{k}"]
        roads.append({"id": f"v{i}", "speed_limit": spec.speed_limit, "lane_ids": ids})

    junctions = []
    for i in range(spec.cols):
        for j in range(spec.rows):
            # segment g of a line joins node g and node g + 1; junction k is node k + 1
            arms = {
                "W": ([f"h{j}s{i}e{k}" for k in range(n_h[j])], [f"h{j}s{i}w{k}" for k in range(n_h[j])]),
                "E": ([f"h{j}s{i + 1}w{k}" for k in range(n_h[j])], [f"h{j}s{i + 1}e{k}" for k in range(n_h[j])]),
                "S": ([f"v{i}s{j}n{k}" for k in range(n_v[i])], [f"v{i}s{j}s{k}" for k in range(n_v[i])]),
                "N": ([f"v{i}s{j + 1}s{k}" for k in range(n_v[i])], [f"v{i}s{j + 1}n{k}" for k in range(n_v[i])]),
            }
            connectors = []
            for src, (incoming, _) in arms.items():
                dx, dy = _IN[src]
                targets = {"straight": (dx, dy), "right": (dy, -dx), "left": (-dy, dx)}
                for turn, direction in targets.items():
                    dst = next(a for a, d in _OUT.items() if d == direction)
                    outgoing = arms[dst][1]
                    if turn == "straight":
                        pairs = [(k, k) for k in range(min(len(incoming), len(outgoing)))]
                    elif turn == "right":
                        pairs = [(len(incoming) - 1, len(outgoing) - 1)]
                    else:
                        pairs = [(0, 0)]
                    for a, b in pairs:
                        in_lane, out_lane = lanes[incoming[a]], lanes[outgoing[b]]
                        cid = f"j{i}_{j}_{src}{dst}{a}"
                        lanes[cid] = {
                            "id": cid,
                            "centerline": _bezier(in_lane["centerline"][-1], _IN[src], out_lane["centerline"][0], _OUT[dst]),
                            "width": LANE_WIDTH,
                            "successors": [out_lane["id"]],
                            "speed_limit": spec.speed_limit,
                        }
                        in_lane["successors"].append(cid)
                        connectors.append(cid)
            junction_id = f"j{i}_{j}"
            roads.append({"id": junction_id, "speed_limit": spec.speed_limit, "lane_ids": connectors})
            priority = f"h{j}" if rng.random() < 0.5 else f"v{i}"
            junctions.append({"id": junction_id, "connectors": connectors, "priority": priority})

    return {
        "speed_limit": spec.speed_limit,
        "roads": [
            {"id": r["id"], "speed_limit": r["speed_limit"], "lanes": [lanes[lid] for lid in r["lane_ids"]]} for r in roads
        ],
        "junctions": junctions,
    }


# Routes


def lane_graph(road_map: RoadMap) -> nx.DiGraph:
    """Lane successors weighted by lane length, plus lane changes between plain lanes."""
    graph = nx.DiGraph()
    for lane_id in sorted(road_map.lanes):
        lane = road_map.lanes[lane_id]
        graph.add_node(lane_id)
        for succ in lane.successors:
            graph.add_edge(lane_id, succ, weight=lane.length, change=False)
        if lane.is_connector:
            continue
        for side in ("left", "right"):
            other = road_map.neighbor(lane, side)
            if other is not None:
                graph.add_edge(lane_id, other.id, weight=LANE_CHANGE_COST, change=True)
    return graph


def route_waypoints(road_map: RoadMap, graph: nx.DiGraph, lanes: Sequence[str], spacing: float = ROUTE_SPACING) -> np.ndarray:
    """Points along a lane route; a lane change switches lanes halfway along."""
    points, start = [], 0.0
    for k, lane_id in enumerate(lanes):
        lane = road_map.lanes[lane_id]
        end = lane.length
        changes = k + 1 < len(lanes) and graph.edges[lane_id, lanes[k + 1]]["change"]
        if changes:
            end = max(start, lane.length / 2.0)
        if end > start:
            points.append(np.atleast_2d(lane.points_between(start, end, spacing)))
        start = road_map.lanes[lanes[k + 1]].project(lane.point_at(end)) if changes else 0.0
    return np.vstack(points)


def _boundary_lanes(road_map: RoadMap) -> Tuple[List[str], List[str]]:
    entries = [lid for lid, lane in road_map.lanes.items() if not lane.is_connector and not lane.predecessors]
    exits = [lid for lid, lane in road_map.lanes.items() if not lane.is_connector and not lane.successors]
    return sorted(entries), sorted(exits)


def _segment(lane_id: str) -> str:
    return lane_id.rstrip("0123456789")[:-1]


def plan_route(road_map: RoadMap, graph: nx.DiGraph, start: str, end: str) -> Optional[List[str]]:
    try:
        return nx.shortest_path(graph, start, end, weight="weight")
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        return None


def make_route(road_map: RoadMap, graph: nx.DiGraph, lanes: Sequence[str]) -> TownRoute:
    first, last = road_map.lanes[lanes[0]], road_map.lanes[lanes[-1]]
    s0 = min(START_OFFSET, first.length / 2.0)
    p0 = first.point_at(s0)
    start = VehicleState((float(p0[0]), float(p0[1])), first.heading_at(s0), 0.0, 0.0, 0.0)
    goal = Goal.location(last.point_at(max(last.length - START_OFFSET, 0.0)), ROUTE_GOAL_RADIUS)
    return TownRoute(tuple(lanes), start, goal, route_waypoints(road_map, graph, lanes))


def build_town(spec: TownSpec) -> TownLayout:
    """
    Generate the town map and its ego routes.

    Raises:
        ContractError: the town is too small to hold the requested routes
    """
    document = generate_town_document(spec)
    road_map = load_map(document)
    graph = lane_graph(road_map)
    entries, exits = _boundary_lanes(road_map)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    routes: List[TownRoute] = []
    for _ in range(200 * spec.routes):
        if len(routes) >= spec.routes:
            break
        start = entries[int(rng.integers(len(entries)))]
        end = exits[int(rng.integers(len(exits)))]
        if _segment(start) == _segment(end):
            continue
        lanes = plan_route(road_map, graph, start, end)
        if lanes is None or not any(road_map.lanes[lid].is_connector for lid in lanes):
            continue
        routes.append(make_route(road_map, graph, lanes))
    if len(routes) < spec.routes:
        raise ContractError(f"Only {len(routes)} of {spec.routes} routes found in the town")
    logger.info("Built town with %d lanes, %d junctions and %d routes", len(road_map.lanes), len(road_map.junctions), len(routes))
    return TownLayout(spec, document, road_map, graph, entries, exits, routes)


# Route following


class RouteProgress:
    """Where the ego is along its route, and the furthest route point it can see."""

    def __init__(self, road_map: RoadMap, route: TownRoute):
        self.road_map = road_map
        self.route = route
        self.index = 0
        allowed: Set[str] = set()
        for lane_id in route.lanes:
            lane = road_map.lanes[lane_id]
            allowed.add(lane_id)
            if not lane.is_connector:
                allowed.update(other.id for other in road_map.same_direction_lanes(lane))
        self.allowed = allowed

    def update(self, position: Sequence[float]) -> int:
        wp = self.route.waypoints
        window = wp[self.index : self.index + 50]
        d = np.hypot(window[:, 0] - position[0], window[:, 1] - position[1])
        self.index += int(np.argmin(d))
        return self.index

    def on_route(self, state: VehicleState) -> bool:
        return any(lane.id in self.allowed for lane in self.road_map.lanes_at(state.position, state.heading))

    def visible_goal(self, position: Sequence[float], radius: Optional[float]) -> Goal:
        """The outermost route point within the radius; the route goal once that is in sight."""
        if radius is None or self.route.goal.distance(position) <= radius:
            return self.route.goal
        wp = self.route.waypoints[self.index :]
        d = np.hypot(wp[:, 0] - position[0], wp[:, 1] - position[1])
        inside = np.flatnonzero(d <= radius)
        k = int(inside[-1]) if len(inside) else min(1, len(wp) - 1)
        return Goal.location(wp[k], ROUTE_GOAL_RADIUS)


def _macro_lanes(maneuvers: Sequence[ManeuverInstance]) -> List[str]:
    return list(dict.fromkeys(lane_id for inst in maneuvers for lane_id in inst.lane_ids))


class RouteAgent(Agent):
    """
    Drives a fixed lane route by picking, among the applicable macros, the
    one that stays on the route longest. While it continues along the road
    it checks every replan_period whether a macro now covers the route
    entirely, so turns are taken at the right junction.
    """

    def __init__(
        self,
        route: Sequence[str],
        goal: Optional[Goal],
        config: Optional[ManeuverConfig] = None,
        forecast: ForecastFactory = cv_forecast,
        replan_period: float = 1.0,
    ):
        self.route = tuple(route)
        self.goal = goal
        self.config = config or ManeuverConfig()
        self.forecast = forecast
        self.replan_period = replan_period
        self.executor: Optional[ManeuverExecutor] = None
        self.checked = -math.inf

    def clone(self) -> "RouteAgent":
        other = RouteAgent(self.route, self.goal, self.config, self.forecast, self.replan_period)
        other.executor = self.executor.clone() if self.executor is not None else None
        other.checked = self.checked
        return other

    def choose(self, vehicle_id: str, state: VehicleState, world, road_map: RoadMap):
        """(covers whole route, macro, maneuvers) of the best macro, or None."""
        ctx = MacroContext(forecast=self.forecast(vehicle_id, world, road_map), config=self.config)
        on_route = set(self.route)
        best = None
        for macro in applicable_macros(state, road_map, ctx):
            try:
                maneuvers = expand_macro(macro, state, road_map, ctx)
            except GoalDrivingError:
                continue
            lanes = _macro_lanes(maneuvers)
            prefix = next((k for k, lane_id in enumerate(lanes) if lane_id not in on_route), len(lanes))
            key = (prefix == len(lanes), prefix, -macro.order)
            if best is None or key > best[0]:
                best = (key, macro, maneuvers)
        return None if best is None else (best[0][0], best[1], best[2])

    def command(self, vehicle_id, state, world, road_map) -> Command:
        if self.goal is not None and self.goal.satisfied_by(state.position, state.speed):
            return Command.brake()
        if self.executor is not None and not self.executor.finished and self.executor.macro == MacroAction.CONTINUE:
            if world.time - self.checked >= self.replan_period:
                self.checked = world.time
                choice = self.choose(vehicle_id, state, world, road_map)
                if choice is not None and choice[0] and choice[1] != MacroAction.CONTINUE:
                    self.executor = ManeuverExecutor(choice[2], self.config, choice[1])

        def forecast():
            return self.forecast(vehicle_id, world, road_map)

        for _ in range(2):
            if self.executor is None or self.executor.finished:
                choice = self.choose(vehicle_id, state, world, road_map)
                if choice is None:
                    return Command.brake()
                self.executor = ManeuverExecutor(choice[2], self.config, choice[1])
                self.checked = world.time
            cmd = self.executor.command(state, road_map, forecast)
            if cmd is not None:
                return cmd
        return Command.brake()


def traffic_factory(layout: TownLayout, config: Optional[ManeuverConfig] = None, tries: int = 5) -> AgentFactory:
    """Spawned vehicles drive a shortest route to a random edge of the town."""

    def make(state: VehicleState, road_map: RoadMap, rng: np.random.Generator):
        lane = current_lane(road_map, state)
        if lane is None:
            return RouteAgent((), None, config), None
        for _ in range(tries):
            end = layout.exits[int(rng.integers(len(layout.exits)))]
            lanes = plan_route(road_map, layout.graph, lane.id, end)
            if lanes:
                last = road_map.lanes[lanes[-1]]
                goal = Goal.location(last.point_at(max(last.length - START_OFFSET, 0.0)), ROUTE_GOAL_RADIUS)
                return RouteAgent(lanes, goal, config), goal
        return RouteAgent((lane.id,), None, config), None

    return make
