"""
Closed-loop multi-vehicle simulation.

Vehicles follow a kinematic bicycle model integrated with forward Euler.
Steering comes from a proportional heading controller with cross-track
correction toward the agent's reference path; acceleration is the smaller
of a proportional speed controller and the Intelligent Driver Model with
respect to the vehicle ahead on that path (or a stop line). The world is
stepped in place by a single loop; planners work on clones.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from shapely import affinity
from shapely.geometry import Polygon, box

from goal_driving_server.core.agents import Agent, Command
from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.core.road_map import Goal, RoadMap, wrap_angle
from goal_driving_server.core.trajectory import Path, VehicleState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 15.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 2.0
    comfort_decel: float = 3.0
    exponent: float = 4.0

    def __post_init__(self):
        values = (self.desired_speed, self.time_headway, self.min_gap, self.max_accel, self.comfort_decel, self.exponent)
        if any(v <= 0 for v in values):
            raise ValueError("All IDM parameters must be positive")


@dataclass(frozen=True)
class ControllerGains:
    """Proportional gains: speed in 1/s, heading dimensionless, cross-track in 1/m."""

    speed: float = 2.0
    heading: float = 4.0
    cross_track: float = 0.5
    preview_time: float = 0.3


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    vehicle_length: float = 4.0
    vehicle_width: float = 1.8
    wheelbase: float = 2.7
    idm: IdmParams = field(default_factory=IdmParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    max_steer: float = 0.6
    max_accel: float = 3.0
    max_decel: float = 8.0
    leader_horizon: float = 60.0
    observation_radius: float = 50.0
    spawn_band: float = 25.0
    target_traffic_count: int = 8
    spawn_spacing: float = 12.0
    spawn_speed: Tuple[float, float] = (5.0, 10.0)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("Simulation step must be positive")
        if self.vehicle_length <= 0 or self.vehicle_width <= 0 or self.wheelbase <= 0:
            raise ValueError("Vehicle dimensions must be positive")
        if self.target_traffic_count < 0:
            raise ValueError("target_traffic_count must be non-negative")


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    vehicles: Tuple[str, str]
    depth: float

    def __post_init__(self):
        if self.depth <= 0:
            raise ContractError("Collision overlap depth must be positive")


@dataclass(eq=False)
class Vehicle:
    vehicle_id: str
    state: VehicleState
    agent: Agent
    goal: Optional[Goal] = None
    is_ego: bool = False
    completed: bool = False
    collided: bool = False
    maneuver: str = ""
    history: List[VehicleState] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history.append(self.state)

    def clone(self) -> "Vehicle":
        return Vehicle(
            self.vehicle_id,
            self.state,
            self.agent.clone(),
            self.goal,
            self.is_ego,
            self.completed,
            self.collided,
            self.maneuver,
            list(self.history),
        )


@dataclass(eq=False)
class WorldState:
    """Joint state of all vehicles. Completed vehicles have left the road; collided ones are frozen."""

    time: float = 0.0
    vehicles: Dict[str, Vehicle] = field(default_factory=dict)
    collisions: List[CollisionEvent] = field(default_factory=list)
    spawned: int = 0

    def add(self, vehicle: Vehicle) -> Vehicle:
        if vehicle.vehicle_id in self.vehicles:
            raise ContractError(f"Vehicle {vehicle.vehicle_id} already exists")
        self.vehicles[vehicle.vehicle_id] = vehicle
        return vehicle

    def active(self) -> List[Vehicle]:
        return [v for v in self.vehicles.values() if not v.completed]

    def states(self, exclude: Optional[str] = None) -> Dict[str, VehicleState]:
        return {v.vehicle_id: v.state for v in self.active() if v.vehicle_id != exclude}

    def clone(self) -> "WorldState":
        return WorldState(
            self.time,
            {vid: v.clone() for vid, v in self.vehicles.items()},
            list(self.collisions),
            self.spawned,
        )

    def trace_rows(self) -> List[Tuple[float, str, float, float, float, float, float, str]]:
        """(t, vehicle, x, y, heading, speed, acceleration, maneuver) for every vehicle on the road."""
        return [
            (self.time, v.vehicle_id, v.state.x, v.state.y, v.state.heading, v.state.speed, v.state.acceleration, v.maneuver)
            for v in self.active()
        ]


# Vehicle dynamics


def idm_acceleration(v: float, v_leader: float, gap: float, cfg: IdmParams, desired_speed: Optional[float] = None) -> float:
    """
    Intelligent Driver Model acceleration.

    Raises:
        ContractError: gap is not positive (the vehicles already touch)
    """
    if gap <= 0:
        raise ContractError(f"IDM needs a positive gap, got {gap:.3f} m")
    v0 = desired_speed if desired_speed is not None else cfg.desired_speed
    s_star = cfg.min_gap + v * cfg.time_headway + v * (v - v_leader) / (2.0 * math.sqrt(cfg.max_accel * cfg.comfort_decel))
    s_star = max(s_star, 0.0)
    return cfg.max_accel * (1.0 - (v / v0) ** cfg.exponent - (s_star / gap) ** 2)


def advance(state: VehicleState, accel: float, steer: float, cfg: SimConfig) -> VehicleState:
    """One forward-Euler step of the kinematic bicycle model."""
    dt, v, theta = cfg.dt, state.speed, state.heading
    if v + accel * dt < 0.0:
        accel = -v / dt
    x = state.x + v * math.cos(theta) * dt
    y = state.y + v * math.sin(theta) * dt
    heading = theta + v * math.tan(steer) / cfg.wheelbase * dt
    return VehicleState((x, y), heading, max(v + accel * dt, 0.0), accel, round(state.time + dt, 9))


def find_leader(vehicle: Vehicle, path: Path, world: WorldState, cfg: SimConfig) -> Optional[Tuple[float, float]]:
    """Bumper gap to and along-path speed of the nearest vehicle ahead on the path."""
    s_self = path.project(vehicle.state.position)
    best = None
    for other in world.active():
        if other is vehicle:
            continue
        o = other.state
        if math.hypot(o.x - vehicle.state.x, o.y - vehicle.state.y) > cfg.leader_horizon:
            continue
        ds = path.project(o.position) - s_self
        if ds <= 0 or path.distance(o.position) > cfg.vehicle_width:
            continue
        gap = ds - cfg.vehicle_length
        if best is None or gap < best[0]:
            along = o.speed * math.cos(wrap_angle(o.heading - float(path.heading_at(s_self + ds))))
            best = (gap, along)
    return best


def control(vehicle: Vehicle, command: Command, world: WorldState, cfg: SimConfig) -> Tuple[float, float]:
    """Acceleration and steering angle for one tick, both saturated."""
    state, gains = vehicle.state, cfg.gains
    v = state.speed
    accel = gains.speed * (command.target_speed - v)
    steer = 0.0
    if command.path is not None:
        path = command.path
        s = path.project(state.position)
        offset = path.lateral_offset(state.position)
        reference = float(path.heading_at(s + gains.preview_time * v)) - math.atan(gains.cross_track * offset)
        steer = math.atan2(cfg.wheelbase * gains.heading * wrap_angle(reference - state.heading), max(v, 1.0))

        obstacles = []
        leader = find_leader(vehicle, path, world, cfg)
        if leader is not None:
            obstacles.append(leader)
        if command.stop_at is not None:
            # IDM comes to rest min_gap short of its leader, so the line sits min_gap beyond the stop
            obstacles.append((command.stop_at - s + cfg.idm.min_gap, 0.0))
        for gap, v_leader in obstacles:
            if gap <= 0.05:
                accel = -cfg.max_decel
                break
            accel = min(accel, idm_acceleration(v, v_leader, gap, cfg.idm))
    steer = float(np.clip(steer, -cfg.max_steer, cfg.max_steer))
    accel = float(np.clip(accel, -cfg.max_decel, cfg.max_accel))
    return accel, steer


# Collision checking


def footprint(state: VehicleState, cfg: SimConfig) -> Polygon:
    rect = box(-cfg.vehicle_length / 2, -cfg.vehicle_width / 2, cfg.vehicle_length / 2, cfg.vehicle_width / 2)
    rect = affinity.rotate(rect, state.heading, origin=(0, 0), use_radians=True)
    return affinity.translate(rect, state.x, state.y)


def overlap_depth(a: Polygon, b: Polygon) -> float:
    """Smaller side of the minimum rotated rectangle around the overlap; 0 when they only touch."""
    inter = a.intersection(b)
    if inter.is_empty or inter.area <= 1e-9:
        return 0.0
    corners = np.asarray(inter.minimum_rotated_rectangle.exterior.coords)
    sides = np.linalg.norm(np.diff(corners[:3], axis=0), axis=1)
    return float(sides.min())


def check_collisions(world: WorldState, cfg: SimConfig) -> List[CollisionEvent]:
    """Overlapping footprints among vehicles on the road, with a center-distance broad phase."""
    vehicles = world.active()
    shapes = {v.vehicle_id: footprint(v.state, cfg) for v in vehicles}
    events = []
    for i, a in enumerate(vehicles):
        for b in vehicles[i + 1 :]:
            if math.hypot(a.state.x - b.state.x, a.state.y - b.state.y) > 2 * cfg.vehicle_length:
                continue
            depth = overlap_depth(shapes[a.vehicle_id], shapes[b.vehicle_id])
            if depth > 0:
                pair = tuple(sorted((a.vehicle_id, b.vehicle_id)))
                events.append(CollisionEvent(world.time, pair, depth))
    return events


def observe(world: WorldState, observer: str, radius: float) -> Dict[str, VehicleState]:
    """Exact states of the other vehicles within a closed disc around the observer."""
    if observer not in world.vehicles:
        raise ContractError(f"Unknown observer {observer}")
    center = world.vehicles[observer].state
    return {
        v.vehicle_id: v.state
        for v in world.active()
        if v.vehicle_id != observer and math.hypot(v.state.x - center.x, v.state.y - center.y) <= radius + 1e-9
    }


def step(world: WorldState, road_map: RoadMap, cfg: SimConfig) -> WorldState:
    """
    Advance the world by one tick in place.

    Every agent decides on the world as it was at the start of the tick;
    then all vehicles move, collisions are recorded and vehicles that
    reached their goal leave the road.
    """
    commands: Dict[str, Command] = {}
    for v in world.active():
        if not v.collided:
            commands[v.vehicle_id] = v.agent.command(v.vehicle_id, v.state, world, road_map)
    moves = {}
    for vid, cmd in commands.items():
        vehicle = world.vehicles[vid]
        accel, steer = control(vehicle, cmd, world, cfg)
        moves[vid] = advance(vehicle.state, accel, steer, cfg)
        vehicle.maneuver = cmd.maneuver
    for vid, state in moves.items():
        vehicle = world.vehicles[vid]
        vehicle.state = state
        vehicle.history.append(state)
    world.time = round(world.time + cfg.dt, 9)

    seen = {e.vehicles for e in world.collisions}
    for event in check_collisions(world, cfg):
        if event.vehicles in seen:
            continue
        world.collisions.append(event)
        for vid in event.vehicles:
            vehicle = world.vehicles[vid]
            vehicle.collided = True
            vehicle.state = vehicle.state.replace(speed=0.0, acceleration=0.0)
        logger.info("Collision between %s and %s at t=%.1f (overlap %.2f m)", *event.vehicles, event.time, event.depth)

    for v in world.active():
        if v.goal is not None and not v.collided and v.goal.satisfied_by(v.state.position, v.state.speed):
            v.completed = True
            logger.debug("%s reached %s at t=%.1f", v.vehicle_id, v.goal.goal_id, world.time)
    return world


# Town traffic


AgentFactory = Callable[[VehicleState, RoadMap, np.random.Generator], Tuple[Agent, Optional[Goal]]]


def _spawn_slots(road_map: RoadMap, center: VehicleState, inner: float, outer: float) -> List[Tuple[str, float]]:
    slots = []
    for lane_id in sorted(road_map.lanes):
        lane = road_map.lanes[lane_id]
        if lane.is_connector:
            continue
        s = np.arange(1.0, max(lane.length - 1.0, 1.0), 2.0)
        if not len(s):
            continue
        points = np.atleast_2d(lane.point_at(s))
        d = np.hypot(points[:, 0] - center.x, points[:, 1] - center.y)
        slots.extend((lane_id, float(si)) for si in s[(d >= inner) & (d <= outer)])
    return slots


def spawn_traffic(
    world: WorldState,
    road_map: RoadMap,
    cfg: SimConfig,
    rng: np.random.Generator,
    ego_id: str,
    make_agent: AgentFactory,
    attempts: int = 10,
) -> List[str]:
    """
    Keep target_traffic_count vehicles within the observation radius plus
    the spawn band around the ego. Vehicles beyond that leave the world;
    new ones appear in the band with random lane, position and speed.
    """
    ego = world.vehicles[ego_id].state
    inner = cfg.observation_radius
    outer = inner + cfg.spawn_band
    for vid in [v.vehicle_id for v in world.active() if not v.is_ego]:
        other = world.vehicles[vid].state
        if math.hypot(other.x - ego.x, other.y - ego.y) > outer:
            del world.vehicles[vid]
    count = sum(1 for v in world.active() if not v.is_ego)
    needed = cfg.target_traffic_count - count
    if needed <= 0:
        return []
    slots = _spawn_slots(road_map, ego, inner, outer)
    spawned = []
    for _ in range(needed):
        placed = False
        for _ in range(attempts if slots else 0):
            lane_id, s = slots[int(rng.integers(len(slots)))]
            lane = road_map.lanes[lane_id]
            point = lane.point_at(s)
            if any(math.hypot(v.state.x - point[0], v.state.y - point[1]) < cfg.spawn_spacing for v in world.active()):
                continue
            low, high = cfg.spawn_speed
            speed = min(float(rng.uniform(low, high)), lane.speed_limit)
            state = VehicleState((float(point[0]), float(point[1])), lane.heading_at(s), speed, 0.0, world.time)
            agent, goal = make_agent(state, road_map, rng)
            world.spawned += 1
            vid = f"traffic{world.spawned}"
            world.add(Vehicle(vid, state, agent, goal))
            spawned.append(vid)
            placed = True
            break
        if not placed:
            logger.warning("No free spawn slot around the ego at t=%.1f; skipping", world.time)
            break
    return spawned
