"""
Vehicle behaviors for the closed-loop simulator.

Each tick an agent looks at the world and returns a Command: the reference
path to track, a target speed, and optionally an arc position on the path
where the vehicle must come to rest.
"""

import copy
import logging
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import GoalDrivingError
from goal_driving_server.core.inverse_planner import AStarBudget, astar_plan
from goal_driving_server.core.macro_actions import MacroAction, MacroContext, MacroPlan, plan_macro
from goal_driving_server.core.maneuvers import (
    LaneSequence,
    ManeuverConfig,
    ManeuverInstance,
    ManeuverKind,
    TrafficForecast,
    current_lane,
    junction_blocked,
    lane_sequence_ahead,
    maneuver_terminated,
    plan_maneuver,
    route_lanes,
)
from goal_driving_server.core.road_map import STOP_SPEED_THRESHOLD, Goal, RoadMap
from goal_driving_server.core.trajectory import (
    Path,
    Trajectory,
    VehicleState,
    concatenate_trajectories,
    fit_reference_path,
)

if TYPE_CHECKING:
    from goal_driving_server.core.simulator import WorldState

logger = logging.getLogger(__name__)

ForecastFactory = Callable[[str, "WorldState", RoadMap], TrafficForecast]


@dataclass(frozen=True)
class Command:
    """What a vehicle tracks during one tick. stop_at is where its center must come to rest."""

    path: Optional[Path]
    target_speed: float
    stop_at: Optional[float] = None
    maneuver: str = ManeuverKind.LANE_FOLLOW.value

    @classmethod
    def brake(cls, maneuver: str = ManeuverKind.STOP.value) -> "Command":
        return cls(None, 0.0, None, maneuver)


def preview_speed(traj: Trajectory, s: float, speed: float) -> float:
    """Target speed a little ahead of the vehicle, so a standing start has something to reach for."""
    return traj.speed_at(s + max(1.0, 0.5 * speed))


def cv_forecast(vehicle_id: str, world: "WorldState", road_map: RoadMap) -> TrafficForecast:
    """Every other vehicle keeps its speed and lane."""
    return TrafficForecast(road_map, [v.state for v in world.active() if v.vehicle_id != vehicle_id])


def route_forecast(routes: Dict[str, Sequence[str]]) -> ForecastFactory:
    """Constant speed along given lane routes; vehicles without a route keep their lane."""

    def factory(vehicle_id: str, world: "WorldState", road_map: RoadMap) -> TrafficForecast:
        others = [v for v in world.active() if v.vehicle_id != vehicle_id]
        return TrafficForecast(road_map, [v.state for v in others], routes=[routes.get(v.vehicle_id) for v in others])

    return factory


def extend_trajectory(traj: Trajectory, road_map: RoadMap, length: float) -> Trajectory:
    """Continue a trajectory along its last lane at its final speed."""
    if traj.final_speed <= STOP_SPEED_THRESHOLD or length <= 0:
        return traj
    end = traj.end_state()
    lane = current_lane(road_map, end)
    if lane is None:
        return traj
    s = lane.project(end.position)
    seq = LaneSequence(lane_sequence_ahead(road_map, lane, s, max_length=length + 10.0))
    s0 = seq.project(end.position)
    if seq.length - s0 < 3.0:
        return traj
    ahead = seq.points_between(s0 + 2.0, min(seq.length, s0 + length), 2.0)
    path = fit_reference_path(np.vstack([end.position, ahead]))
    positions = np.linspace(0.0, path.length, max(2, int(math.ceil(path.length / 2.0)) + 1))
    tail = Trajectory(path, positions, np.full(len(positions), traj.final_speed))
    try:
        return concatenate_trajectories([traj, tail])
    except GoalDrivingError:
        return traj


class Agent:
    """Decides what a vehicle tracks next."""

    route: Optional[Tuple[str, ...]] = None

    def command(self, vehicle_id: str, state: VehicleState, world: "WorldState", road_map: RoadMap) -> Command:
        raise NotImplementedError

    def clone(self) -> "Agent":
        return copy.copy(self)


class ParkedAgent(Agent):
    """Stays where it is."""

    def command(self, vehicle_id, state, world, road_map) -> Command:
        return Command.brake()


class ManeuverExecutor:
    """Drives a maneuver sequence closed loop, planning each maneuver from where the vehicle is."""

    def __init__(
        self,
        maneuvers: Sequence[ManeuverInstance],
        config: Optional[ManeuverConfig] = None,
        macro: Optional[MacroAction] = None,
    ):
        self.maneuvers = tuple(maneuvers)
        self.config = config or ManeuverConfig()
        self.macro = macro
        self.index = 0
        self.trajectory: Optional[Trajectory] = None

    @property
    def finished(self) -> bool:
        return self.index >= len(self.maneuvers)

    @property
    def current(self) -> Optional[ManeuverInstance]:
        return None if self.finished else self.maneuvers[self.index]

    def clone(self) -> "ManeuverExecutor":
        return copy.copy(self)

    def _advance(self):
        self.index += 1
        self.trajectory = None

    def command(
        self, state: VehicleState, road_map: RoadMap, forecast: Callable[[], TrafficForecast]
    ) -> Optional[Command]:
        """Command for the current maneuver; None once the last maneuver has terminated."""
        while not self.finished:
            inst = self.maneuvers[self.index]
            fc = forecast() if inst.kind == ManeuverKind.GIVE_WAY else None
            if maneuver_terminated(inst, state, road_map, self.config, fc):
                self._advance()
                continue
            if self.trajectory is None:
                try:
                    self.trajectory = plan_maneuver(inst, state, road_map, self.config)
                except GoalDrivingError as e:
                    logger.debug("Dropping %s at (%.1f, %.1f): %s", inst.kind.value, state.x, state.y, e)
                    self._advance()
                    continue
            path = self.trajectory.path
            s = path.project(state.position)
            if s >= path.length - 0.25 and inst.kind not in (ManeuverKind.STOP, ManeuverKind.GIVE_WAY):
                # ran off the end of the local trajectory without meeting termination
                self._advance()
                continue
            return self._track(inst, state, road_map, fc, s)
        return None

    def _track(
        self, inst: ManeuverInstance, state: VehicleState, road_map: RoadMap, fc: Optional[TrafficForecast], s: float
    ) -> Command:
        traj = self.trajectory
        path = traj.path
        stop_at = None
        if inst.kind == ManeuverKind.STOP:
            stop_at = path.length
        elif inst.kind == ManeuverKind.GIVE_WAY and inst.relevant_lanes and fc is not None:
            if junction_blocked(road_map, inst, state, fc, self.config):
                stop_at = max(path.length - self.config.hold_offset - 0.5 * self.config.vehicle_length, 0.0)
        return Command(path, preview_speed(traj, s, state.speed), stop_at, inst.kind.value)


class EgoAgent(Agent):
    """Executes whichever macro the planner chose last."""

    def __init__(self, config: Optional[ManeuverConfig] = None, forecast: ForecastFactory = cv_forecast):
        self.config = config or ManeuverConfig()
        self.forecast = forecast
        self.executor: Optional[ManeuverExecutor] = None

    @property
    def macro(self) -> Optional[MacroAction]:
        return self.executor.macro if self.executor is not None else None

    @property
    def idle(self) -> bool:
        return self.executor is None or self.executor.finished

    def follow(self, macro: MacroAction, maneuvers: Sequence[ManeuverInstance]):
        self.executor = ManeuverExecutor(maneuvers, self.config, macro)

    def clone(self) -> "EgoAgent":
        other = copy.copy(self)
        other.executor = self.executor.clone() if self.executor is not None else None
        return other

    def command(self, vehicle_id, state, world, road_map) -> Command:
        if self.executor is None:
            return Command.brake()
        cmd = self.executor.command(state, road_map, lambda: self.forecast(vehicle_id, world, road_map))
        return cmd if cmd is not None else Command.brake()


class MacroAgent(Agent):
    """
    Drives to a goal by following the best macro plan, planning again
    whenever the plan runs out. Without any plan it keeps to its lane.
    """

    def __init__(
        self,
        goal: Optional[Goal],
        config: Optional[ManeuverConfig] = None,
        budget: Optional[AStarBudget] = None,
        forecast: ForecastFactory = cv_forecast,
    ):
        self.goal = goal
        self.config = config or ManeuverConfig()
        self.budget = budget or AStarBudget()
        self.forecast = forecast
        self.executor: Optional[ManeuverExecutor] = None
        self.pending: Tuple[MacroPlan, ...] = ()
        self.route: Optional[Tuple[str, ...]] = None

    def clone(self) -> "MacroAgent":
        other = copy.copy(self)
        other.executor = self.executor.clone() if self.executor is not None else None
        return other

    def _plan(self, vehicle_id: str, state: VehicleState, world, road_map: RoadMap):
        ctx = MacroContext(forecast=self.forecast(vehicle_id, world, road_map), config=self.config)
        plans = astar_plan(state, None, self.goal, road_map, self.budget, ctx) if self.goal is not None else []
        if plans and plans[0].macros:
            self.pending = plans[0].macro_plans
            if plans[0].trajectory is not None:
                self.route = tuple(route_lanes(road_map, plans[0].trajectory))
            return
        try:
            self.pending = (plan_macro(MacroAction.CONTINUE, state, road_map, ctx),)
            logger.debug("%s has no plan to its goal; continuing in lane", vehicle_id)
        except GoalDrivingError:
            self.pending = ()

    def command(self, vehicle_id, state, world, road_map) -> Command:
        if self.goal is not None and self.goal.satisfied_by(state.position, state.speed):
            return Command.brake()

        def forecast():
            return self.forecast(vehicle_id, world, road_map)

        for _ in range(3):
            if self.executor is None or self.executor.finished:
                if not self.pending:
                    self._plan(vehicle_id, state, world, road_map)
                if not self.pending:
                    return Command.brake()
                mp, self.pending = self.pending[0], self.pending[1:]
                self.executor = ManeuverExecutor(mp.maneuvers, self.config, mp.macro)
            cmd = self.executor.command(state, road_map, forecast)
            if cmd is not None:
                return cmd
        return Command.brake()


class TrajectoryAgent(Agent):
    """Tracks a fixed trajectory and holds its final speed past the end."""

    def __init__(
        self,
        trajectory: Optional[Trajectory],
        road_map: Optional[RoadMap] = None,
        maneuver: str = ManeuverKind.LANE_FOLLOW.value,
    ):
        self.trajectory = trajectory
        self.maneuver = maneuver
        self.route = tuple(route_lanes(road_map, trajectory)) if trajectory is not None and road_map is not None else None

    def command(self, vehicle_id, state, world, road_map) -> Command:
        traj = self.trajectory
        if traj is None:
            return Command.brake()
        s = traj.path.project(state.position)
        stop_at = traj.path.length if traj.final_speed <= STOP_SPEED_THRESHOLD else None
        return Command(traj.path, preview_speed(traj, s, state.speed), stop_at, self.maneuver)


@dataclass(frozen=True)
class SpeedPhase:
    """Target speed forced on a vehicle between two simulation times."""

    start: float
    end: float
    speed: float

    def active(self, time: float) -> bool:
        return self.start <= time < self.end


class ScriptedAgent(Agent):
    """Another agent's steering with scripted speed phases on top."""

    def __init__(self, inner: Agent, phases: Sequence[SpeedPhase]):
        self.inner = inner
        self.phases = tuple(phases)

    @property
    def route(self) -> Optional[Tuple[str, ...]]:
        return self.inner.route

    def clone(self) -> "ScriptedAgent":
        return ScriptedAgent(self.inner.clone(), self.phases)

    def command(self, vehicle_id, state, world, road_map) -> Command:
        cmd = self.inner.command(vehicle_id, state, world, road_map)
        for phase in self.phases:
            if phase.active(world.time) and cmd.path is not None:
                return replace(cmd, target_speed=phase.speed, stop_at=None if phase.speed > 0 else cmd.stop_at)
        return cmd


class HoldAgent(Agent):
    """
    Another agent's driving, except that it stops at a point and waits
    there until a release time. Used for vehicles that leave a gap on
    purpose.
    """

    def __init__(self, inner: Agent, point: Tuple[float, float], release_time: float):
        self.inner = inner
        self.point = (float(point[0]), float(point[1]))
        self.release_time = release_time

    @property
    def route(self) -> Optional[Tuple[str, ...]]:
        return self.inner.route

    def clone(self) -> "HoldAgent":
        return HoldAgent(self.inner.clone(), self.point, self.release_time)

    def command(self, vehicle_id, state, world, road_map) -> Command:
        cmd = self.inner.command(vehicle_id, state, world, road_map)
        if world.time >= self.release_time or cmd.path is None:
            return cmd
        if cmd.path.distance(self.point) > 2.0:
            return cmd
        stop_at = cmd.path.project(self.point)
        if stop_at < cmd.path.project(state.position) - 1.0:
            # already past the hold point
            return cmd
        if cmd.stop_at is not None:
            stop_at = min(stop_at, cmd.stop_at)
        return replace(cmd, stop_at=stop_at)
