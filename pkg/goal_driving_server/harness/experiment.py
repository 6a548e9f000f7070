"""
Closed-loop experiment runner.

One instance places the vehicles of a scenario (randomized by the
instance index), then simulates at 1/sim.dt Hz while the ego policy
decides a new macro action every mcts.tick_period seconds. The run ends
when the ego reaches its goal, collides, leaves its route, or times out.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.agents import (
    Agent,
    EgoAgent,
    HoldAgent,
    MacroAgent,
    ParkedAgent,
    ScriptedAgent,
    SpeedPhase,
    cv_forecast,
)
from goal_driving_server.core.exceptions import (
    ContractError,
    DegenerateInputError,
    GoalDrivingError,
    PlannerStuckError,
    ReconstructionInfeasibleError,
)
from goal_driving_server.core.goal_recognition import fill_occlusions
from goal_driving_server.core.inverse_planner import AStarBudget
from goal_driving_server.core.macro_actions import MacroContext, expand_macro
from goal_driving_server.core.road_map import Goal, RoadMap, ViewRegion
from goal_driving_server.core.simulator import Vehicle, WorldState, observe, spawn_traffic, step
from goal_driving_server.core.trajectory import VehicleState, trajectory_from_states
from goal_driving_server.harness.algorithms import AlgorithmKind, EgoPolicy, Observation, predictor_for
from goal_driving_server.harness.scenarios import (
    ScenarioConfig,
    VehicleTemplate,
    initial_states,
    instance_seed,
    load_scenario_map,
)
from goal_driving_server.harness.towns import RouteProgress, TownLayout, build_town, traffic_factory
from goal_driving_server.utils.config_utils import PlannerConfig, config_summary
from goal_driving_server.utils.file_utils import ensure_output_dir, write_json, write_jsonl
from goal_driving_server.utils.trace_utils import write_trace

logger = logging.getLogger(__name__)

EGO_ID = "ego"
RECORDS_FILE = "records.jsonl"
DECISIONS_FILE = "decisions.jsonl"
MANIFEST_FILE = "run.json"


class Failure:
    COLLISION = "collision"
    TIMEOUT = "timeout"
    OFF_ROUTE = "off-route"


@dataclass
class MetricsRecord:
    """Outcome of one instance. driving_time is positive exactly when the ego completed."""

    scenario: str
    algorithm: str
    instance: int
    completed: bool = False
    collided: bool = False
    driving_time: float = 0.0
    failure: Optional[str] = None
    decisions: int = 0
    stuck: int = 0
    goal_probabilities: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.completed != (self.driving_time > 0):
            raise ContractError("driving_time must be positive exactly when the ego completed")

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["goal_probabilities"] = [[round(t, 3), round(p, 6)] for t, p in self.goal_probabilities]
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "MetricsRecord":
        doc = dict(doc)
        doc["goal_probabilities"] = [(float(t), float(p)) for t, p in doc.get("goal_probabilities", [])]
        return cls(**doc)


def deterministic_budget(budget: AStarBudget) -> AStarBudget:
    """Leave only the node cap in force, so reruns expand the same nodes."""
    return replace(budget, max_time=math.inf)


def deterministic_config(config: PlannerConfig) -> PlannerConfig:
    budget = deterministic_budget(config.astar)
    return replace(config, astar=budget, recognition=replace(config.recognition, budget=budget))


# World setup


def build_agent(template: VehicleTemplate, config: PlannerConfig) -> Agent:
    """Agent of a scenario vehicle: macro driving, with optional hold and speed phases on top."""
    if template.behavior == "parked":
        return ParkedAgent()
    agent: Agent = MacroAgent(template.goal.goal(), config.maneuver, config.astar, cv_forecast)
    if template.hold is not None:
        agent = HoldAgent(agent, template.hold.point, template.hold.release_time)
    if template.phases:
        agent = ScriptedAgent(agent, [SpeedPhase(p.start, p.end, p.speed) for p in template.phases])
    return agent


def build_world(scenario: ScenarioConfig, road_map: RoadMap, index: int, config: PlannerConfig) -> WorldState:
    states = initial_states(scenario, road_map, index)
    world = WorldState()
    world.add(Vehicle(EGO_ID, states[EGO_ID], EgoAgent(config.maneuver), scenario.ego.goal.goal(), is_ego=True))
    for template in scenario.vehicles:
        goal = template.goal.goal() if template.goal is not None and template.behavior != "parked" else None
        world.add(Vehicle(template.vehicle_id, states[template.vehicle_id], build_agent(template, config), goal))
    return world


def build_town_world(layout: TownLayout, index: int, scenario: ScenarioConfig, config: PlannerConfig, rng: np.random.Generator):
    route = layout.routes[index % len(layout.routes)]
    speed = float(rng.uniform(*scenario.speed_range))
    start = route.start.replace(speed=min(speed, layout.road_map.lanes[route.lanes[0]].speed_limit))
    world = WorldState()
    world.add(Vehicle(EGO_ID, start, EgoAgent(config.maneuver), route.goal, is_ego=True))
    return world, route


# Observation


class ObservationLog:
    """
    What the ego has seen of each other vehicle: its states in fragments
    split by periods out of sight, and its latest maneuver label.
    """

    def __init__(self, radius: Optional[float], occluded: Optional[Tuple[str, Sequence[str]]] = None):
        self.radius = radius
        self.occluded = occluded
        self.fragments: Dict[str, List[List[VehicleState]]] = {}
        self.maneuvers: Dict[str, str] = {}
        self._seen_last: Dict[str, bool] = {}

    def hidden(self, vehicle: Vehicle) -> bool:
        if self.occluded is None:
            return False
        vid, maneuvers = self.occluded
        return vehicle.vehicle_id == vid and vehicle.maneuver in maneuvers

    def record(self, world: WorldState):
        radius = math.inf if self.radius is None else self.radius
        visible = observe(world, EGO_ID, radius)
        for vid in list(self._seen_last):
            if vid not in world.vehicles or world.vehicles[vid].completed:
                self.forget(vid)
        for vid in sorted(world.vehicles):
            vehicle = world.vehicles[vid]
            if vid == EGO_ID or vehicle.completed:
                continue
            seen = vid in visible and not self.hidden(vehicle)
            if seen:
                frags = self.fragments.setdefault(vid, [])
                if not frags or not self._seen_last.get(vid, False):
                    frags.append([])
                frags[-1].append(visible[vid])
                self.maneuvers[vid] = vehicle.maneuver
            self._seen_last[vid] = seen

    def forget(self, vid: str):
        self.fragments.pop(vid, None)
        self.maneuvers.pop(vid, None)
        self._seen_last.pop(vid, None)

    def visible_now(self) -> List[str]:
        return sorted(vid for vid, seen in self._seen_last.items() if seen)

    def history(self, vid: str, road_map: RoadMap, config: PlannerConfig) -> Sequence[VehicleState]:
        """
        Observed history of a vehicle. Gaps are filled with the best plan
        between the fragments around them; when that fails only the latest
        fragment is kept.
        """
        frags = [f for f in self.fragments.get(vid, []) if f]
        if len(frags) == 1:
            return frags[0]
        usable = [f for f in frags if len(f) > 1]
        if len(usable) < 2:
            return frags[-1]
        try:
            filled = fill_occlusions([trajectory_from_states(f) for f in usable], road_map, config.recognition)
        except (ReconstructionInfeasibleError, DegenerateInputError) as e:
            logger.debug("Could not fill the occlusion of %s: %s", vid, e)
            return frags[-1]
        return filled.states()


def observed_world(world: WorldState, visible: Sequence[str], histories: Dict[str, Sequence[VehicleState]], ego_goal: Goal) -> WorldState:
    """The ego and the vehicles it sees, with the ego heading for its planning goal."""
    ego = world.vehicles[EGO_ID]
    obs = WorldState(world.time)
    obs.add(Vehicle(EGO_ID, ego.state, ego.agent.clone(), ego_goal, is_ego=True))
    for vid in visible:
        vehicle = world.vehicles[vid]
        obs.add(Vehicle(vid, vehicle.state, ParkedAgent(), None, maneuver=vehicle.maneuver, history=list(histories[vid])))
    return obs


# Running


@dataclass
class InstanceResult:
    record: MetricsRecord
    decisions: List[Dict[str, Any]]
    trace: List[Tuple[float, str, float, float, float, float, float, str]]


def run_instance(
    scenario: ScenarioConfig,
    algorithm: AlgorithmKind,
    index: int,
    config: Optional[PlannerConfig] = None,
    road_map: Optional[RoadMap] = None,
    town: Optional[TownLayout] = None,
) -> InstanceResult:
    """
    Simulate one randomized instance of a scenario under one ego policy.

    Raises:
        ContractError: the scenario cannot be instantiated
    """
    config = deterministic_config(config or PlannerConfig())
    planner_seed, traffic_seed = instance_seed(scenario, index).spawn(2)
    planner_rng = np.random.default_rng(planner_seed)
    traffic_rng = np.random.default_rng(traffic_seed)

    progress: Optional[RouteProgress] = None
    make_traffic = None
    if scenario.is_town:
        town = town or build_town(scenario.town)
        road_map = town.road_map
        world, route = build_town_world(town, index, scenario, config, traffic_rng)
        progress = RouteProgress(road_map, route)
        make_traffic = traffic_factory(town, config.maneuver)
        spawn_traffic(world, road_map, config.sim, traffic_rng, EGO_ID, make_traffic)
    else:
        road_map = road_map or load_scenario_map(scenario)
        world = build_world(scenario, road_map, index, config)

    policy: EgoPolicy = predictor_for(algorithm, road_map, config, planner_rng)
    occluded = None
    if scenario.occlusion_enabled and scenario.occlusion is not None:
        occluded = (scenario.occlusion.vehicle_id, scenario.occlusion.maneuvers)
    log = ObservationLog(scenario.observation_radius, occluded)
    log.record(world)

    tracked = scenario.tracked_vehicle
    true_goal = scenario.vehicle(tracked).true_goal_point if tracked is not None else None
    record = MetricsRecord(scenario.scenario_id, algorithm.value, index)
    decisions: List[Dict[str, Any]] = []
    trace = list(world.trace_rows())
    ego = world.vehicles[EGO_ID]
    ticks_per_decision = max(1, int(round(config.mcts.tick_period / config.sim.dt)))
    tick = 0

    while True:
        if tick % ticks_per_decision == 0:
            if make_traffic is not None:
                spawn_traffic(world, road_map, config.sim, traffic_rng, EGO_ID, make_traffic)
            ego_goal = ego.goal
            if progress is not None:
                progress.update(ego.state.position)
                ego_goal = progress.visible_goal(ego.state.position, scenario.observation_radius)
            _decide(world, road_map, policy, log, config, ego_goal, scenario, record, decisions)
            if tracked is not None and true_goal is not None and tracked in policy.posteriors:
                record.goal_probabilities.append((world.time, policy.posteriors[tracked].probability_at(true_goal)))

        step(world, road_map, config.sim)
        tick += 1
        log.record(world)
        trace.extend(world.trace_rows())

        if ego.collided:
            record.collided, record.failure = True, Failure.COLLISION
            break
        if ego.completed:
            record.completed, record.driving_time = True, round(world.time, 3)
            break
        if progress is not None and not progress.on_route(ego.state):
            record.failure = Failure.OFF_ROUTE
            break
        if world.time >= scenario.timeout - 1e-9:
            record.failure = Failure.TIMEOUT
            break

    logger.info(
        "%s/%s instance %d: %s after %.1f s",
        scenario.scenario_id,
        algorithm.value,
        index,
        "completed" if record.completed else record.failure,
        world.time,
    )
    return InstanceResult(record, decisions, trace)


def _decide(
    world: WorldState,
    road_map: RoadMap,
    policy: EgoPolicy,
    log: ObservationLog,
    config: PlannerConfig,
    ego_goal: Goal,
    scenario: ScenarioConfig,
    record: MetricsRecord,
    decisions: List[Dict[str, Any]],
):
    ego = world.vehicles[EGO_ID]
    visible = log.visible_now()
    histories = {vid: log.history(vid, road_map, config) for vid in visible}
    obs_world = observed_world(world, visible, histories, ego_goal)
    view = ViewRegion(ego.state.position, scenario.observation_radius) if scenario.observation_radius else None
    obs = Observation(obs_world, EGO_ID, ego_goal, {vid: list(h) for vid, h in histories.items()}, dict(log.maneuvers), view)
    try:
        result = policy.decide(obs)
    except PlannerStuckError as e:
        record.stuck += 1
        logger.debug("No decision at t=%.1f: %s", world.time, e)
        return
    goals = (ego_goal,) if ego_goal.requires_zero_velocity else ()
    ctx = MacroContext(goals, view, cv_forecast(EGO_ID, obs_world, road_map), policy.maneuver_config)
    try:
        maneuvers = expand_macro(result.macro, ego.state, road_map, ctx)
    except GoalDrivingError as e:
        logger.debug("Chosen %s no longer expands at t=%.1f: %s", result.macro.value, world.time, e)
        return
    ego.agent.follow(result.macro, maneuvers)
    record.decisions += 1
    entry = result.record()
    entry.update({"scenario": scenario.scenario_id, "algorithm": policy.kind.value, "instance": record.instance})
    decisions.append(entry)


def trace_file_name(scenario_id: str, algorithm: AlgorithmKind, index: int) -> str:
    return f"{scenario_id}_{algorithm.value}_{index:03d}_trace.csv"


def run_experiment(
    scenario: ScenarioConfig,
    algorithm: AlgorithmKind,
    out_dir: str,
    config: Optional[PlannerConfig] = None,
    instances: Optional[int] = None,
    on_instance: Optional[Callable[[MetricsRecord], None]] = None,
) -> List[MetricsRecord]:
    """
    Run instances 0..n-1 of a scenario and write records, decisions,
    per-instance traces and a run manifest to out_dir.

    Raises:
        ReportError: out_dir cannot be written
        ContractError: the scenario cannot be instantiated
    """
    config = config or PlannerConfig()
    count = instances if instances is not None else scenario.instances
    if count < 1:
        raise ContractError("At least one instance is needed")
    ensure_output_dir(out_dir)
    trace_dir = ensure_output_dir(os.path.join(out_dir, "traces"))
    road_map = town = None
    if scenario.is_town:
        town = build_town(scenario.town)
    else:
        road_map = load_scenario_map(scenario)

    records, decisions = [], []
    for index in range(count):
        result = run_instance(scenario, algorithm, index, config, road_map, town)
        records.append(result.record)
        decisions.extend(result.decisions)
        write_trace(os.path.join(trace_dir, trace_file_name(scenario.scenario_id, algorithm, index)), result.trace)
        if on_instance is not None:
            on_instance(result.record)

    write_jsonl(os.path.join(out_dir, RECORDS_FILE), [r.to_dict() for r in records])
    write_jsonl(os.path.join(out_dir, DECISIONS_FILE), decisions)
    write_json(
        os.path.join(out_dir, MANIFEST_FILE),
        {
            "scenario": scenario.scenario_id,
            "algorithm": algorithm.value,
            "instances": count,
            "seed": scenario.seed,
            "occlusion": scenario.occlusion_enabled,
            "variant": scenario.variant,
            "config": config_summary(config),
        },
    )
    completed = sum(r.completed for r in records)
    logger.info("%s/%s: %d of %d instances completed", scenario.scenario_id, algorithm.value, completed, count)
    return records
