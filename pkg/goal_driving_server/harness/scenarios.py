"""
Scenario definitions: JSON documents naming a map, the ego, and the other
vehicles with their goals and scripted behaviors.

    {"id": "S1", "map": "s1_exit.json", "instances": 100, "seed": 0,
     "ego": {"position": [10, -1.75], "heading": 0.0,
             "goal": {"center": [140, 0], "radius": 3.0}},
     "vehicles": [{"id": "V1", "position": [30, 1.75], "heading": 0.0,
                   "behavior": "macro", "goal": {"center": [80, -65]}}],
     "tracked_vehicle": "V1"}

Town scenarios carry a "town" section instead of "map" and "ego"; the ego
route and the traffic come from the town generator.
"""

import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import ConfigurationError, ContractError
from goal_driving_server.core.maneuvers import straight_successor
from goal_driving_server.core.road_map import Goal, Lane, RoadMap, lane_at, load_map_file
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.utils.file_utils import list_files, read_json

logger = logging.getLogger(__name__)

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")
SCENARIO_DIR = os.path.join(FIXTURE_DIR, "scenarios")
MAP_DIR = os.path.join(FIXTURE_DIR, "maps")

BEHAVIORS = ("macro", "parked")
IRRATIONAL_BASES = ("S3", "S4")


@dataclass(frozen=True)
class GoalSpec:
    center: Tuple[float, float]
    radius: float = 3.0
    stopping: bool = False

    def goal(self) -> Goal:
        if self.stopping:
            return Goal.stopping(self.center, self.radius)
        return Goal.location(self.center, self.radius)


@dataclass(frozen=True)
class PhaseSpec:
    start: float
    end: float
    speed: float


@dataclass(frozen=True)
class HoldSpec:
    point: Tuple[float, float]
    release_time: float


@dataclass(frozen=True)
class VehicleTemplate:
    vehicle_id: str
    position: Tuple[float, float]
    heading: float
    behavior: str = "macro"
    goal: Optional[GoalSpec] = None
    true_goal: Optional[Tuple[float, float]] = None
    hold: Optional[HoldSpec] = None
    phases: Tuple[PhaseSpec, ...] = ()
    randomize: bool = True

    @property
    def true_goal_point(self) -> Optional[Tuple[float, float]]:
        if self.true_goal is not None:
            return self.true_goal
        return self.goal.center if self.goal is not None else None


@dataclass(frozen=True)
class EgoTemplate:
    position: Tuple[float, float]
    heading: float
    goal: GoalSpec


@dataclass(frozen=True)
class OcclusionSpec:
    """Maneuvers whose observations of one vehicle are removed."""

    vehicle_id: str
    maneuvers: Tuple[str, ...] = ("lane-change-left", "lane-change-right")


@dataclass(frozen=True)
class IrrationalSpec:
    """How the tracked vehicle misbehaves in the irrational variant."""

    vehicle_id: str
    goal: GoalSpec
    phases: Tuple[PhaseSpec, ...] = ()
    drop_hold: bool = True
    true_goal: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class TownSpec:
    seed: int = 0
    rows: int = 4
    cols: int = 4
    spacing: float = 100.0
    routes: int = 10
    speed_limit: float = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    name: str = ""
    map_file: Optional[str] = None
    ego: Optional[EgoTemplate] = None
    vehicles: Tuple[VehicleTemplate, ...] = ()
    instances: int = 100
    seed: int = 0
    timeout: float = 60.0
    offset_range: Tuple[float, float] = (-10.0, 10.0)
    speed_range: Tuple[float, float] = (5.0, 10.0)
    observation_radius: Optional[float] = None
    tracked_vehicle: Optional[str] = None
    occlusion: Optional[OcclusionSpec] = None
    occlusion_enabled: bool = False
    irrational: Optional[IrrationalSpec] = None
    variant: Optional[str] = None
    town: Optional[TownSpec] = None

    def __post_init__(self):
        if self.instances < 1:
            raise ContractError(f"Scenario {self.scenario_id} needs at least one instance")
        if self.timeout <= 0:
            raise ContractError(f"Scenario {self.scenario_id} needs a positive timeout")
        if self.town is None and (self.map_file is None or self.ego is None):
            raise ContractError(f"Scenario {self.scenario_id} needs a map and an ego, or a town")
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids) or "ego" in ids:
            raise ContractError(f"Scenario {self.scenario_id} has duplicate vehicle ids")
        if self.tracked_vehicle is not None and self.tracked_vehicle not in ids:
            raise ContractError(f"Tracked vehicle {self.tracked_vehicle} is not in scenario {self.scenario_id}")

    @property
    def is_town(self) -> bool:
        return self.town is not None

    def vehicle(self, vehicle_id: str) -> VehicleTemplate:
        for v in self.vehicles:
            if v.vehicle_id == vehicle_id:
                return v
        raise ContractError(f"No vehicle {vehicle_id} in scenario {self.scenario_id}")


# Parsing


def _pair(value: Any, path: str) -> Tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError(f"{path}: expected an [x, y] pair")
    try:
        return float(value[0]), float(value[1])
    except (TypeError, ValueError):
        raise ConfigurationError(f"{path}: coordinates must be numbers") from None


def _goal(doc: Any, path: str) -> GoalSpec:
    if not isinstance(doc, Mapping) or "center" not in doc:
        raise ConfigurationError(f"{path}: a goal needs a center")
    return GoalSpec(_pair(doc["center"], f"{path}.center"), float(doc.get("radius", 3.0)), bool(doc.get("stopping", False)))


def _phases(docs: Any, path: str) -> Tuple[PhaseSpec, ...]:
    if not isinstance(docs, list):
        raise ConfigurationError(f"{path}: phases must be a list")
    phases = []
    for i, doc in enumerate(docs):
        try:
            phases.append(PhaseSpec(float(doc["start"]), float(doc["end"]), float(doc["speed"])))
        except (KeyError, TypeError, ValueError):
            raise ConfigurationError(f"{path}[{i}]: a phase needs numeric start, end and speed") from None
    return tuple(phases)


def _vehicle(doc: Mapping, path: str) -> VehicleTemplate:
    if "id" not in doc or "position" not in doc:
        raise ConfigurationError(f"{path}: a vehicle needs an id and a position")
    behavior = doc.get("behavior", "macro")
    if behavior not in BEHAVIORS:
        raise ConfigurationError(f"{path}.behavior: must be one of {', '.join(BEHAVIORS)}")
    goal = _goal(doc["goal"], f"{path}.goal") if doc.get("goal") is not None else None
    if behavior == "macro" and goal is None:
        raise ConfigurationError(f"{path}: a macro-driven vehicle needs a goal")
    hold = None
    if doc.get("hold") is not None:
        hold_doc = doc["hold"]
        hold = HoldSpec(_pair(hold_doc.get("point"), f"{path}.hold.point"), float(hold_doc.get("release_time", math.inf)))
    return VehicleTemplate(
        vehicle_id=str(doc["id"]),
        position=_pair(doc["position"], f"{path}.position"),
        heading=float(doc.get("heading", 0.0)),
        behavior=behavior,
        goal=goal,
        true_goal=_pair(doc["true_goal"], f"{path}.true_goal") if doc.get("true_goal") is not None else None,
        hold=hold,
        phases=_phases(doc.get("phases", []), f"{path}.phases"),
        randomize=bool(doc.get("randomize", behavior != "parked")),
    )


def scenario_from_document(doc: Mapping[str, Any], base_dir: Optional[str] = None) -> ScenarioConfig:
    """
    Build a ScenarioConfig from a parsed scenario document.

    Raises:
        ConfigurationError: the document is malformed
        ContractError: the scenario breaks a structural rule
    """
    if not isinstance(doc, Mapping) or "id" not in doc:
        raise ConfigurationError("Scenario document must be an object with an id")
    map_file = doc.get("map")
    if map_file is not None and not os.path.isabs(map_file):
        candidates = [os.path.join(base_dir, map_file)] if base_dir else []
        candidates.append(os.path.join(MAP_DIR, map_file))
        map_file = next((c for c in candidates if os.path.exists(c)), candidates[-1])

    ego = None
    if doc.get("ego") is not None:
        ego_doc = doc["ego"]
        ego = EgoTemplate(
            _pair(ego_doc.get("position"), "ego.position"), float(ego_doc.get("heading", 0.0)), _goal(ego_doc.get("goal"), "ego.goal")
        )
    vehicles = tuple(_vehicle(v, f"vehicles[{i}]") for i, v in enumerate(doc.get("vehicles", [])))

    occlusion = None
    if doc.get("occlusion") is not None:
        occ = doc["occlusion"]
        occlusion = OcclusionSpec(str(occ["vehicle"]), tuple(occ.get("maneuvers", OcclusionSpec.maneuvers)))
    irrational = None
    if doc.get("irrational") is not None:
        irr = doc["irrational"]
        irrational = IrrationalSpec(
            str(irr["vehicle"]),
            _goal(irr.get("goal"), "irrational.goal"),
            _phases(irr.get("phases", []), "irrational.phases"),
            bool(irr.get("drop_hold", True)),
            _pair(irr["true_goal"], "irrational.true_goal") if irr.get("true_goal") is not None else None,
        )
    town = None
    if doc.get("town") is not None:
        try:
            town = TownSpec(**doc["town"])
        except TypeError as e:
            raise ConfigurationError(f"town: {str(e)}") from None

    return ScenarioConfig(
        scenario_id=str(doc["id"]),
        name=str(doc.get("name", "")),
        map_file=map_file,
        ego=ego,
        vehicles=vehicles,
        instances=int(doc.get("instances", 100)),
        seed=int(doc.get("seed", 0)),
        timeout=float(doc.get("timeout", 60.0)),
        offset_range=_pair(doc.get("offset_range", [-10.0, 10.0]), "offset_range"),
        speed_range=_pair(doc.get("speed_range", [5.0, 10.0]), "speed_range"),
        observation_radius=float(doc["observation_radius"]) if doc.get("observation_radius") is not None else None,
        tracked_vehicle=doc.get("tracked_vehicle"),
        occlusion=occlusion,
        occlusion_enabled=bool(doc.get("occlusion_enabled", False)),
        irrational=irrational,
        variant=doc.get("variant"),
        town=town,
    )


def scenario_to_document(config: ScenarioConfig) -> Dict[str, Any]:
    """Inverse of scenario_from_document."""

    def goal_doc(g: GoalSpec) -> Dict[str, Any]:
        return {"center": list(g.center), "radius": g.radius, "stopping": g.stopping}

    def phases_doc(phases: Sequence[PhaseSpec]) -> List[Dict[str, float]]:
        return [{"start": p.start, "end": p.end, "speed": p.speed} for p in phases]

    doc: Dict[str, Any] = {
        "id": config.scenario_id,
        "name": config.name,
        "instances": config.instances,
        "seed": config.seed,
        "timeout": config.timeout,
        "offset_range": list(config.offset_range),
        "speed_range": list(config.speed_range),
        "observation_radius": config.observation_radius,
        "tracked_vehicle": config.tracked_vehicle,
        "occlusion_enabled": config.occlusion_enabled,
        "variant": config.variant,
    }
    if config.map_file is not None:
        doc["map"] = config.map_file
    if config.ego is not None:
        doc["ego"] = {"position": list(config.ego.position), "heading": config.ego.heading, "goal": goal_doc(config.ego.goal)}
    vehicles = []
    for v in config.vehicles:
        entry: Dict[str, Any] = {
            "id": v.vehicle_id,
            "position": list(v.position),
            "heading": v.heading,
            "behavior": v.behavior,
            "randomize": v.randomize,
        }
        if v.goal is not None:
            entry["goal"] = goal_doc(v.goal)
        if v.true_goal is not None:
            entry["true_goal"] = list(v.true_goal)
        if v.hold is not None:
            entry["hold"] = {"point": list(v.hold.point), "release_time": v.hold.release_time}
        if v.phases:
            entry["phases"] = phases_doc(v.phases)
        vehicles.append(entry)
    doc["vehicles"] = vehicles
    if config.occlusion is not None:
        doc["occlusion"] = {"vehicle": config.occlusion.vehicle_id, "maneuvers": list(config.occlusion.maneuvers)}
    if config.irrational is not None:
        irr = config.irrational
        doc["irrational"] = {
            "vehicle": irr.vehicle_id,
            "goal": goal_doc(irr.goal),
            "phases": phases_doc(irr.phases),
            "drop_hold": irr.drop_hold,
            "true_goal": list(irr.true_goal) if irr.true_goal is not None else None,
        }
    if config.town is not None:
        doc["town"] = dataclasses.asdict(config.town)
    return doc


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """
    Load a scenario file, or a bundled fixture by id or file name (e.g. "S1" or "s1_exit.json").

    Raises:
        ConfigurationError: no such scenario, or the document is malformed
    """
    path = name_or_path
    if not os.path.exists(path):
        path = _find_fixture(name_or_path)
    try:
        doc = read_json(path)
    except ValueError as e:
        raise ConfigurationError(f"{path}: not valid JSON ({str(e)})") from e
    config = scenario_from_document(doc, os.path.dirname(os.path.abspath(path)))
    logger.debug("Loaded scenario %s from %s", config.scenario_id, path)
    return config


def _find_fixture(name: str) -> str:
    for file_name in list_files(SCENARIO_DIR, ".json"):
        if file_name == name or file_name == f"{name}.json":
            return os.path.join(SCENARIO_DIR, file_name)
        doc = read_json(os.path.join(SCENARIO_DIR, file_name))
        if str(doc.get("id", "")).lower() == name.lower():
            return os.path.join(SCENARIO_DIR, file_name)
    raise ConfigurationError(f"Scenario {name} not found (looked in {SCENARIO_DIR})")


def list_scenarios(directory: str = SCENARIO_DIR) -> List[Dict[str, Any]]:
    """Id, name, file and instance count of every scenario file in a directory."""
    entries = []
    for file_name in list_files(directory, ".json"):
        doc = read_json(os.path.join(directory, file_name))
        entries.append(
            {
                "id": doc.get("id"),
                "name": doc.get("name", ""),
                "file": file_name,
                "instances": doc.get("instances", 100),
                "town": doc.get("town") is not None,
            }
        )
    return entries


def validate_scenario(config: ScenarioConfig, road_map: RoadMap):
    """
    Check that every start position lies on a lane of the map.

    Raises:
        ContractError: a vehicle starts off the road
    """
    starts = [("ego", config.ego.position, config.ego.heading)] if config.ego is not None else []
    starts += [(v.vehicle_id, v.position, v.heading) for v in config.vehicles]
    for vid, position, heading in starts:
        if lane_at(road_map, position, heading) is None:
            raise ContractError(f"{vid} of scenario {config.scenario_id} starts off the road at {position}")


def load_scenario_map(config: ScenarioConfig) -> RoadMap:
    if config.map_file is None:
        raise ContractError(f"Scenario {config.scenario_id} has no map file")
    road_map = load_map_file(config.map_file)
    validate_scenario(config, road_map)
    return road_map


# Variants


def irrational_variant(config: ScenarioConfig) -> ScenarioConfig:
    """
    The scenario with its tracked vehicle misbehaving: it slows down as in
    the base scenario, then accelerates and carries straight on. The base
    config is left untouched.

    Raises:
        ContractError: the scenario has no irrational variant
    """
    if config.scenario_id not in IRRATIONAL_BASES or config.irrational is None:
        raise ContractError(f"Scenario {config.scenario_id} has no irrational variant (only {', '.join(IRRATIONAL_BASES)})")
    spec = config.irrational
    vehicles = []
    for v in config.vehicles:
        if v.vehicle_id == spec.vehicle_id:
            v = dataclasses.replace(
                v,
                goal=spec.goal,
                true_goal=spec.true_goal or spec.goal.center,
                phases=spec.phases,
                hold=None if spec.drop_hold else v.hold,
            )
        vehicles.append(v)
    return dataclasses.replace(
        config,
        scenario_id=f"{config.scenario_id}-irrational",
        name=f"{config.name} (irrational)".strip(),
        vehicles=tuple(vehicles),
        irrational=None,
        variant="irrational",
    )


def with_occlusion(config: ScenarioConfig) -> ScenarioConfig:
    """
    The scenario with the occlusion of its tracked vehicle switched on.

    Raises:
        ContractError: the scenario defines no occlusion
    """
    if config.occlusion is None:
        raise ContractError(f"Scenario {config.scenario_id} defines no occlusion")
    return dataclasses.replace(config, occlusion_enabled=True)


# Instances


def instance_seed(config: ScenarioConfig, index: int) -> np.random.SeedSequence:
    """Seed of one instance; depends only on the scenario seed and the index."""
    return np.random.SeedSequence([config.seed, index])


def shift_along_lanes(road_map: RoadMap, lane: Lane, s: float, offset: float) -> Tuple[Lane, float]:
    """Move a lane position by an arc offset, following straight successors and unique predecessors."""
    s += offset
    for _ in range(32):
        if s < 0.0:
            plain = [p for p in road_map.predecessors(lane) if not p.is_connector] or road_map.predecessors(lane)
            if len(plain) != 1:
                return lane, 0.0
            lane = plain[0]
            s += lane.length
        elif s > lane.length:
            nxt = straight_successor(road_map, lane)
            if nxt is None:
                return lane, lane.length
            s -= lane.length
            lane = nxt
        else:
            break
    return lane, min(max(s, 0.0), lane.length)


def randomized_state(
    road_map: RoadMap,
    position: Sequence[float],
    heading: float,
    rng: np.random.Generator,
    offset_range: Tuple[float, float],
    speed_range: Tuple[float, float],
) -> VehicleState:
    """A start state moved along its lane by a uniform offset, with a uniform initial speed."""
    lane = lane_at(road_map, position, heading)
    if lane is None:
        raise ContractError(f"Start position {tuple(position)} is off the road")
    offset = float(rng.uniform(*offset_range))
    speed = float(rng.uniform(*speed_range))
    lane, s = shift_along_lanes(road_map, lane, lane.project(position), offset)
    s = min(max(s, 0.0), lane.length - 1e-6)
    point = lane.point_at(s)
    return VehicleState((float(point[0]), float(point[1])), lane.heading_at(s), min(speed, lane.speed_limit), 0.0, 0.0)


def initial_states(config: ScenarioConfig, road_map: RoadMap, index: int) -> Dict[str, VehicleState]:
    """
    Start states of the ego and every scenario vehicle for one instance.
    Draws happen in a fixed order (ego first, then vehicles as listed).
    """
    if config.ego is None:
        raise ContractError(f"Scenario {config.scenario_id} has no fixed ego start")
    rng = np.random.default_rng(instance_seed(config, index))
    states = {"ego": randomized_state(road_map, config.ego.position, config.ego.heading, rng, config.offset_range, config.speed_range)}
    for v in config.vehicles:
        if v.randomize:
            states[v.vehicle_id] = randomized_state(road_map, v.position, v.heading, rng, config.offset_range, config.speed_range)
        else:
            states[v.vehicle_id] = VehicleState(v.position, v.heading, 0.0, 0.0, 0.0)
    return states
