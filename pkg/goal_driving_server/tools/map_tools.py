"""
Road map and goal recognition tools for the Goal Driving Server.
"""

import json
import os
from typing import Optional

from goal_driving_server.core.goal_recognition import GoalRecognizer
from goal_driving_server.core.maneuvers import ManeuverKind
from goal_driving_server.core.road_map import RoadMap, ViewRegion, generate_goals, lane_at, load_map_file
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.harness.scenarios import MAP_DIR
from goal_driving_server.utils.config_utils import load_config
from goal_driving_server.utils.file_utils import ensure_extension
from goal_driving_server.utils.trace_utils import read_trace


def _resolve_map(map_file: str) -> str:
    if os.path.exists(map_file):
        return map_file
    bundled = os.path.join(MAP_DIR, ensure_extension(map_file, ".json"))
    if os.path.exists(bundled):
        return bundled
    raise FileNotFoundError(f"Map {map_file} not found (also looked in {MAP_DIR})")


def _load(map_file: str) -> RoadMap:
    return load_map_file(_resolve_map(map_file))


async def describe_map(map_file: str) -> str:
    """Describe the roads, lanes and junctions of a road map.

    Args:
        map_file: Map file path, or name of a bundled map (s1_exit, t_junction, roundabout)

    Returns:
        JSON with per-road lanes (length, speed limit, successors) and junction priorities
    """
    try:
        road_map = _load(map_file)
        roads = []
        for road in road_map.roads.values():
            lanes = []
            for lane_id in road.lane_ids:
                lane = road_map.lanes[lane_id]
                lanes.append(
                    {
                        "id": lane.id,
                        "length": round(lane.length, 2),
                        "speed_limit": lane.speed_limit,
                        "left": lane.left,
                        "right": lane.right,
                        "successors": list(lane.successors),
                        "connector": lane.is_connector,
                    }
                )
            roads.append({"id": road.id, "lanes": lanes})
        junctions = [
            {"id": j.id, "priority": j.priority, "connectors": list(j.connectors)} for j in road_map.junctions.values()
        ]
        return json.dumps({"roads": roads, "junctions": junctions}, indent=2)
    except Exception as e:
        return f"Failed to describe map: {str(e)}"


async def generate_goals_for_state(
    map_file: str,
    x: float,
    y: float,
    heading: float,
    speed: float,
    view_radius: Optional[float] = None,
) -> str:
    """List the candidate goals of a vehicle at a given pose.

    Goals are the visible ends of the vehicle's road and of every road it can reach,
    plus a stopping goal when the vehicle stands still.

    Args:
        map_file: Map file path, or name of a bundled map
        x: Position x in metres
        y: Position y in metres
        heading: Heading in radians
        speed: Speed in m/s
        view_radius: Optional observation radius around the vehicle

    Returns:
        JSON list of goals (id, kind, center, radius), or error message
    """
    try:
        road_map = _load(map_file)
        state = VehicleState((x, y), heading, speed)
        view = ViewRegion(state.position, view_radius) if view_radius else None
        goals = generate_goals(road_map, state, view)
        lane = lane_at(road_map, state.position, heading)
        return json.dumps(
            {
                "lane": lane.id if lane is not None else None,
                "goals": [
                    {"id": g.goal_id, "kind": g.kind.value, "center": list(g.center), "radius": g.radius} for g in goals
                ],
            },
            indent=2,
        )
    except Exception as e:
        return f"Failed to generate goals: {str(e)}"


async def recognize_goals_from_trace(
    map_file: str,
    trace_file: str,
    vehicle_id: str,
    until: Optional[float] = None,
    maneuver: Optional[str] = None,
    config_file: Optional[str] = None,
) -> str:
    """Infer the goal distribution of one vehicle from a recorded state trace.

    Runs inverse planning on the vehicle's trace (up to the given time) and reports
    the posterior probability of each candidate goal.

    Args:
        map_file: Map file path, or name of a bundled map
        trace_file: State trace CSV written by run_scenario_experiment
        vehicle_id: Vehicle to recognize
        until: Only use states up to this time in seconds (defaults to the whole trace)
        maneuver: Current maneuver of the vehicle (e.g. lane-change-right); detected when omitted
        config_file: Optional JSON planner configuration

    Returns:
        JSON posterior (per maneuver: goal, probability, feasible), or error message
    """
    if not os.path.exists(trace_file):
        return f"Trace {trace_file} does not exist"
    try:
        road_map = _load(map_file)
        config = load_config(config_file)
        histories = read_trace(trace_file)
        if vehicle_id not in histories:
            return f"Vehicle {vehicle_id} not in trace; vehicles: {', '.join(sorted(histories))}"
        history = [s for s in histories[vehicle_id] if until is None or s.time <= until + 1e-9]
        if len(history) < 2:
            return f"Not enough states of {vehicle_id} before t={until}"
        now = history[-1].time
        traffic = []
        for vid, states in sorted(histories.items()):
            if vid == vehicle_id:
                continue
            current = [s for s in states if abs(s.time - now) < 1e-6]
            traffic.extend(current)
        recognizer = GoalRecognizer(road_map, config.recognition, config.prediction)
        posterior = recognizer.recognize(
            vehicle_id,
            history,
            true_maneuver=ManeuverKind(maneuver) if maneuver else None,
            traffic=traffic,
        )
        result = {"vehicle": vehicle_id, "t": round(now, 3), "maneuvers": {}}
        for kind in posterior.detection.support:
            result["maneuvers"][kind.value] = {
                "probability": round(posterior.detection.probabilities[kind], 6),
                "goals": [
                    {"goal": h.goal.goal_id, "probability": round(h.probability, 6), "feasible": h.feasible}
                    for h in posterior.hypotheses.get(kind, ())
                ],
            }
        best = posterior.most_likely_goal()
        result["most_likely_goal"] = best.goal_id if best is not None else None
        return json.dumps(result, indent=2)
    except Exception as e:
        return f"Failed to recognize goals: {str(e)}"
