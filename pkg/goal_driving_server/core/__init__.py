"""
Core functionality for the goal-driving planner.

This package contains the road model, trajectories, velocity smoothing,
maneuvers and macro actions, goal recognition, MCTS and the simulator.
"""

from goal_driving_server.core.exceptions import (
    GoalDrivingError,
    MapParseError,
    TopologyError,
    NoLaneError,
    DegenerateInputError,
    InsufficientSamplesError,
    StallError,
    InfeasibleSmoothingError,
    ContractError,
    ConsistencyError,
    ReconstructionInfeasibleError,
    PlannerStuckError,
    ConfigurationError,
    ReportError,
)
from goal_driving_server.core.road_map import (
    Goal,
    GoalKind,
    Lane,
    RoadMap,
    ViewRegion,
    generate_goals,
    lane_at,
    load_map,
    load_map_file,
    serialize_map,
)
from goal_driving_server.core.trajectory import (
    Path,
    RewardConfig,
    Trajectory,
    VehicleState,
    concatenate_trajectories,
    fit_reference_path,
    resample_time,
    reward,
    target_velocities,
    trajectory_from_states,
    trajectory_reward,
)
from goal_driving_server.core.smoother import (
    SmootherConfig,
    SmoothingProblem,
    SmoothingResult,
    smooth,
    smooth_trajectory,
)
from goal_driving_server.core.maneuvers import (
    ManeuverConfig,
    ManeuverKind,
    TrafficForecast,
    applicable_maneuvers,
    complete_current_maneuver,
    plan_maneuver,
)
from goal_driving_server.core.macro_actions import (
    MacroAction,
    MacroContext,
    applicable_macros,
    expand_macro,
    plan_macro,
)
from goal_driving_server.core.inverse_planner import (
    AStarBudget,
    Plan,
    astar_plan,
    extract_trajectory,
    heuristic,
)
from goal_driving_server.core.goal_recognition import (
    GoalPosterior,
    GoalRecognitionConfig,
    GoalRecognizer,
    ManeuverDetection,
    TrajectoryPredictionConfig,
    boltzmann,
    detect_maneuver_simulated,
    fill_occlusions,
    goal_posteriors,
    predict_trajectories,
)
from goal_driving_server.core.simulator import (
    CollisionEvent,
    SimConfig,
    Vehicle,
    WorldState,
    check_collisions,
    idm_acceleration,
    observe,
    spawn_traffic,
    step,
)
from goal_driving_server.core.mcts import (
    MctsConfig,
    MctsResult,
    ShortHorizonPlanner,
    TreeNode,
    backup,
    plan,
    select_macro,
)

__all__ = [
    # Errors
    "GoalDrivingError",
    "MapParseError",
    "TopologyError",
    "NoLaneError",
    "DegenerateInputError",
    "InsufficientSamplesError",
    "StallError",
    "InfeasibleSmoothingError",
    "ContractError",
    "ConsistencyError",
    "ReconstructionInfeasibleError",
    "PlannerStuckError",
    "ConfigurationError",
    "ReportError",
    # Road model
    "Goal",
    "GoalKind",
    "Lane",
    "RoadMap",
    "ViewRegion",
    "generate_goals",
    "lane_at",
    "load_map",
    "load_map_file",
    "serialize_map",
    # Trajectories and reward
    "Path",
    "RewardConfig",
    "Trajectory",
    "VehicleState",
    "concatenate_trajectories",
    "fit_reference_path",
    "resample_time",
    "reward",
    "target_velocities",
    "trajectory_from_states",
    "trajectory_reward",
    # Velocity smoothing
    "SmootherConfig",
    "SmoothingProblem",
    "SmoothingResult",
    "smooth",
    "smooth_trajectory",
    # Maneuvers and macro actions
    "ManeuverConfig",
    "ManeuverKind",
    "TrafficForecast",
    "applicable_maneuvers",
    "complete_current_maneuver",
    "plan_maneuver",
    "MacroAction",
    "MacroContext",
    "applicable_macros",
    "expand_macro",
    "plan_macro",
    # Inverse planning and goal recognition
    "AStarBudget",
    "Plan",
    "astar_plan",
    "extract_trajectory",
    "heuristic",
    "GoalPosterior",
    "GoalRecognitionConfig",
    "GoalRecognizer",
    "ManeuverDetection",
    "TrajectoryPredictionConfig",
    "boltzmann",
    "detect_maneuver_simulated",
    "fill_occlusions",
    "goal_posteriors",
    "predict_trajectories",
    # Simulation
    "CollisionEvent",
    "SimConfig",
    "Vehicle",
    "WorldState",
    "check_collisions",
    "idm_acceleration",
    "observe",
    "spawn_traffic",
    "step",
    # Planning
    "MctsConfig",
    "MctsResult",
    "ShortHorizonPlanner",
    "TreeNode",
    "backup",
    "plan",
    "select_macro",
]
