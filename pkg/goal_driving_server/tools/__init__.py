"""
MCP tool implementations for the Goal Driving Server.

This package contains the MCP tool implementations that expose experiments,
maps and goal recognition to clients through the Model Context Protocol.
"""

# Experiment tools
from goal_driving_server.tools.experiment_tools import (
    run_scenario_experiment,
    build_reports,
    create_irrational_variant,
    list_scenarios,
)

# Map tools
from goal_driving_server.tools.map_tools import (
    describe_map,
    generate_goals_for_state,
    recognize_goals_from_trace,
)

__all__ = [
    # Experiment tools
    "run_scenario_experiment",
    "build_reports",
    "create_irrational_variant",
    "list_scenarios",
    # Map tools
    "describe_map",
    "generate_goals_for_state",
    "recognize_goals_from_trace",
]
