"""
Main entry point for the Goal Driving MCP Server.
Exposes scenario experiments, road maps and goal recognition as MCP tools.
"""

import logging

from mcp.server.fastmcp import FastMCP
from goal_driving_server.tools import (
    experiment_tools,
    map_tools,
)
from goal_driving_server.utils.config_utils import log_level_from_env


# Initialize FastMCP server
mcp = FastMCP("goal-driving-server")


def register_tools():
    """Register all tools with the MCP server."""
    # Experiment tools (runs, reports, variants)
    mcp.tool()(experiment_tools.run_scenario_experiment)
    mcp.tool()(experiment_tools.build_reports)
    mcp.tool()(experiment_tools.create_irrational_variant)
    mcp.tool()(experiment_tools.list_scenarios)

    # Map tools (maps, goals, recognition)
    mcp.tool()(map_tools.describe_map)
    mcp.tool()(map_tools.generate_goals_for_state)
    mcp.tool()(map_tools.recognize_goals_from_trace)


def run_server():
    """Run the Goal Driving MCP Server."""
    # stdout carries the protocol; log to stderr
    logging.basicConfig(level=log_level_from_env())

    # Register all tools
    register_tools()

    # Run the server
    mcp.run(transport="stdio")
    return mcp


if __name__ == "__main__":
    run_server()
