# Goal Driving MCP Server
from goal_driving_server.main import run_server as main

__all__ = ["main"]
