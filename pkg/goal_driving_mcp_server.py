#!/usr/bin/env python3
"""
Run script for the Goal Driving Server.

This script provides a simple way to start the Goal Driving MCP Server.
"""

from goal_driving_server.main import run_server

if __name__ == "__main__":
    run_server()
