"""
Goal Driving Server - interpretable goal-based prediction and planning for autonomous driving.

This package recognizes the goals of other vehicles by inverse planning over
macro actions, plans the ego vehicle's macro actions with Monte Carlo tree
search over the predicted futures, and runs closed-loop driving experiments.

Features:
- Lane-level road maps with junction priorities and goal generation
- Maneuvers, macro actions and an A* macro planner
- Bayesian goal recognition and multi-modal trajectory prediction
- MCTS ego planning with a closed-loop simulator
- Scenario experiments, reports and an MCP tool surface
"""

__version__ = "1.0.0"
