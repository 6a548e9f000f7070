"""
Exception hierarchy for the goal-driving planner.

Library code raises these; the MCP tools and the CLI turn them into messages
and exit codes.
"""

from typing import Optional


class GoalDrivingError(Exception):
    """Base class for every error raised by the planner."""


class MapParseError(GoalDrivingError):
    """A map document does not conform to the schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class TopologyError(GoalDrivingError):
    """Lane links of a map are inconsistent (dangling or non-mutual)."""


class NoLaneError(GoalDrivingError):
    """A vehicle state does not lie on any lane of the map."""


class DegenerateInputError(GoalDrivingError):
    """Too few distinct points to build a path."""


class InsufficientSamplesError(GoalDrivingError):
    """A trajectory is too short for finite-difference jerk."""


class StallError(GoalDrivingError):
    """A velocity profile stands still with distance left to cover."""


class InfeasibleSmoothingError(GoalDrivingError):
    """The fixed initial speed of a smoothing problem violates its bounds."""


class ContractError(GoalDrivingError):
    """An operation was called with its precondition violated."""


class ConsistencyError(GoalDrivingError):
    """An internal invariant was found broken (e.g. a gap between maneuvers)."""


class ReconstructionInfeasibleError(GoalDrivingError):
    """No macro plan connects two consecutive observed fragments."""


class PlannerStuckError(GoalDrivingError):
    """The ego vehicle has no applicable macro action."""


class ConfigurationError(GoalDrivingError):
    """A configuration file or value is invalid."""


class ReportError(GoalDrivingError):
    """Report files could not be written."""

    def __init__(self, path: str, message: Optional[str] = None):
        self.path = path
        super().__init__(f"Cannot write report to {path}" + (f": {message}" if message else ""))
