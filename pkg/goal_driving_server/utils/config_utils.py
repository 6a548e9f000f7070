"""
Configuration loading for experiments and tools.

A configuration file is a JSON object whose optional sections override the
defaults of the corresponding dataclass. Unknown sections or keys are
errors, never silently ignored.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

from goal_driving_server.core.exceptions import ConfigurationError
from goal_driving_server.core.goal_recognition import GoalRecognitionConfig, TrajectoryPredictionConfig
from goal_driving_server.core.inverse_planner import AStarBudget
from goal_driving_server.core.maneuvers import ManeuverConfig
from goal_driving_server.core.mcts import MctsConfig
from goal_driving_server.core.simulator import ControllerGains, IdmParams, SimConfig
from goal_driving_server.core.smoother import SmootherConfig
from goal_driving_server.core.trajectory import RewardConfig

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "GOAL_DRIVING_LOG_LEVEL"

T = TypeVar("T")


@dataclass(frozen=True)
class PlannerConfig:
    """Every tunable of one experiment run."""

    reward: RewardConfig = field(default_factory=RewardConfig)
    recognition_reward: RewardConfig = field(default_factory=RewardConfig.for_recognition)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    maneuver: ManeuverConfig = field(default_factory=ManeuverConfig)
    astar: AStarBudget = field(default_factory=AStarBudget)
    recognition: GoalRecognitionConfig = field(default_factory=GoalRecognitionConfig)
    prediction: TrajectoryPredictionConfig = field(default_factory=TrajectoryPredictionConfig)
    mcts: MctsConfig = field(default_factory=MctsConfig)
    sim: SimConfig = field(default_factory=SimConfig)


# keys of nested configs, filled from other sections
_DERIVED = {
    "recognition": {"budget", "reward", "smoother", "maneuver"},
    "mcts": {"reward"},
    "sim": {"idm", "gains"},
}


def _build(cls: Type[T], section: str, values: Mapping[str, Any], **derived) -> T:
    if not isinstance(values, Mapping):
        raise ConfigurationError(f"Section '{section}' must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - _DERIVED.get(section, set())
    for key in values:
        if key not in allowed:
            raise ConfigurationError(f"Unknown key '{key}' in section '{section}'")
    kwargs = dict(values)
    kwargs.update(derived)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid section '{section}': {str(e)}") from e


def build_config(document: Optional[Mapping[str, Any]] = None) -> PlannerConfig:
    """
    Assemble a PlannerConfig from a parsed configuration document.

    Raises:
        ConfigurationError: unknown section or key, or an invalid value
    """
    document = document or {}
    if not isinstance(document, Mapping):
        raise ConfigurationError("Configuration must be a JSON object")
    known = {f.name for f in dataclasses.fields(PlannerConfig)}
    for section in document:
        if section not in known:
            raise ConfigurationError(f"Unknown configuration section '{section}'")

    def part(name: str) -> Mapping[str, Any]:
        return document.get(name, {})

    reward = _build(RewardConfig, "reward", part("reward"))
    recognition_reward = _build(RewardConfig, "recognition_reward", {"time_scale": 1.0, **part("recognition_reward")})
    smoother = _build(SmootherConfig, "smoother", part("smoother"))
    maneuver = _build(ManeuverConfig, "maneuver", part("maneuver"))
    astar = _build(AStarBudget, "astar", part("astar"))
    recognition = _build(
        GoalRecognitionConfig,
        "recognition",
        part("recognition"),
        budget=astar,
        reward=recognition_reward,
        smoother=smoother,
        maneuver=maneuver,
    )
    prediction = _build(TrajectoryPredictionConfig, "prediction", part("prediction"))
    mcts = _build(MctsConfig, "mcts", part("mcts"), reward=reward)

    sim_values = dict(part("sim"))
    idm = _build(IdmParams, "sim.idm", sim_values.pop("idm", {}))
    gains = _build(ControllerGains, "sim.gains", sim_values.pop("gains", {}))
    if "spawn_speed" in sim_values:
        sim_values["spawn_speed"] = tuple(sim_values["spawn_speed"])
    sim = _build(SimConfig, "sim", sim_values, idm=idm, gains=gains)

    return PlannerConfig(reward, recognition_reward, smoother, maneuver, astar, recognition, prediction, mcts, sim)


def load_config(path: Optional[str] = None) -> PlannerConfig:
    """
    Load a configuration file, or the defaults when no path is given.

    Raises:
        ConfigurationError: the file is missing, not JSON, or invalid
    """
    if path is None:
        return PlannerConfig()
    if not os.path.exists(path):
        raise ConfigurationError(f"Configuration file {path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: not valid JSON ({e.msg} at line {e.lineno})") from e
    config = build_config(document)
    logger.info("Loaded configuration from %s", path)
    return config


def config_summary(config: PlannerConfig) -> Dict[str, Any]:
    """Plain dict of every value, for run manifests."""
    return dataclasses.asdict(config)


def log_level_from_env(default: str = "WARNING") -> int:
    """Logging level named by GOAL_DRIVING_LOG_LEVEL, or the default."""
    name = os.environ.get(LOG_LEVEL_ENV, default).upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.getLevelName(default)
