"""
Goal recognition by inverse planning.

For every hypothesised current maneuver and candidate goal the recognizer
compares the reward of the best trajectory from the first observed state
with the reward of the observed history continued by the best plan from
now on. The difference, scaled by beta, is the log-likelihood of the goal;
goal posteriors are the softmax of likelihood and log prior over feasible
goals. Plans found on the way double as Boltzmann-weighted trajectory
predictions.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from goal_driving_server.core.exceptions import (
    ContractError,
    GoalDrivingError,
    ReconstructionInfeasibleError,
)
from goal_driving_server.core.inverse_planner import AStarBudget, Plan, astar_plan, extract_trajectory, replay_plan
from goal_driving_server.core.macro_actions import MacroContext
from goal_driving_server.core.maneuvers import (
    ManeuverConfig,
    ManeuverKind,
    TrafficForecast,
    applicable_maneuvers,
    complete_current_maneuver,
    current_lane,
)
from goal_driving_server.core.road_map import Goal, RoadMap, ViewRegion, generate_goals
from goal_driving_server.core.smoother import SmootherConfig, smooth_trajectory
from goal_driving_server.core.trajectory import (
    RewardConfig,
    Trajectory,
    VehicleState,
    concatenate_trajectories,
    fit_reference_path,
    resample_time,
    trajectory_from_states,
    trajectory_reward,
)

logger = logging.getLogger(__name__)

History = Union[Sequence[VehicleState], Trajectory]


@dataclass(frozen=True)
class GoalRecognitionConfig:
    """
    beta scales reward differences into log-likelihoods. Priors are
    unnormalized weights by goal id; goals without an entry weigh 1.
    """

    beta: float = 1.0
    p_correct: float = 0.9
    priors: Mapping[str, float] = field(default_factory=dict)
    budget: AStarBudget = field(default_factory=AStarBudget)
    reward: RewardConfig = field(default_factory=RewardConfig.for_recognition)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    maneuver: ManeuverConfig = field(default_factory=ManeuverConfig)
    dt: float = 0.1
    reuse_distance: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.p_correct <= 1.0:
            raise ValueError("p_correct must be in (0, 1]")
        if any(w < 0 for w in self.priors.values()):
            raise ValueError("Goal priors must be non-negative")


@dataclass(frozen=True)
class TrajectoryPredictionConfig:
    gamma: float = 1.0
    k_traj: int = 2

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.k_traj < 1:
            raise ValueError("k_traj must be at least 1")


@dataclass(frozen=True)
class ManeuverDetection:
    """Probability of each maneuver a vehicle may currently be executing."""

    probabilities: Mapping[ManeuverKind, float]

    def __post_init__(self):
        total = sum(self.probabilities.values())
        if not self.probabilities or abs(total - 1.0) > 1e-6:
            raise ContractError(f"Maneuver probabilities must sum to 1, got {total:.4f}")

    @property
    def mode(self) -> ManeuverKind:
        return max(self.probabilities, key=lambda k: (self.probabilities[k], -list(ManeuverKind).index(k)))

    @property
    def support(self) -> List[ManeuverKind]:
        return [k for k in ManeuverKind if self.probabilities.get(k, 0.0) > 0.0]

    @classmethod
    def certain(cls, kind: ManeuverKind) -> "ManeuverDetection":
        return cls({kind: 1.0})


def detect_maneuver_simulated(
    true_kind: ManeuverKind, applicable: Iterable[ManeuverKind], p_correct: float = 0.9
) -> ManeuverDetection:
    """
    Stand-in for a learned maneuver detector: the true maneuver gets
    p_correct and the remaining applicable maneuvers share the rest.
    """
    kinds = list(dict.fromkeys(applicable))
    if true_kind not in kinds:
        raise ContractError(f"{true_kind.value} is not among the applicable maneuvers")
    if not 0.0 < p_correct <= 1.0:
        raise ContractError(f"p_correct must be in (0, 1], got {p_correct}")
    if len(kinds) == 1:
        return ManeuverDetection.certain(true_kind)
    rest = (1.0 - p_correct) / (len(kinds) - 1)
    return ManeuverDetection({k: (p_correct if k == true_kind else rest) for k in kinds})


def boltzmann(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Probabilities proportional to exp(gamma * reward)."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ContractError("No rewards to weigh")
    return softmax(gamma * r)


@dataclass(frozen=True, eq=False)
class GoalHypothesis:
    """One (maneuver, goal) pair with its likelihood terms and predictions."""

    maneuver: ManeuverKind
    goal: Goal
    probability: float
    feasible: bool
    optimal_reward: Optional[float] = None
    observed_reward: Optional[float] = None
    trajectories: Tuple[Tuple[Optional[Trajectory], float], ...] = ()
    plans: Tuple[Plan, ...] = ()

    @property
    def log_likelihood_gap(self) -> Optional[float]:
        if self.optimal_reward is None or self.observed_reward is None:
            return None
        return self.observed_reward - self.optimal_reward

    @property
    def best_trajectory(self) -> Optional[Trajectory]:
        if not self.trajectories:
            return None
        return max(self.trajectories, key=lambda tp: tp[1])[0]


@dataclass(eq=False)
class GoalPosterior:
    """Goal and trajectory distributions of one vehicle, per hypothesised maneuver."""

    vehicle_id: Optional[str]
    time: float
    detection: ManeuverDetection
    hypotheses: Dict[ManeuverKind, List[GoalHypothesis]]

    def all_infeasible(self, kind: Optional[ManeuverKind] = None) -> bool:
        kind = kind or self.detection.mode
        return not any(h.feasible for h in self.hypotheses.get(kind, ()))

    def goal_probabilities(self, kind: Optional[ManeuverKind] = None) -> Dict[Goal, float]:
        """p(G | history, maneuver); the detected mode when no maneuver is given."""
        kind = kind or self.detection.mode
        return {h.goal: h.probability for h in self.hypotheses.get(kind, ())}

    def most_likely_goal(self, kind: Optional[ManeuverKind] = None) -> Optional[Goal]:
        probs = self.goal_probabilities(kind)
        if not probs or self.all_infeasible(kind):
            return None
        return max(probs, key=probs.get)

    def probability_at(self, point: Sequence[float], kind: Optional[ManeuverKind] = None) -> float:
        """Total probability of the goals whose region holds the point."""
        return float(sum(p for g, p in self.goal_probabilities(kind).items() if g.contains(point)))

    def hypothesis(self, kind: ManeuverKind, goal: Goal) -> Optional[GoalHypothesis]:
        for h in self.hypotheses.get(kind, ()):
            if h.goal == goal:
                return h
        return None

    def sample(self, rng: np.random.Generator) -> Tuple[ManeuverKind, Optional[Goal], Optional[Trajectory]]:
        """Draw a maneuver, then a goal, then a trajectory. No goal when all goals are infeasible."""
        kinds = self.detection.support
        p = np.array([self.detection.probabilities[k] for k in kinds])
        kind = kinds[int(rng.choice(len(kinds), p=p / p.sum()))]
        feasible = [h for h in self.hypotheses.get(kind, ()) if h.feasible and h.probability > 0]
        if not feasible:
            return kind, None, None
        gp = np.array([h.probability for h in feasible])
        hyp = feasible[int(rng.choice(len(feasible), p=gp / gp.sum()))]
        if not hyp.trajectories:
            return kind, hyp.goal, None
        tp = np.array([p for _, p in hyp.trajectories])
        traj = hyp.trajectories[int(rng.choice(len(tp), p=tp / tp.sum()))][0]
        return kind, hyp.goal, traj

    def collapse_to_mode(self) -> "GoalPosterior":
        """Point mass on the most probable maneuver, goal and trajectory."""
        kind = self.detection.mode
        goal = self.most_likely_goal(kind)
        hyps = []
        for h in self.hypotheses.get(kind, ()):
            if h.goal == goal:
                best = h.best_trajectory
                hyps.append(replace(h, probability=1.0, trajectories=((best, 1.0),) if h.trajectories else ()))
            else:
                hyps.append(replace(h, probability=0.0))
        return GoalPosterior(self.vehicle_id, self.time, ManeuverDetection.certain(kind), {kind: hyps})

    def rows(self) -> List[Tuple[float, str, str, float, str, float]]:
        """(t, vehicle, maneuver, maneuver probability, goal, goal probability) rows."""
        out = []
        for kind in self.detection.support:
            for h in self.hypotheses.get(kind, ()):
                out.append(
                    (self.time, self.vehicle_id or "", kind.value, self.detection.probabilities[kind], h.goal.goal_id, h.probability)
                )
        return out


def _observed_trajectory(history: History) -> Trajectory:
    if isinstance(history, Trajectory):
        if not history.is_timed:
            raise ContractError("An observed history must be time-indexed")
        return history
    if not history:
        raise ContractError("Goal recognition needs at least one observed state")
    return trajectory_from_states(history)


def _state_at(observed: Trajectory, index: int) -> VehicleState:
    return observed.states()[index]


def _shift_times(traj: Trajectory, t0: float) -> Trajectory:
    return Trajectory(traj.path, traj.positions, traj.speeds, traj.times - traj.times[0] + t0, traj.accelerations)


def _combined_reward(observed: Optional[Trajectory], predicted: Optional[Trajectory], cfg: GoalRecognitionConfig) -> float:
    """Reward of the observed history followed by a position-indexed prediction."""
    timed = resample_time(predicted, cfg.dt) if predicted is not None else None
    if observed is None or len(observed) < 2:
        return trajectory_reward(timed, cfg.reward, cfg.dt) if timed is not None else 0.0
    if timed is None or len(timed) < 2:
        return trajectory_reward(observed, cfg.reward, cfg.dt)
    if observed.length <= 1e-3:
        # stood still: only the waiting time adds to the prediction
        wait = -cfg.reward.w_time * observed.duration / cfg.reward.time_scale
        return wait + trajectory_reward(timed, cfg.reward, cfg.dt)
    full = concatenate_trajectories([observed, _shift_times(timed, float(observed.times[-1]))])
    return trajectory_reward(full, cfg.reward, cfg.dt)


def predict_trajectories(
    plans: Sequence[Plan],
    prediction: Optional[TrajectoryPredictionConfig] = None,
    initial_segment: Optional[Trajectory] = None,
    cfg: Optional[GoalRecognitionConfig] = None,
) -> List[Tuple[Optional[Trajectory], float]]:
    """
    Smoothed trajectories of the best plans with probabilities proportional
    to exp(gamma * reward). A plan that has already arrived predicts None.
    """
    prediction = prediction or TrajectoryPredictionConfig()
    cfg = cfg or GoalRecognitionConfig()
    if not plans:
        raise ContractError("No plans to predict from")
    trajectories, rewards = [], []
    for plan in plans[: prediction.k_traj]:
        if not plan.macros and initial_segment is None:
            trajectories.append(None)
            rewards.append(0.0)
            continue
        traj = smooth_trajectory(extract_trajectory(plan, initial_segment), cfg.smoother)
        trajectories.append(traj)
        rewards.append(trajectory_reward(traj, cfg.reward, cfg.dt))
    probs = boltzmann(rewards, prediction.gamma)
    return list(zip(trajectories, (float(p) for p in probs)))


@dataclass
class _CachedPlans:
    lane_id: str
    goal_ids: Tuple[str, ...]
    position: Tuple[float, float]
    plans: List[Plan]


class GoalRecognizer:
    """
    Goal recognition for every observed vehicle, caching per-vehicle A*
    results between ticks.

    Optimal rewards from a vehicle's first observed state are computed once
    per goal. Plans from the current state are reused while the vehicle
    stays on the same lane, sees the same goals and has moved less than
    reuse_distance; their macro sequence is then replayed from the new
    state instead of searched again.
    """

    def __init__(
        self,
        road_map: RoadMap,
        config: Optional[GoalRecognitionConfig] = None,
        prediction: Optional[TrajectoryPredictionConfig] = None,
    ):
        self.road_map = road_map
        self.config = config or GoalRecognitionConfig()
        self.prediction = prediction or TrajectoryPredictionConfig()
        self._optimal: Dict[Tuple[str, str], Optional[float]] = {}
        self._plans: Dict[Tuple[str, ManeuverKind, str], _CachedPlans] = {}
        self.searches = 0
        self.reuses = 0

    def reset(self, vehicle_id: Optional[str] = None):
        if vehicle_id is None:
            self._optimal.clear()
            self._plans.clear()
            return
        self._optimal = {k: v for k, v in self._optimal.items() if k[0] != vehicle_id}
        self._plans = {k: v for k, v in self._plans.items() if k[0] != vehicle_id}

    def _context(self, view: Optional[ViewRegion], forecast: TrafficForecast) -> MacroContext:
        return MacroContext(view=view, forecast=forecast, config=self.config.maneuver)

    def optimal_reward(self, vehicle_id: str, first: VehicleState, goal: Goal, ctx: MacroContext) -> Optional[float]:
        """Reward of the best smoothed trajectory from the first observed state to the goal."""
        key = (vehicle_id, goal.goal_id)
        if key not in self._optimal:
            value = None
            try:
                plans = astar_plan(first, None, goal, self.road_map, self.config.budget, ctx)
                self.searches += 1
                if plans:
                    value = _combined_reward(None, self._predicted(plans[0], None), self.config)
            except GoalDrivingError as e:
                logger.debug("No optimal trajectory for %s to %s: %s", vehicle_id, goal.goal_id, e)
            self._optimal[key] = value
        return self._optimal[key]

    def _predicted(self, plan: Plan, segment: Optional[Trajectory]) -> Optional[Trajectory]:
        if not plan.macros and segment is None:
            return None
        return smooth_trajectory(extract_trajectory(plan, segment), self.config.smoother)

    def _search(
        self,
        vehicle_id: str,
        kind: ManeuverKind,
        start: VehicleState,
        segment: Optional[Trajectory],
        goal: Goal,
        goal_ids: Tuple[str, ...],
        ctx: MacroContext,
    ) -> List[Plan]:
        key = (vehicle_id, kind, goal.goal_id)
        lane = current_lane(self.road_map, start)
        lane_id = lane.id if lane is not None else ""
        cached = self._plans.get(key)
        if (
            cached is not None
            and cached.lane_id == lane_id
            and cached.goal_ids == goal_ids
            and math.dist(cached.position, start.position) < self.config.reuse_distance
        ):
            replayed = [replay_plan(p, start, self.road_map, ctx) for p in cached.plans]
            if all(p is not None for p in replayed):
                self.reuses += 1
                return replayed
        plans = astar_plan(start, segment, goal, self.road_map, self.config.budget, ctx)
        self.searches += 1
        self._plans[key] = _CachedPlans(lane_id, goal_ids, (float(start.x), float(start.y)), plans)
        return plans

    def _hypotheses(
        self,
        vehicle_id: str,
        kind: ManeuverKind,
        observed: Trajectory,
        goals: Sequence[Goal],
        ctx: MacroContext,
    ) -> List[GoalHypothesis]:
        cfg = self.config
        first = _state_at(observed, 0)
        now = _state_at(observed, -1)
        try:
            _, segment = complete_current_maneuver(kind, now, self.road_map, cfg.maneuver, goals)
        except GoalDrivingError as e:
            logger.debug("%s cannot be executing %s: %s", vehicle_id, kind.value, e)
            return [GoalHypothesis(kind, g, 0.0, False) for g in goals]
        start = segment.end_state(time=now.time) if segment is not None else now
        goal_ids = tuple(g.goal_id for g in goals)

        results = []
        for goal in goals:
            try:
                plans = self._search(vehicle_id, kind, start, segment, goal, goal_ids, ctx)
                if not plans:
                    results.append((goal, None))
                    continue
                predictions = predict_trajectories(plans, self.prediction, segment, cfg)
                observed_reward = _combined_reward(observed, predictions[0][0], cfg)
            except GoalDrivingError as e:
                logger.debug("Goal %s infeasible for %s under %s: %s", goal.goal_id, vehicle_id, kind.value, e)
                results.append((goal, None))
                continue
            optimal = self.optimal_reward(vehicle_id, first, goal, ctx)
            if optimal is None:
                # the vehicle got here, so only the search budget failed: stay neutral
                optimal = observed_reward
            results.append((goal, (optimal, observed_reward, predictions, plans)))

        feasible = [(g, r) for g, r in results if r is not None]
        probs: Dict[str, float] = {}
        if feasible:
            logits = []
            for goal, (optimal, observed_reward, _, _) in feasible:
                prior = cfg.priors.get(goal.goal_id, 1.0)
                logits.append(cfg.beta * (observed_reward - optimal) + (math.log(prior) if prior > 0 else -np.inf))
            logits = np.array(logits)
            if np.all(np.isneginf(logits)):
                logits = np.zeros(len(logits))
            for (goal, _), p in zip(feasible, softmax(logits)):
                probs[goal.goal_id] = float(p)
        else:
            logger.debug("All %d goals infeasible for %s under %s", len(goals), vehicle_id, kind.value)

        hypotheses = []
        for goal, r in results:
            if r is None:
                hypotheses.append(GoalHypothesis(kind, goal, 0.0, False))
                continue
            optimal, observed_reward, predictions, plans = r
            hypotheses.append(
                GoalHypothesis(
                    kind,
                    goal,
                    probs[goal.goal_id],
                    True,
                    optimal,
                    observed_reward,
                    tuple(predictions),
                    tuple(plans[: self.prediction.k_traj]),
                )
            )
        return hypotheses

    def recognize(
        self,
        vehicle_id: str,
        history: History,
        true_maneuver: Optional[ManeuverKind] = None,
        traffic: Sequence[VehicleState] = (),
        view: Optional[ViewRegion] = None,
        goals: Optional[Sequence[Goal]] = None,
        detection: Optional[ManeuverDetection] = None,
    ) -> GoalPosterior:
        """
        Posterior over goals and trajectories of one vehicle.

        Args:
            vehicle_id: Key for the per-vehicle caches
            history: Observed states (or a timed trajectory) from first sighting to now
            true_maneuver: Maneuver the vehicle executes, fed to the simulated detector
            traffic: Current states of the other vehicles, for give-way forecasts
            view: Region the observer can see; goals and plans stay inside it
            goals: Candidate goals; generated from the map when omitted
            detection: Maneuver distribution to use instead of the simulated detector
        """
        observed = _observed_trajectory(history)
        now = _state_at(observed, -1)
        if goals is None:
            goals = generate_goals(self.road_map, now, view, traffic)
        if detection is None:
            applicable = applicable_maneuvers(now, self.road_map, self.config.maneuver)
            true_kind = true_maneuver or (applicable[0] if applicable else ManeuverKind.LANE_FOLLOW)
            if true_kind not in applicable:
                # simulator labels can outlast the applicability zone
                applicable.append(true_kind)
            detection = detect_maneuver_simulated(true_kind, applicable, self.config.p_correct)
        ctx = self._context(view, TrafficForecast(self.road_map, traffic))
        hypotheses = {kind: self._hypotheses(vehicle_id, kind, observed, goals, ctx) for kind in detection.support}
        posterior = GoalPosterior(vehicle_id, now.time, detection, hypotheses)
        if logger.isEnabledFor(logging.DEBUG):
            best = posterior.most_likely_goal()
            logger.debug(
                "%s at t=%.1f: %s -> %s",
                vehicle_id,
                now.time,
                detection.mode.value,
                best.goal_id if best is not None else "no feasible goal",
            )
        return posterior


def goal_posteriors(
    history: History,
    kind: ManeuverKind,
    road_map: RoadMap,
    cfg: Optional[GoalRecognitionConfig] = None,
    goals: Optional[Sequence[Goal]] = None,
    view: Optional[ViewRegion] = None,
    traffic: Sequence[VehicleState] = (),
    prediction: Optional[TrajectoryPredictionConfig] = None,
) -> GoalPosterior:
    """Goal posterior of one vehicle assuming it is executing the given maneuver."""
    recognizer = GoalRecognizer(road_map, cfg, prediction)
    return recognizer.recognize("vehicle", history, traffic=traffic, view=view, goals=goals,
                                detection=ManeuverDetection.certain(kind))


def fill_occlusions(
    fragments: Sequence[Trajectory],
    road_map: RoadMap,
    cfg: Optional[GoalRecognitionConfig] = None,
    join_radius: float = 1.0,
) -> Trajectory:
    """
    Stitch time-indexed observed fragments into one continuous history.

    Each gap is bridged by the best macro plan from the end of one fragment
    to the start of the next. The speed profile of the reconstructed whole
    is smoothed, then every bridge is re-timed to span its gap exactly, so
    observed samples keep their own times.

    Raises:
        ContractError: the fragments are not time-ordered or overlap
        ReconstructionInfeasibleError: no plan connects two consecutive fragments
    """
    cfg = cfg or GoalRecognitionConfig()
    if not fragments:
        raise ContractError("No fragments to join")
    if any(not f.is_timed for f in fragments):
        raise ContractError("Fragments must be time-indexed")
    for prev, nxt in zip(fragments, fragments[1:]):
        if nxt.times[0] <= prev.times[-1]:
            raise ContractError(
                f"Fragments must be time-ordered and non-overlapping: one starts at t={nxt.times[0]:.2f}"
                f" before the previous ends at t={prev.times[-1]:.2f}"
            )
    if len(fragments) == 1:
        return fragments[0]

    bridges = []
    for prev, nxt in zip(fragments, fragments[1:]):
        end = prev.states()[-1]
        target = nxt.states()[0]
        goal = Goal.location(target.position, join_radius)
        plans = astar_plan(end, None, goal, road_map, cfg.budget, MacroContext(config=cfg.maneuver))
        if not plans:
            raise ReconstructionInfeasibleError(
                f"No plan from ({end.x:.1f}, {end.y:.1f}) at t={end.time:.1f} to ({target.x:.1f}, {target.y:.1f})"
            )
        bridges.append(_bridge(plans[0], target))

    profile = smooth_trajectory(
        concatenate_trajectories([p for f, b in zip(fragments, bridges + [None]) for p in (_untimed(f), b)]),
        cfg.smoother,
    )
    parts = [fragments[0]]
    offset = float(fragments[0].positions[-1])
    for prev, nxt, bridge in zip(fragments, fragments[1:], bridges):
        if bridge is not None:
            speeds = np.interp(offset + bridge.positions, profile.positions, profile.speeds)
            parts.append(_retime(bridge.with_speeds(speeds), prev.states()[-1], nxt.states()[0], cfg.dt))
            offset += bridge.length
        parts.append(nxt)
        offset += nxt.length
    stitched = concatenate_trajectories(parts, keep_times=True)
    logger.debug("Filled %d occlusions; history now %.1f s long", len(fragments) - 1, stitched.duration)
    return stitched


def _untimed(traj: Trajectory) -> Trajectory:
    keep = np.concatenate([[True], np.diff(traj.positions) > 1e-9])
    return Trajectory(traj.path, traj.positions[keep], np.maximum(traj.speeds[keep], 0.1))


def _retime(bridge: Trajectory, end: VehicleState, target: VehicleState, dt: float) -> Trajectory:
    """Timed bridge from end to target, stretched to span [end.time, target.time]."""
    timed = resample_time(bridge.with_speeds(np.maximum(bridge.speeds, 0.1)), dt)
    scale = (target.time - end.time) / max(timed.duration, 1e-6)
    times = end.time + (timed.times - timed.times[0]) * scale
    times[-1] = target.time
    speeds = timed.speeds / scale
    accs = timed.accelerations / scale**2
    speeds[0], speeds[-1] = end.speed, target.speed
    accs[0], accs[-1] = end.acceleration, target.acceleration
    return Trajectory(timed.path, timed.positions, speeds, times=times, accelerations=accs)


def _bridge(plan: Plan, target: VehicleState) -> Optional[Trajectory]:
    """Plan trajectory ending exactly where the next fragment starts."""
    if not plan.macros:
        return None
    traj = extract_trajectory(plan)
    xy = traj.xy
    tail = np.hypot(xy[:, 0] - target.x, xy[:, 1] - target.y) > 1.5
    keep = np.flatnonzero(tail[:-1])
    points = np.vstack([xy[keep], [target.position]]) if len(keep) else np.array([xy[0], target.position])
    path = fit_reference_path(points)
    frac = np.linspace(0.0, 1.0, len(points))
    speeds = np.interp(frac * traj.length, traj.positions - traj.positions[0], traj.speeds)
    speeds[0], speeds[-1] = traj.speeds[0], max(target.speed, 0.0)
    return Trajectory(path, frac * path.length, np.maximum(speeds, 0.1))
