"""
Velocity smoothing.

Given anchor positions and target speeds, find speeds v_1..v_n (v_1 fixed)
on a uniform time grid that track the piecewise-linear target map
kappa: x -> v while limiting acceleration:

    minimize   sum_t (v_t - kappa(x_t))^2 + lam * sum_t (v_{t+1} - v_t)^2
    subject to x_{t+1} = x_t + v_t * dt
               0 < v_t < v_max
               v_t <= kappa(x_t)
               |v_{t+1} - v_t| <= a_max * dt

The dynamics equality is eliminated by substitution (x is a cumulative sum
of v), leaving v_2..v_n as the decision vector for SLSQP.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from goal_driving_server.core.exceptions import ContractError, InfeasibleSmoothingError
from goal_driving_server.core.trajectory import Trajectory, resample_time

logger = logging.getLogger(__name__)

SPEED_EPS = 1e-3


@dataclass(frozen=True)
class SmootherConfig:
    lam: float = 10.0
    v_max: float = 15.0
    a_max: float = 3.0
    dt: float = 0.5
    max_iterations: int = 2000
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.lam <= 0 or self.v_max <= 0 or self.a_max <= 0 or self.dt <= 0:
            raise ValueError("lam, v_max, a_max and dt must all be positive")
        if self.max_iterations < 1 or self.convergence_tol <= 0:
            raise ValueError("max_iterations and convergence_tol must be positive")


@dataclass(frozen=True, eq=False)
class SmoothingProblem:
    """Anchor positions (strictly increasing) and their target speeds."""

    positions: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.positions, dtype=float))
        v = np.atleast_1d(np.asarray(self.speeds, dtype=float))
        if x.shape != v.shape or len(x) < 1:
            raise ContractError("Anchor positions and speeds must be non-empty and of equal length")
        if np.any(np.diff(x) <= 0):
            raise ContractError("Anchor positions must be strictly increasing")
        if np.any(v < 0):
            raise ContractError("Anchor speeds must be non-negative")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "speeds", v)

    def kappa(self, x):
        return np.interp(x, self.positions, self.speeds)

    def kappa_slope(self, x):
        """Slope of the piecewise-linear target map (zero outside the anchors)."""
        x = np.asarray(x, dtype=float)
        if len(self.positions) < 2:
            return np.zeros_like(x)
        slopes = np.diff(self.speeds) / np.diff(self.positions)
        idx = np.clip(np.searchsorted(self.positions, x, side="right") - 1, 0, len(slopes) - 1)
        inside = (x >= self.positions[0]) & (x < self.positions[-1])
        return np.where(inside, slopes[idx], 0.0)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "SmoothingProblem":
        return cls(traj.positions, traj.speeds)


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    """Smoothed profile on the time grid; index 0 is the fixed start."""

    positions: np.ndarray
    speeds: np.ndarray
    objective: float
    iterations: int
    residual: float
    converged: bool
    warning: bool = False
    message: str = ""


@dataclass(frozen=True, eq=False)
class InterpolatedSpeeds:
    speeds: np.ndarray
    extrapolated: bool


def positions_from_speeds(x1: float, speeds: np.ndarray, dt: float) -> np.ndarray:
    return x1 + dt * np.concatenate([[0.0], np.cumsum(speeds[:-1])])


def smoothing_objective(speeds: Sequence[float], problem: SmoothingProblem, cfg: SmootherConfig) -> float:
    """Objective value of a full speed sequence (v_1 included)."""
    v = np.asarray(speeds, dtype=float)
    x = positions_from_speeds(problem.positions[0], v, cfg.dt)
    return float(np.sum((v - problem.kappa(x)) ** 2) + cfg.lam * np.sum(np.diff(v) ** 2))


def constraint_residual(speeds: Sequence[float], problem: SmoothingProblem, cfg: SmootherConfig) -> float:
    """Largest violation of the bound, target and rate constraints (index 0 excluded)."""
    v = np.asarray(speeds, dtype=float)
    if len(v) < 2:
        return 0.0
    x = positions_from_speeds(problem.positions[0], v, cfg.dt)
    tail = v[1:]
    violations = [
        np.max(SPEED_EPS - tail),
        np.max(tail - (cfg.v_max - SPEED_EPS)),
        np.max(tail - np.maximum(problem.kappa(x[1:]), SPEED_EPS)),
        np.max(np.abs(np.diff(v)) - cfg.a_max * cfg.dt),
    ]
    return float(max(0.0, *violations))


def _step_count(problem: SmoothingProblem, cfg: SmootherConfig) -> int:
    """Enough steps to cover the anchors at the targeted speeds, with slack for braking."""
    x, v = problem.positions, np.maximum(problem.speeds, SPEED_EPS)
    if len(x) < 2:
        return 1
    travel = float(np.sum(2.0 * np.diff(x) / (v[:-1] + v[1:])))
    travel = min(travel, (x[-1] - x[0]) / SPEED_EPS)
    return max(len(x), int(math.ceil(1.2 * travel / cfg.dt)) + 2)


def _initial_guess(problem: SmoothingProblem, cfg: SmootherConfig, n: int) -> np.ndarray:
    """Feasible start: forward and backward clamping sweeps repeated until positions settle."""
    rate = cfg.a_max * cfg.dt
    lo, hi = SPEED_EPS, cfg.v_max - SPEED_EPS
    v = np.full(n, problem.speeds[0])
    for _ in range(50):
        x = positions_from_speeds(problem.positions[0], v, cfg.dt)
        cap = np.clip(np.maximum(problem.kappa(x), lo), lo, hi)
        new = v.copy()
        for t in range(1, n):
            new[t] = min(cap[t], new[t - 1] + rate)
            new[t] = max(new[t], new[t - 1] - rate, lo)
        for t in range(n - 2, 0, -1):
            new[t] = max(min(new[t], new[t + 1] + rate), lo)
        if np.allclose(new, v, atol=1e-9):
            break
        v = new
    return v


def smooth(problem: SmoothingProblem, cfg: SmootherConfig, steps: Optional[int] = None) -> SmoothingResult:
    """
    Solve the velocity-smoothing program.

    When the solver fails to converge or ends worse than the clamped initial
    guess, the best feasible iterate is returned with the warning flag set.

    Raises:
        InfeasibleSmoothingError: the fixed start speed is not below v_max
    """
    v1 = float(problem.speeds[0])
    if v1 >= cfg.v_max:
        raise InfeasibleSmoothingError(f"Start speed {v1:.2f} m/s is not below v_max={cfg.v_max:.2f} m/s")
    n = steps if steps is not None else _step_count(problem, cfg)
    x1, dt, lam = float(problem.positions[0]), cfg.dt, cfg.lam
    guess = _initial_guess(problem, cfg, n)
    guess_objective = smoothing_objective(guess, problem, cfg)
    if n < 2:
        return SmoothingResult(np.array([x1]), guess, guess_objective, 0, 0.0, True)

    def full(z):
        return np.concatenate([[v1], z])

    def objective(z):
        v = full(z)
        x = positions_from_speeds(x1, v, dt)
        return float(np.sum((v - problem.kappa(x)) ** 2) + lam * np.sum(np.diff(v) ** 2))

    def gradient(z):
        v = full(z)
        x = positions_from_speeds(x1, v, dt)
        r = v - problem.kappa(x)
        g = 2.0 * r
        # x_t depends on every earlier v_k
        weighted = -2.0 * dt * r * problem.kappa_slope(x)
        g[:-1] += np.cumsum(weighted[::-1])[::-1][1:]
        dv = np.diff(v)
        g[:-1] -= 2.0 * lam * dv
        g[1:] += 2.0 * lam * dv
        return g[1:]

    def target_gap(z):
        v = full(z)
        x = positions_from_speeds(x1, v, dt)
        return np.maximum(problem.kappa(x[1:]), SPEED_EPS) - z

    def target_gap_jac(z):
        v = full(z)
        x = positions_from_speeds(x1, v, dt)
        slope = problem.kappa_slope(x[1:]) * (problem.kappa(x[1:]) > SPEED_EPS)
        m = len(z)
        # row t (x_{t+1}) depends on z_0..z_{t-1}
        jac = np.tril(np.ones((m, m)), k=-1) * (slope[:, None] * dt)
        return jac - np.eye(m)

    m = n - 1
    diff = np.zeros((m, m))
    diff[np.arange(m), np.arange(m)] = 1.0
    diff[np.arange(1, m), np.arange(m - 1)] = -1.0
    offset = np.zeros(m)
    offset[0] = -v1
    rate = cfg.a_max * dt
    constraints = [
        {"type": "ineq", "fun": target_gap, "jac": target_gap_jac},
        {"type": "ineq", "fun": lambda z: rate - (diff @ z + offset), "jac": lambda z: -diff},
        {"type": "ineq", "fun": lambda z: rate + (diff @ z + offset), "jac": lambda z: diff},
    ]
    bounds = [(SPEED_EPS, cfg.v_max - SPEED_EPS)] * m

    res = minimize(
        objective,
        guess[1:],
        jac=gradient,
        method="SLSQP",
        bounds=bounds,
        constraints=constraints,
        options={"maxiter": cfg.max_iterations, "ftol": cfg.convergence_tol * 1e-2},
    )
    speeds = np.clip(full(res.x), 0.0, None)
    residual = constraint_residual(speeds, problem, cfg)
    value = smoothing_objective(speeds, problem, cfg)
    iterations = int(getattr(res, "nit", 0))

    if residual > cfg.convergence_tol or value > guess_objective + cfg.convergence_tol:
        reason = res.message if not res.success else "solution worse than clamped start"
        logger.warning("Velocity smoothing fell back to the clamped profile: %s", reason)
        return SmoothingResult(
            positions_from_speeds(x1, guess, dt),
            guess,
            guess_objective,
            iterations,
            constraint_residual(guess, problem, cfg),
            False,
            True,
            str(reason),
        )
    if not res.success:
        logger.warning("Velocity smoothing did not converge: %s", res.message)
    return SmoothingResult(
        positions_from_speeds(x1, speeds, dt),
        speeds,
        value,
        iterations,
        residual,
        bool(res.success),
        not res.success,
        str(res.message),
    )


def interpolate_back(solution: SmoothingResult, problem: SmoothingProblem) -> InterpolatedSpeeds:
    """
    Achievable speeds at the original anchor positions.

    Anchors past the last solution sample take its speed and set the
    extrapolated flag.
    """
    x, v = solution.positions, solution.speeds
    query = problem.positions
    speeds = np.interp(query, x, v) if len(x) > 1 else np.full(len(query), v[0])
    extrapolated = bool(np.any(query > x[-1] + 1e-9))
    if extrapolated:
        logger.debug("Interpolating %d anchors past the smoothed horizon", int(np.sum(query > x[-1])))
    speeds = np.minimum(speeds, problem.speeds)
    return InterpolatedSpeeds(speeds, extrapolated)


def smooth_trajectory(traj: Trajectory, cfg: SmootherConfig) -> Trajectory:
    """
    Replace the target speeds of a trajectory with a smoothed, feasible profile.

    Anchors are taken on the cfg.dt time grid of the target profile; the
    solution is interpolated back onto the trajectory's own samples. A final
    target speed of zero (a stop) is kept.
    """
    if len(traj) < 2 or traj.length <= 0:
        return traj
    plain = Trajectory(traj.path, traj.positions, traj.speeds) if not traj.is_timed else _untime(traj)
    capped = np.minimum(plain.speeds, cfg.v_max - 2 * SPEED_EPS)
    plain = plain.with_speeds(capped)
    anchors = resample_time(_unstall(plain), cfg.dt)
    keep = np.concatenate([[True], np.diff(anchors.positions) > 1e-6])
    problem = SmoothingProblem(anchors.positions[keep], np.interp(anchors.positions[keep], plain.positions, plain.speeds))
    result = smooth(problem, cfg)
    back = interpolate_back(result, SmoothingProblem(plain.positions, plain.speeds))
    speeds = back.speeds
    if plain.speeds[-1] <= SPEED_EPS:
        speeds[-1] = 0.0
    return plain.with_speeds(speeds)


def _untime(traj: Trajectory) -> Trajectory:
    keep = np.concatenate([[True], np.diff(traj.positions) > 1e-9])
    return Trajectory(traj.path, traj.positions[keep], traj.speeds[keep])


def _unstall(traj: Trajectory) -> Trajectory:
    """Lift interior zero targets so the time grid exists."""
    speeds = traj.speeds.copy()
    speeds[1:-1] = np.maximum(speeds[1:-1], SPEED_EPS)
    if len(speeds) > 1 and speeds[0] <= 0 and speeds[1] <= 0:
        speeds[1] = SPEED_EPS
    return traj.with_speeds(speeds)
