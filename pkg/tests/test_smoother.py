import numpy as np
import pytest

from goal_driving_server.core.exceptions import ContractError, InfeasibleSmoothingError
from goal_driving_server.core.smoother import (
    SPEED_EPS,
    SmootherConfig,
    SmoothingProblem,
    _initial_guess,
    constraint_residual,
    interpolate_back,
    smooth,
    smooth_trajectory,
    smoothing_objective,
)
from goal_driving_server.core.trajectory import Trajectory, fit_reference_path

# branching of the grid search per step count, kept near 1e5 leaves
GRID_REACH = {2: 60, 3: 30, 4: 20, 5: 8, 6: 4}


def grid_oracle(problem: SmoothingProblem, cfg: SmootherConfig, steps: int, resolution: float = 0.05) -> float:
    """Best objective over speed sequences on a grid around v1, among those meeting every constraint."""
    reach = int(np.floor(cfg.a_max * cfg.dt / resolution + 1e-9))
    moves = resolution * np.arange(-reach, reach + 1)
    lo, hi = SPEED_EPS, cfg.v_max - SPEED_EPS
    x1 = problem.positions[0]
    seqs = np.array([[problem.speeds[0]]])
    for _ in range(steps - 1):
        x = x1 + cfg.dt * seqs.sum(axis=1)
        cap = np.maximum(problem.kappa(x), SPEED_EPS)
        new = seqs[:, -1:] + moves[None, :]
        ok = (new >= lo) & (new <= hi) & (new <= cap[:, None] + 1e-12)
        rows, cols = np.nonzero(ok)
        seqs = np.hstack([seqs[rows], new[rows, cols][:, None]])
        if not len(seqs):
            return np.inf
    x = x1 + cfg.dt * np.hstack([np.zeros((len(seqs), 1)), np.cumsum(seqs[:, :-1], axis=1)])
    objective = np.sum((seqs - problem.kappa(x)) ** 2, axis=1) + cfg.lam * np.sum(np.diff(seqs, axis=1) ** 2, axis=1)
    return float(objective.min())


def random_problems(count: int = 50, seed: int = 2020):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        steps = int(rng.integers(2, 7))
        cfg = SmootherConfig(a_max=GRID_REACH[steps] * 0.1, dt=0.5)
        anchors = int(rng.integers(2, 5))
        positions = np.concatenate([[0.0], np.cumsum(rng.uniform(2.0, 10.0, anchors - 1))])
        speeds = rng.uniform(1.0, 12.0, anchors)
        # starting at or below every target keeps the problem feasible
        speeds[0] = max(0.5, speeds.min() - rng.uniform(0.0, 1.0))
        yield SmoothingProblem(positions, speeds), cfg, steps


@pytest.mark.parametrize(
    "positions, speeds",
    [
        ([0.0, 10.0, 20.0], [5.0, 8.0, 6.0]),
        ([0.0, 10.0, 30.0], [8.0, 6.0, 6.0]),
        ([0.0, 20.0], [6.0, 6.0]),
    ],
)
def test_smoother_matches_grid_search(positions, speeds):
    cfg = SmootherConfig()
    problem = SmoothingProblem(np.array(positions), np.array(speeds))
    result = smooth(problem, cfg, steps=3)
    assert result.residual < 1e-4
    assert result.objective <= grid_oracle(problem, cfg, 3) + 1e-3


def test_smoothed_profile_respects_rate_and_target():
    cfg = SmootherConfig()
    problem = SmoothingProblem(np.array([0.0, 10.0, 30.0, 40.0]), np.array([2.0, 10.0, 10.0, 3.0]))
    result = smooth(problem, cfg)
    assert np.all(np.abs(np.diff(result.speeds)) <= cfg.a_max * cfg.dt + 1e-3)
    assert np.all(result.speeds[1:] <= problem.kappa(result.positions[1:]) + 1e-3)
    assert result.speeds[0] == pytest.approx(2.0)


def test_start_speed_above_limit_is_infeasible():
    with pytest.raises(InfeasibleSmoothingError):
        smooth(SmoothingProblem(np.array([0.0, 10.0]), np.array([20.0, 5.0])), SmootherConfig())


def test_problem_rejects_unordered_anchors():
    with pytest.raises(ContractError):
        SmoothingProblem(np.array([0.0, 0.0]), np.array([1.0, 1.0]))


def test_interpolate_back_flags_extrapolation():
    cfg = SmootherConfig()
    problem = SmoothingProblem(np.array([0.0, 10.0]), np.array([5.0, 5.0]))
    result = smooth(problem, cfg, steps=2)
    back = interpolate_back(result, SmoothingProblem(np.array([0.0, 1.0, 50.0]), np.array([5.0, 5.0, 5.0])))
    assert back.extrapolated
    assert back.speeds[-1] == pytest.approx(result.speeds[-1])


def test_smooth_trajectory_removes_speed_jumps():
    cfg = SmootherConfig()
    path = fit_reference_path([(0.0, 0.0), (60.0, 0.0)])
    positions = np.linspace(0.0, path.length, 61)
    speeds = np.where(positions < 30.0, 2.0, 12.0)
    smoothed = smooth_trajectory(Trajectory(path, positions, speeds), cfg)
    assert smoothed.speeds[0] == pytest.approx(2.0)
    assert np.all(smoothed.speeds <= speeds + 1e-6)
    # the target jumps by 10 m/s within one metre
    assert np.max(np.diff(smoothed.speeds)) < 3.0


@pytest.mark.parametrize("problem, cfg, steps", list(random_problems()))
def test_random_problems_match_grid_search(problem, cfg, steps):
    result = smooth(problem, cfg, steps=steps)
    assert len(result.speeds) == steps
    assert result.residual < 1e-4
    assert constraint_residual(result.speeds, problem, cfg) < 1e-4
    assert result.objective <= grid_oracle(problem, cfg, steps) + 1e-3


@pytest.mark.parametrize("problem, cfg, steps", list(random_problems(count=10, seed=7)))
def test_objective_never_above_clamped_start(problem, cfg, steps):
    guess = _initial_guess(problem, cfg, steps)
    result = smooth(problem, cfg, steps=steps)
    assert result.objective <= smoothing_objective(guess, problem, cfg) + cfg.convergence_tol


def test_constant_target_is_already_optimal():
    cfg = SmootherConfig(v_max=10.0, a_max=5.0, dt=0.1)
    problem = SmoothingProblem(np.array([0.0, 50.0]), np.array([8.0, 8.0]))
    result = smooth(problem, cfg)
    assert result.speeds == pytest.approx(np.full(len(result.speeds), 8.0), abs=1e-3)
    assert result.objective < 1e-6


def test_step_down_decelerates_within_the_rate():
    cfg = SmootherConfig(a_max=2.0, dt=0.5)
    problem = SmoothingProblem(np.array([0.0, 30.0, 31.0, 60.0]), np.array([10.0, 10.0, 2.0, 2.0]))
    result = smooth(problem, cfg)
    assert result.residual < 1e-4
    assert np.all(np.diff(result.speeds) >= -1.0 - 1e-3)
    assert np.all(result.speeds[1:] <= problem.kappa(result.positions[1:]) + 1e-3)
    assert np.all(result.speeds[result.positions >= 31.0] <= 2.0 + 1e-3)
    back = interpolate_back(result, problem)
    assert np.all(back.speeds <= problem.speeds + 1e-4)


def test_smoothing_is_repeatable():
    cfg = SmootherConfig()
    problem = SmoothingProblem(np.array([0.0, 10.0, 30.0, 40.0]), np.array([2.0, 10.0, 10.0, 3.0]))
    first = smooth(problem, cfg)
    second = smooth(problem, cfg)
    assert abs(first.objective - second.objective) < cfg.convergence_tol
    assert second.speeds == pytest.approx(first.speeds, abs=1e-6)


def test_smoothed_constant_profile_is_a_fixed_point():
    cfg = SmootherConfig(v_max=10.0, a_max=5.0, dt=0.1)
    first = smooth(SmoothingProblem(np.array([0.0, 50.0]), np.array([8.0, 8.0])), cfg)
    again = smooth(SmoothingProblem(first.positions, first.speeds), cfg, steps=len(first.speeds))
    assert abs(again.objective - first.objective) < cfg.convergence_tol
    assert again.speeds == pytest.approx(first.speeds, abs=1e-3)
