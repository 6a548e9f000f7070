import math

import numpy as np
import pytest

from goal_driving_server.core.exceptions import (
    ConsistencyError,
    ContractError,
    DegenerateInputError,
    InsufficientSamplesError,
    StallError,
)
from goal_driving_server.core.trajectory import (
    RewardConfig,
    Trajectory,
    VehicleState,
    concatenate_trajectories,
    fit_reference_path,
    resample_time,
    reward,
    target_velocities,
    trajectory_from_states,
    trajectory_reward,
)


def straight(length: float = 10.0, speed: float = 10.0, samples: int = 2) -> Trajectory:
    path = fit_reference_path([(0.0, 0.0), (length, 0.0)])
    return Trajectory(path, np.linspace(0.0, path.length, samples), np.full(samples, speed))


def test_reference_path_needs_two_distinct_points():
    with pytest.raises(DegenerateInputError):
        fit_reference_path([(1.0, 1.0), (1.0, 1.0)])


def test_reference_path_passes_through_waypoints():
    waypoints = [(0.0, 0.0), (10.0, 2.0), (20.0, 0.0)]
    path = fit_reference_path(waypoints)
    for point in waypoints:
        assert path.distance(point) < 0.1


def test_target_velocity_on_a_circle_follows_lateral_acceleration():
    radius = 20.0
    angles = np.linspace(0.0, math.pi / 2, 91)
    path = fit_reference_path(np.column_stack([radius * np.cos(angles), radius * np.sin(angles)]))
    traj = target_velocities(path, speed_limit=10.0, lat_acc_max=2.0)
    middle = traj.speeds[len(traj) // 4 : 3 * len(traj) // 4]
    # sqrt(2.0 / (1 / 20)) = 6.324 m/s
    assert np.all(np.abs(middle - math.sqrt(40.0)) < 0.05)


def test_target_velocity_is_capped_by_the_speed_limit():
    traj = target_velocities(fit_reference_path([(0.0, 0.0), (50.0, 0.0)]), speed_limit=10.0, lat_acc_max=2.0)
    assert np.all(traj.speeds == pytest.approx(10.0))


def test_resample_constant_speed():
    timed = resample_time(straight(), 0.5)
    assert len(timed) == 3
    assert timed.times == pytest.approx([0.0, 0.5, 1.0])
    assert timed.positions == pytest.approx([0.0, 5.0, 10.0])


def test_resample_appends_the_exact_end_time():
    timed = resample_time(straight(length=12.0), 0.5)
    assert timed.times[-1] == pytest.approx(1.2)
    assert timed.positions[-1] == pytest.approx(12.0)


def test_resample_rejects_a_stall():
    path = fit_reference_path([(0.0, 0.0), (10.0, 0.0)])
    with pytest.raises(StallError):
        resample_time(Trajectory(path, [0.0, 10.0], [0.0, 0.0]), 0.5)


def test_positions_must_increase():
    path = fit_reference_path([(0.0, 0.0), (10.0, 0.0)])
    with pytest.raises(ContractError):
        Trajectory(path, [0.0, 5.0, 5.0], [1.0, 1.0, 1.0])


def test_concatenate_rejects_gaps():
    a = straight()
    path = fit_reference_path([(12.0, 0.0), (20.0, 0.0)])
    b = Trajectory(path, [0.0, path.length], [10.0, 10.0])
    with pytest.raises(ConsistencyError):
        concatenate_trajectories([a, b])


def test_concatenate_joins_end_to_start():
    a = straight()
    path = fit_reference_path([(10.0, 0.0), (20.0, 0.0)])
    joined = concatenate_trajectories([a, Trajectory(path, [0.0, path.length], [10.0, 10.0])])
    assert joined.length == pytest.approx(20.0)
    assert joined.end_point == pytest.approx([20.0, 0.0])


def timed_run(x0: float, t0: float, count: int = 3) -> Trajectory:
    return trajectory_from_states([VehicleState((x0 + 2.0 * k, 0.0), 0.0, 4.0, 0.0, t0 + 0.5 * k) for k in range(count)])


def test_concatenate_shifts_time_by_default():
    joined = concatenate_trajectories([timed_run(0.0, 0.0), timed_run(4.0, 7.0)])
    assert joined.times == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])


def test_concatenate_can_keep_each_clock():
    joined = concatenate_trajectories([timed_run(0.0, 0.0), timed_run(4.0, 7.0)], keep_times=True)
    assert joined.times == pytest.approx([0.0, 0.5, 1.0, 7.0, 7.5, 8.0])
    assert joined.end_point == pytest.approx([8.0, 0.0])


def test_concatenate_keeping_clocks_rejects_overlap():
    with pytest.raises(ConsistencyError):
        concatenate_trajectories([timed_run(0.0, 0.0), timed_run(4.0, 0.5)], keep_times=True)


def test_trajectory_from_states_keeps_times():
    states = [VehicleState((2.0 * k, 0.0), 0.0, 4.0, 0.0, 0.5 * k) for k in range(5)]
    traj = trajectory_from_states(states)
    assert traj.is_timed
    assert traj.duration == pytest.approx(2.0)
    assert traj.length == pytest.approx(8.0)


def test_reward_of_a_straight_constant_speed_drive_is_its_time():
    cfg = RewardConfig()
    value = trajectory_reward(straight(length=100.0, samples=11), cfg, dt=0.1)
    # no jerk, no curvature, no leader: only 10 s of driving over the 60 s scale
    assert value == pytest.approx(-10.0 / 60.0, abs=1e-6)


def test_reward_needs_four_samples():
    timed = resample_time(straight(), 0.5)
    with pytest.raises(InsufficientSamplesError):
        reward(timed, (), RewardConfig())


def test_reward_config_rejects_negative_weights():
    with pytest.raises(ValueError):
        RewardConfig(w_time=-1.0)
