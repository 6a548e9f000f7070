"""
Vehicle states, reference paths, trajectories, and the trajectory reward.

A Trajectory is a Path plus samples (arc position, target speed); it may
additionally carry time stamps and accelerations once resampled in time.
"""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from shapely.geometry import LineString, Point

from goal_driving_server.core.exceptions import (
    ConsistencyError,
    ContractError,
    DegenerateInputError,
    InsufficientSamplesError,
    StallError,
)
from goal_driving_server.core.road_map import wrap_angle

PATH_FIT_TOL = 0.1
KAPPA_FLOOR = 1e-4
PATH_SPACING = 0.25
JOIN_TOLERANCE = 0.1


@dataclass(frozen=True)
class VehicleState:
    """Pose, speed and acceleration of one vehicle at one instant."""

    position: Tuple[float, float]
    heading: float
    speed: float
    acceleration: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        if self.speed < 0:
            raise ContractError(f"Speed must be non-negative, got {self.speed}")
        object.__setattr__(self, "speed", float(self.speed))

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]

    @property
    def point(self) -> np.ndarray:
        return np.array(self.position)

    def replace(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Path:
    """A planar curve sampled densely by arc length."""

    s: np.ndarray
    points: np.ndarray
    headings: np.ndarray
    curvature: np.ndarray
    control_points: Optional[np.ndarray] = None

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @cached_property
    def geometry(self) -> LineString:
        return LineString(self.points)

    def point_at(self, s):
        s = np.clip(s, 0.0, self.length)
        xy = np.column_stack([np.interp(s, self.s, self.points[:, 0]), np.interp(s, self.s, self.points[:, 1])])
        return xy[0] if np.ndim(s) == 0 else xy

    def heading_at(self, s):
        h = np.interp(np.clip(s, 0.0, self.length), self.s, self.headings)
        return (h + math.pi) % (2 * math.pi) - math.pi

    def curvature_at(self, s):
        return np.interp(np.clip(s, 0.0, self.length), self.s, self.curvature)

    def project(self, point: Sequence[float]) -> float:
        return float(self.geometry.project(Point(point[0], point[1])))

    def distance(self, point: Sequence[float]) -> float:
        return float(self.geometry.distance(Point(point[0], point[1])))

    def lateral_offset(self, point: Sequence[float]) -> float:
        """Signed distance from the path, positive to the left of travel."""
        s = self.project(point)
        base = self.point_at(s)
        h = float(self.heading_at(s))
        return -math.sin(h) * (point[0] - base[0]) + math.cos(h) * (point[1] - base[1])

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], heading: Optional[float] = None) -> "Path":
        """Polyline path without spline fitting (observed or stitched geometry)."""
        pts = _dedupe(np.asarray(points, dtype=float).reshape(-1, 2))
        if len(pts) < 2:
            if heading is None:
                raise DegenerateInputError("A path needs at least two distinct points")
            pts = np.vstack([pts[0], pts[0] + 0.01 * np.array([math.cos(heading), math.sin(heading)])])
        seg = np.diff(pts, axis=0)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])
        seg_heading = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        headings = np.concatenate([seg_heading, seg_heading[-1:]])
        if len(pts) > 2:
            curvature = np.gradient(headings, s)
        else:
            curvature = np.zeros(len(pts))
        return cls(s, pts, headings, curvature, pts)

    def concatenate(self, other: "Path") -> "Path":
        offset = self.length
        gap = float(np.linalg.norm(other.start - self.end))
        tail_s = other.s[1:] + offset + gap if gap > 1e-9 else other.s[1:] + offset
        turn = other.headings[0] - self.headings[-1]
        shift = 2 * math.pi * round(turn / (2 * math.pi))
        return Path(
            s=np.concatenate([self.s, tail_s]),
            points=np.vstack([self.points, other.points[1:]]),
            headings=np.concatenate([self.headings, other.headings[1:] - shift]),
            curvature=np.concatenate([self.curvature, other.curvature[1:]]),
        )


def _dedupe(points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    if len(points) == 0:
        return points
    keep = np.concatenate([[True], np.linalg.norm(np.diff(points, axis=0), axis=1) > eps])
    return points[keep]


def fit_reference_path(waypoints: Sequence[Sequence[float]], spacing: float = PATH_SPACING) -> Path:
    """
    Fit a C1 (in fact C2) cubic spline through waypoints, parameterized by chord
    length, and sample it densely by arc length.

    Raises:
        DegenerateInputError: fewer than two distinct waypoints
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[-1] != 2:
        raise DegenerateInputError("Waypoints must be a sequence of [x, y] points")
    pts = _dedupe(pts)
    if len(pts) < 2:
        raise DegenerateInputError("A reference path needs at least two distinct waypoints")

    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    u = np.linspace(0.0, chord[-1], max(2, int(math.ceil(chord[-1] / spacing)) + 1))
    if len(pts) == 2:
        direction = (pts[1] - pts[0]) / chord[-1]
        xy = pts[0] + np.outer(u, direction)
        d1 = np.tile(direction, (len(u), 1))
        d2 = np.zeros_like(d1)
    else:
        spline = CubicSpline(chord, pts, bc_type="not-a-knot")
        xy, d1, d2 = spline(u), spline(u, 1), spline(u, 2)

    speed = np.maximum(np.linalg.norm(d1, axis=1), 1e-9)
    curvature = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    headings = np.unwrap(np.arctan2(d1[:, 1], d1[:, 0]))
    return Path(s, xy, headings, curvature, pts)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Reference path plus (arc position, target speed) samples.

    Position-indexed trajectories have strictly increasing positions. Once
    time stamps are attached positions need only be non-decreasing, since a
    vehicle may stand still.
    """

    path: Path
    positions: np.ndarray
    speeds: np.ndarray
    times: Optional[np.ndarray] = None
    accelerations: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = np.atleast_1d(np.asarray(self.positions, dtype=float))
        speeds = np.atleast_1d(np.asarray(self.speeds, dtype=float))
        if positions.shape != speeds.shape:
            raise ContractError("positions and speeds must have the same length")
        if np.any(speeds < -1e-9):
            raise ContractError("Target speeds must be non-negative")
        speeds = np.maximum(speeds, 0.0)
        steps = np.diff(positions)
        if self.times is None:
            if np.any(steps <= 0):
                raise ContractError("Positions must be strictly increasing")
        else:
            times = np.atleast_1d(np.asarray(self.times, dtype=float))
            if times.shape != positions.shape:
                raise ContractError("times must match positions")
            if np.any(steps < -1e-9) or np.any(np.diff(times) <= 0):
                raise ContractError("Timed trajectories need non-decreasing positions and increasing times")
            object.__setattr__(self, "times", times)
            if self.accelerations is None:
                acc = np.gradient(speeds, times) if len(times) > 1 else np.zeros(1)
            else:
                acc = np.asarray(self.accelerations, dtype=float)
            object.__setattr__(self, "accelerations", acc)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "speeds", speeds)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def is_timed(self) -> bool:
        return self.times is not None

    @cached_property
    def xy(self) -> np.ndarray:
        return np.atleast_2d(self.path.point_at(self.positions))

    @property
    def headings(self) -> np.ndarray:
        return np.atleast_1d(self.path.heading_at(self.positions))

    @property
    def start_point(self) -> np.ndarray:
        return self.xy[0]

    @property
    def end_point(self) -> np.ndarray:
        return self.xy[-1]

    @property
    def length(self) -> float:
        return float(self.positions[-1] - self.positions[0])

    @property
    def final_speed(self) -> float:
        return float(self.speeds[-1])

    @property
    def duration(self) -> float:
        if self.is_timed:
            return float(self.times[-1] - self.times[0])
        return float(np.sum(_segment_times(self.positions, self.speeds)))

    def speed_at(self, position: float) -> float:
        return float(np.interp(position, self.positions, self.speeds))

    def with_speeds(self, speeds: Sequence[float]) -> "Trajectory":
        return Trajectory(self.path, self.positions, np.asarray(speeds, dtype=float))

    def end_state(self, time: float = 0.0) -> VehicleState:
        end_time = float(self.times[-1]) if self.is_timed else time + self.duration
        acc = float(self.accelerations[-1]) if self.is_timed else 0.0
        return VehicleState(tuple(self.end_point), float(self.headings[-1]), self.final_speed, acc, end_time)

    def states(self) -> List[VehicleState]:
        """Per-sample vehicle states of a timed trajectory."""
        if not self.is_timed:
            raise ContractError("states() needs a time-indexed trajectory")
        headings = self.headings
        return [
            VehicleState(tuple(p), float(h), float(v), float(a), float(t))
            for p, h, v, a, t in zip(self.xy, headings, self.speeds, self.accelerations, self.times)
        ]

    def rows(self) -> List[Tuple[float, float, float, float, float, float]]:
        """(t, x, y, heading, speed, acceleration) rows for trace files."""
        return [(s.time, s.x, s.y, s.heading, s.speed, s.acceleration) for s in self.states()]


def _segment_times(positions: np.ndarray, speeds: np.ndarray) -> np.ndarray:
    dx = np.diff(positions)
    vsum = speeds[:-1] + speeds[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(dx > 0, 2.0 * dx / vsum, 0.0)


def trajectory_from_states(states: Sequence[VehicleState]) -> Trajectory:
    """Timed trajectory through observed states."""
    if not states:
        raise ContractError("Cannot build a trajectory from no states")
    points = np.array([s.position for s in states])
    path = Path.from_points(points, heading=states[0].heading)
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    positions = np.minimum(np.concatenate([[0.0], np.cumsum(steps)]), path.length)
    return Trajectory(
        path,
        positions,
        np.array([s.speed for s in states]),
        times=np.array([s.time for s in states]),
        accelerations=np.array([s.acceleration for s in states]),
    )


def target_velocities(
    path: Path,
    speed_limit: float,
    lat_acc_max: float,
    spacing: float = 1.0,
    kappa_floor: float = KAPPA_FLOOR,
) -> Trajectory:
    """Curvature-limited target speeds: min(limit, sqrt(lat_acc_max / |kappa|))."""
    count = max(2, int(math.ceil(path.length / spacing)) + 1)
    x = np.linspace(0.0, path.length, count)
    kappa = np.maximum(np.abs(path.curvature_at(x)), kappa_floor)
    v = np.minimum(speed_limit, np.sqrt(lat_acc_max / kappa))
    return Trajectory(path, x, v)


def resample_time(traj: Trajectory, dt: float) -> Trajectory:
    """
    Re-index a trajectory at uniform time steps. Speed is linear in time
    between samples, so each segment takes 2*dx/(v0+v1). A final sample at
    the exact end time is appended when the duration is not a multiple of dt.

    Raises:
        StallError: a segment with distance to cover has zero speed at both ends
    """
    x, v = traj.positions, traj.speeds
    t0 = float(traj.times[0]) if traj.is_timed else 0.0
    if len(x) == 1 or x[-1] - x[0] <= 0:
        return Trajectory(traj.path, x[:1], v[:1], times=np.array([t0]), accelerations=np.zeros(1))

    dx = np.diff(x)
    stalled = (dx > 0) & (v[:-1] + v[1:] <= 1e-9)
    if np.any(stalled):
        i = int(np.argmax(stalled))
        raise StallError(f"Zero speed at x={x[i]:.2f} with {x[-1] - x[i]:.2f} m left")
    seg_t = _segment_times(x, v)
    cum_t = np.concatenate([[0.0], np.cumsum(seg_t)])
    total = cum_t[-1]
    grid = np.arange(0.0, total + 1e-9, dt)
    if total - grid[-1] > 1e-6:
        grid = np.append(grid, total)

    idx = np.clip(np.searchsorted(cum_t, grid, side="right") - 1, 0, len(x) - 2)
    # zero-duration segments (dx == 0) are skipped by searchsorted except at the very end
    tau = grid - cum_t[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.where(seg_t[idx] > 0, (v[idx + 1] - v[idx]) / seg_t[idx], 0.0)
    xs = np.minimum(x[idx] + v[idx] * tau + 0.5 * acc * tau**2, x[-1])
    xs = np.maximum.accumulate(xs)
    vs = np.maximum(v[idx] + acc * tau, 0.0)
    return Trajectory(traj.path, xs, vs, times=grid + t0, accelerations=acc)


def concatenate_trajectories(
    parts: Sequence[Trajectory], tolerance: float = JOIN_TOLERANCE, keep_times: bool = False
) -> Trajectory:
    """
    Join trajectories end to start. Timed parts are shifted so time runs on,
    unless keep_times is set; then every part keeps its own clock and a
    sample at the join time is taken from the earlier part.

    Raises:
        ConsistencyError: consecutive parts are further apart than the tolerance,
            or with keep_times a part starts before the previous one ends
    """
    parts = [p for p in parts if p is not None and len(p) > 0]
    if not parts:
        raise ContractError("Nothing to concatenate")
    timed = all(p.is_timed for p in parts)
    result = parts[0]
    for nxt in parts[1:]:
        gap = float(np.linalg.norm(nxt.start_point - result.end_point))
        if gap > tolerance:
            raise ConsistencyError(f"Gap of {gap:.3f} m between consecutive trajectory parts")
        head = clip_path(result.path, 0.0, float(result.positions[-1]))
        tail = clip_path(nxt.path, float(nxt.positions[0]), nxt.path.length)
        path = head.concatenate(tail)
        shift = head.length + gap - nxt.positions[0]
        if timed and keep_times:
            start = float(nxt.times[0])
            if start < result.times[-1] - 1e-9:
                raise ConsistencyError(f"Part starting at t={start:.2f} overlaps one ending at t={result.times[-1]:.2f}")
            first = 1 if start <= result.times[-1] + 1e-9 else 0
        else:
            first = 1
        positions = np.concatenate([result.positions, nxt.positions[first:] + shift])
        speeds = np.concatenate([result.speeds, nxt.speeds[first:]])
        if timed:
            later = nxt.times[first:] if keep_times else nxt.times[1:] - nxt.times[0] + result.times[-1]
            times = np.concatenate([result.times, later])
            accs = np.concatenate([result.accelerations, nxt.accelerations[first:]])
            positions = np.maximum.accumulate(positions)
            result = Trajectory(path, positions, speeds, times=times, accelerations=accs)
        else:
            keep = np.concatenate([[True], np.diff(positions) > 1e-9])
            result = Trajectory(path, positions[keep], speeds[keep])
    return result


def clip_path(path: Path, s0: float, s1: float) -> Path:
    """Sub-path between two arc positions, re-parameterized to start at zero."""
    s0, s1 = max(0.0, s0), min(path.length, s1)
    if s0 <= 1e-9 and s1 >= path.length - 1e-9:
        return path
    inner = (path.s > s0 + 1e-9) & (path.s < s1 - 1e-9)
    ends = [s0] if s1 - s0 <= 1e-9 else [s0, s1]
    s = np.concatenate([[ends[0]], path.s[inner], ends[1:]])
    return Path(
        s=s - s0,
        points=np.atleast_2d(path.point_at(s)),
        headings=np.interp(s, path.s, path.headings),
        curvature=np.interp(s, path.s, path.curvature),
    )


def truncate_trajectory(traj: Trajectory, last_index: int) -> Trajectory:
    """Keep samples up to and including last_index."""
    end = max(1, min(last_index, len(traj) - 1)) + 1
    if traj.is_timed:
        return Trajectory(traj.path, traj.positions[:end], traj.speeds[:end], traj.times[:end], traj.accelerations[:end])
    return Trajectory(traj.path, traj.positions[:end], traj.speeds[:end])


@dataclass(frozen=True)
class RewardConfig:
    """
    Weights and normalization scales of the trajectory reward.

    R = -(w_time*T/time_scale + w_lon_jerk*J_lon/lon_jerk_scale
          + w_lat_jerk*J_lat/lat_jerk_scale + w_curvature*C/curvature_scale
          + w_safety*D/safety_scale)
    """

    w_time: float = 1.0
    w_lon_jerk: float = 0.1
    w_lat_jerk: float = 0.1
    w_curvature: float = 0.1
    w_safety: float = 0.5
    time_scale: float = 60.0
    lon_jerk_scale: float = 20.0
    lat_jerk_scale: float = 20.0
    curvature_scale: float = 0.2
    safety_scale: float = 1.0
    headway: float = 1.5

    def __post_init__(self):
        weights = [self.w_time, self.w_lon_jerk, self.w_lat_jerk, self.w_curvature, self.w_safety]
        if any(w < 0 for w in weights):
            raise ValueError("Reward weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise ValueError("At least one reward weight must be positive")
        scales = [self.time_scale, self.lon_jerk_scale, self.lat_jerk_scale, self.curvature_scale, self.safety_scale]
        if any(s <= 0 for s in scales):
            raise ValueError("Reward normalization scales must be positive")

    @classmethod
    def for_recognition(cls) -> "RewardConfig":
        """Time in plain seconds, so beta = 1 discriminates about a second of driving."""
        return cls(time_scale=1.0)


def reward_elements(traj: Trajectory, leader_gaps: Sequence[float], cfg: RewardConfig) -> Dict[str, float]:
    """Normalized reward elements of a time-indexed trajectory."""
    if not traj.is_timed:
        raise ContractError("Reward needs a time-indexed trajectory")
    if len(traj) < 4:
        raise InsufficientSamplesError(f"Jerk needs at least 4 samples, got {len(traj)}")
    t, v, x = traj.times, traj.speeds, traj.positions
    jerk_lon = np.gradient(traj.accelerations, t)
    kappa = traj.path.curvature_at(x)
    jerk_lat = np.gradient(v**2 * kappa, t)

    safety = 0.0
    gaps = np.asarray(leader_gaps, dtype=float)
    if gaps.size:
        if gaps.size != len(traj):
            raise ContractError(f"Expected {len(traj)} leader gaps, got {gaps.size}")
        headway = cfg.headway * v
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(headway > 1e-9, gaps / headway, np.inf)
        safety = float(np.mean(np.clip(1.0 - ratio, 0.0, None) ** 2))

    return {
        "time": (t[-1] - t[0]) / cfg.time_scale,
        "lon_jerk": float(np.mean(np.abs(jerk_lon))) / cfg.lon_jerk_scale,
        "lat_jerk": float(np.mean(np.abs(jerk_lat))) / cfg.lat_jerk_scale,
        "curvature": float(np.mean(np.abs(kappa))) / cfg.curvature_scale,
        "safety": safety / cfg.safety_scale,
    }


def reward(traj: Trajectory, leader_gaps: Sequence[float], cfg: RewardConfig) -> float:
    """Weighted sum of negated reward elements; higher is better and never positive."""
    e = reward_elements(traj, leader_gaps, cfg)
    return -(
        cfg.w_time * e["time"]
        + cfg.w_lon_jerk * e["lon_jerk"]
        + cfg.w_lat_jerk * e["lat_jerk"]
        + cfg.w_curvature * e["curvature"]
        + cfg.w_safety * e["safety"]
    )


def trajectory_reward(traj: Trajectory, cfg: RewardConfig, dt: float = 0.1, leader_gaps: Sequence[float] = ()) -> float:
    """Reward of any trajectory, resampling in time first when needed."""
    timed = traj if traj.is_timed else resample_time(traj, dt)
    if len(timed) < 4:
        if timed.duration <= 0:
            return 0.0
        duration = timed.duration
        keep = np.concatenate([[True], np.diff(timed.positions) > 1e-9])
        if np.count_nonzero(keep) >= 2:
            try:
                timed = resample_time(Trajectory(timed.path, timed.positions[keep], timed.speeds[keep]), duration / 4.0)
            except StallError:
                pass
        leader_gaps = ()
        if len(timed) < 4:
            # too short for jerk: only driving time counts
            return -cfg.w_time * duration / cfg.time_scale
    return reward(timed, leader_gaps, cfg)
