"""Motion timing and sampling: trapezoidal profiles, joint and linear moves.

All timing is quantised to integer microseconds so that every consumer
(cycle simulation, shift simulation, the physical-cell emulator) derives
identical event times from the same program.  Geometry is sampled on a
5 ms grid only when a caller actually needs poses, so pure timing paths
stay cheap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_normalize, quat_to_matrix, matrix_to_quat
from .kinematics import IKResult, _solve_from, forward_kinematics, inverse_kinematics
from .scene import RobotSpec

log = logging.getLogger(__name__)

TICK_US = 5000  # motion sampling grid, 5 ms
DEFAULT_TCP_SPEED = 250.0  # mm/s
DEFAULT_TCP_ACCEL = 1200.0  # mm/s^2
_MOTION_EPS = 1e-9


class WallError(ValueError):
    """A requested motion cannot be realised on the allowed side of a wall."""


@dataclass(frozen=True)
class VirtualWall:
    """Half-space constraint: the side the normal points to is forbidden."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise ValueError("wall normal must be non-zero")
        object.__setattr__(self, "normal", tuple(float(v) for v in n / norm))
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))

    def clearance(self, position) -> float:
        """Signed distance to the plane; negative means inside the forbidden side."""
        p = np.asarray(position, dtype=float)
        return -float(np.dot(p - np.asarray(self.point), np.asarray(self.normal)))

    def violates(self, position, margin: float = 0.0) -> bool:
        return self.clearance(position) < margin


@dataclass(frozen=True)
class Trapezoid:
    """Trapezoidal profile over a scalar distance, closed form.

    Degenerates to a triangular profile when the cruise velocity is never
    reached, and to a zero-duration profile for zero distance.
    """

    distance: float
    v_limit: float
    a_limit: float
    t_acc: float = field(init=False)
    t_cruise: float = field(init=False)
    v_peak: float = field(init=False)
    duration: float = field(init=False)

    def __post_init__(self):
        d, v, a = self.distance, self.v_limit, self.a_limit
        if d < 0 or v <= 0 or a <= 0:
            raise ValueError("trapezoid needs non-negative distance and positive limits")
        if d < _MOTION_EPS:
            t_acc = t_cruise = v_peak = 0.0
        elif d >= v * v / a:
            t_acc = v / a
            t_cruise = (d - v * v / a) / v
            v_peak = v
        else:
            t_acc = math.sqrt(d / a)
            t_cruise = 0.0
            v_peak = a * t_acc
        object.__setattr__(self, "t_acc", t_acc)
        object.__setattr__(self, "t_cruise", t_cruise)
        object.__setattr__(self, "v_peak", v_peak)
        object.__setattr__(self, "duration", 2.0 * t_acc + t_cruise)

    def position(self, t: float) -> float:
        """Distance covered at time t, clamped to [0, distance]."""
        if self.distance < _MOTION_EPS or t >= self.duration:
            return self.distance
        if t <= 0.0:
            return 0.0
        a, ta, tc, vp = self.a_limit, self.t_acc, self.t_cruise, self.v_peak
        if t < ta:
            return 0.5 * a * t * t
        if t < ta + tc:
            return 0.5 * a * ta * ta + vp * (t - ta)
        td = self.duration - t
        return self.distance - 0.5 * a * td * td

    def fraction(self, t: float) -> float:
        if self.distance < _MOTION_EPS:
            return 1.0
        return self.position(t) / self.distance


def synchronized_profile(deltas, v_limits, a_limits, speed_scale: float = 1.0) -> Trapezoid:
    """Single normalised profile all joints follow, pinned by the slowest joint.

    The scale 1.0 profile parameter s runs 0 to 1; joint i tracks
    q0_i + delta_i * s, which respects every per-joint limit because the
    parameter limits are the tightest ratios.  speed_scale derates
    velocity only; acceleration stays at the rated value.
    """
    if not 0.0 < speed_scale <= 1.0:
        raise ValueError(f"speed_scale {speed_scale} outside (0, 1]")
    moving = [
        (abs(d), v, a) for d, v, a in zip(deltas, v_limits, a_limits) if abs(d) > _MOTION_EPS
    ]
    if not moving:
        return Trapezoid(0.0, 1.0, 1.0)
    v_s = min(v * speed_scale / d for d, v, a in moving)
    a_s = min(a / d for d, v, a in moving)
    return Trapezoid(1.0, v_s, a_s)


def _quantize(seconds: float) -> int:
    return int(round(seconds * 1e6))


@dataclass
class JointMove:
    """Synchronous joint-space move; the TCP path is whatever FK traces."""

    robot: RobotSpec
    q_start: tuple[float, ...]
    q_end: tuple[float, ...]
    profile: Trapezoid
    duration_us: int = field(init=False)

    def __post_init__(self):
        self.duration_us = _quantize(self.profile.duration)

    @property
    def duration_s(self) -> float:
        return self.duration_us / 1e6

    def sample(self, t_s: float) -> np.ndarray:
        s = self.profile.fraction(t_s)
        q0 = np.asarray(self.q_start)
        q1 = np.asarray(self.q_end)
        return q0 + (q1 - q0) * s

    def tcp_at(self, t_s: float, base_pose: Pose | None = None) -> Pose:
        return forward_kinematics(self.robot, self.sample(t_s), base_pose)


def _slerp(qa, qb, u: float) -> tuple[float, float, float, float]:
    a = np.asarray(quat_normalize(qa))
    b = np.asarray(quat_normalize(qb))
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = a + (b - a) * u
        return quat_normalize(tuple(out))
    theta = math.acos(min(1.0, dot))
    st = math.sin(theta)
    wa = math.sin((1.0 - u) * theta) / st
    wb = math.sin(u * theta) / st
    return quat_normalize(tuple(wa * a + wb * b))


@dataclass
class LinearMove:
    """Straight-line TCP move; joint samples come from chained seeded IK."""

    robot: RobotSpec
    q_start: tuple[float, ...]
    pose_start: Pose
    pose_end: Pose
    profile: Trapezoid
    q_end: tuple[float, ...] = ()
    duration_us: int = field(init=False)
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.duration_us = _quantize(self.profile.duration)
        if not self.q_end:
            self.q_end = tuple(float(v) for v in self._joint_grid()[-1])

    @property
    def duration_s(self) -> float:
        return self.duration_us / 1e6

    def _pose_at_fraction(self, s: float) -> Pose:
        p0 = np.asarray(self.pose_start.position)
        p1 = np.asarray(self.pose_end.position)
        pos = p0 + (p1 - p0) * s
        quat = _slerp(self.pose_start.orientation, self.pose_end.orientation, s)
        return Pose(tuple(float(v) for v in pos), quat)

    def _joint_grid(self) -> np.ndarray:
        if self._grid is not None:
            return self._grid
        ticks = list(range(0, self.duration_us, TICK_US)) + [self.duration_us]
        grid = np.empty((len(ticks), self.robot.dof))
        q = np.asarray(self.q_start, dtype=float)
        for row, t_us in enumerate(ticks):
            target = self._pose_at_fraction(self.profile.fraction(t_us / 1e6))
            result = _solve_from(self.robot, target, q)
            if not result.success:
                result = inverse_kinematics(self.robot, target, seed=tuple(q))
            if result.success:
                q = np.asarray(result.angles)
            else:
                log.warning("linear move sample %d unreachable, holding previous joints", row)
            grid[row] = q
        self._grid = grid
        return grid

    def sample(self, t_s: float) -> np.ndarray:
        grid = self._joint_grid()
        t_us = min(max(t_s * 1e6, 0.0), float(self.duration_us))
        idx = t_us / TICK_US
        lo = min(int(idx), len(grid) - 1)
        hi = min(lo + 1, len(grid) - 1)
        u = idx - lo
        return grid[lo] * (1.0 - u) + grid[hi] * min(u, 1.0)

    def tcp_at(self, t_s: float, base_pose: Pose | None = None) -> Pose:
        pose = self._pose_at_fraction(self.profile.fraction(t_s))
        if base_pose is not None:
            pose = base_pose.compose(pose)
        return pose


Move = JointMove | LinearMove


def make_joint_move(robot: RobotSpec, q_start, q_end, speed_scale: float = 1.0) -> JointMove:
    q0 = tuple(float(v) for v in q_start)
    q1 = tuple(float(v) for v in q_end)
    deltas = [b - a for a, b in zip(q0, q1)]
    profile = synchronized_profile(deltas, robot.max_joint_speed, robot.max_joint_accel, speed_scale)
    return JointMove(robot, q0, q1, profile)


def make_linear_move(
    robot: RobotSpec,
    q_start,
    target: Pose,
    speed: float = DEFAULT_TCP_SPEED,
    accel: float = DEFAULT_TCP_ACCEL,
    speed_scale: float = 1.0,
    q_end=(),
) -> LinearMove:
    """Straight TCP move from the pose implied by q_start to target.

    Passing a known end solution as q_end skips the joint-grid solve,
    which only replaying with sample() actually needs.
    """
    q0 = tuple(float(v) for v in q_start)
    start_pose = forward_kinematics(robot, q0)
    distance = float(np.linalg.norm(np.asarray(target.position) - start_pose.p))
    profile = Trapezoid(distance, speed * speed_scale, accel)
    return LinearMove(robot, q0, start_pose, target, profile, tuple(q_end))


def sample_times_us(duration_us: int) -> list[int]:
    """The 5 ms sampling grid for a move, always including both endpoints."""
    if duration_us <= 0:
        return [0]
    times = list(range(0, duration_us, TICK_US))
    times.append(duration_us)
    return times


def tcp_path(move: Move, base_pose: Pose | None = None) -> list[Pose]:
    return [move.tcp_at(t / 1e6, base_pose) for t in sample_times_us(move.duration_us)]


def wall_violation(move: Move, walls, base_pose: Pose | None = None, margin: float = 0.0):
    """First (time_us, wall) whose forbidden side the sampled TCP enters."""
    if not walls:
        return None
    for t_us in sample_times_us(move.duration_us):
        pose = move.tcp_at(t_us / 1e6, base_pose)
        for wall in walls:
            if wall.violates(pose.position, margin):
                return t_us, wall
    return None


def plan_move(
    robot: RobotSpec,
    q_start,
    q_end,
    walls=(),
    base_pose: Pose | None = None,
    speed_scale: float = 1.0,
    linear: bool = False,
    tcp_speed: float = DEFAULT_TCP_SPEED,
) -> Move:
    """One collision-free-by-wall move between two joint configurations.

    Joint moves whose TCP arc crosses a wall are replaced by a straight
    linear move: a half-space is convex, so a segment between two allowed
    TCP positions stays allowed.  If an endpoint itself is on the
    forbidden side there is no legal motion and WallError is raised.
    """
    for label, q in (("start", q_start), ("end", q_end)):
        pose = forward_kinematics(robot, q, base_pose)
        for wall in walls:
            if wall.violates(pose.position):
                raise WallError(f"{label} position {pose.position} is beyond a virtual wall")
    move: Move
    if linear:
        move = make_linear_move(
            robot, q_start, forward_kinematics(robot, q_end), speed=tcp_speed, speed_scale=speed_scale
        )
    else:
        move = make_joint_move(robot, q_start, q_end, speed_scale)
        if wall_violation(move, walls, base_pose) is not None:
            move = make_linear_move(
                robot, q_start, forward_kinematics(robot, q_end),
                speed=tcp_speed, speed_scale=speed_scale,
            )
    hit = wall_violation(move, walls, base_pose)
    if hit is not None:
        raise WallError(f"no wall-respecting path: TCP enters forbidden side at t={hit[0]} us")
    return move
