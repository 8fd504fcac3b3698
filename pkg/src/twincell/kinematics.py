"""Forward and inverse kinematics for serial arms described by DH rows.

Positions are millimetres in the robot base frame unless a base pose is
passed explicitly.  The damped-least-squares solver works in metres
internally so translational and rotational error components are of
comparable magnitude.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import PlacedShape, Pose, ShapeKind, ShapePrimitive, capsule_world, matrix_to_quat
from .scene import RobotSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class JointState:
    """Per-joint angles in radians with an optional timestamp in seconds."""

    angles: tuple[float, ...]
    timestamp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))


IK_DAMPING = 1e-2
IK_MAX_ITERATIONS = 200
IK_POSITION_TOL = 0.05  # mm
IK_ORIENTATION_TOL = 1e-4  # rad
IK_MAX_RESTARTS = 24
_RESTART_SEED = 0x5EED


def dh_transform(a: float, d: float, alpha: float, theta: float) -> np.ndarray:
    """Classic DH link transform Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def fk_frames(robot: RobotSpec, angles) -> np.ndarray:
    """All intermediate frames: (dof+1, 4, 4), frame 0 is the base."""
    if len(angles) != robot.dof:
        raise ValueError(f"expected {robot.dof} joint angles, got {len(angles)}")
    frames = np.empty((robot.dof + 1, 4, 4))
    frames[0] = np.eye(4)
    t = np.eye(4)
    for i, (row, q) in enumerate(zip(robot.dh_rows, angles)):
        t = t @ dh_transform(row.a, row.d, row.alpha, q + row.theta_offset)
        frames[i + 1] = t
    return frames


class JointLimitError(ValueError):
    """A joint angle lies outside the robot's limits."""


def forward_kinematics(
    robot: RobotSpec, angles, base_pose: Pose | None = None, check_limits: bool = True
) -> Pose:
    """Flange pose for a joint vector, in the base frame by default."""
    if check_limits and not robot.within_limits(angles):
        raise JointLimitError(f"joint angles {tuple(angles)} outside limits")
    t = fk_frames(robot, angles)[-1]
    pose = Pose(tuple(t[:3, 3]), matrix_to_quat(t[:3, :3]))
    if base_pose is not None:
        pose = base_pose.compose(pose)
    return pose


def jacobian(robot: RobotSpec, angles) -> np.ndarray:
    """Geometric Jacobian (6 x dof): linear rows in mm, angular in rad."""
    frames = fk_frames(robot, angles)
    p_end = frames[-1][:3, 3]
    jac = np.empty((6, robot.dof))
    for i in range(robot.dof):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        jac[:3, i] = np.cross(z, p_end - p)
        jac[3:, i] = z
    return jac


def shoulder_point(robot: RobotSpec) -> np.ndarray:
    """Origin of the second joint frame at zero angles; reach is rated from here."""
    zero = [0.0] * robot.dof
    return fk_frames(robot, zero)[1][:3, 3]


def within_rated_reach(robot: RobotSpec, position) -> bool:
    """Policy check: targets farther than rated reach from the shoulder are rejected."""
    return float(np.linalg.norm(np.asarray(position, dtype=float) - shoulder_point(robot))) <= robot.rated_reach


def _rotation_error(r_target: np.ndarray, r_current: np.ndarray) -> np.ndarray:
    """Axis-angle vector rotating current into target."""
    r = r_target @ r_current.T
    cos_a = (np.trace(r) - 1.0) / 2.0
    cos_a = min(1.0, max(-1.0, cos_a))
    angle = math.acos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    n = np.linalg.norm(axis)
    if n < 1e-12:
        # angle near pi: extract axis from the symmetric part
        w, v = np.linalg.eigh(r)
        axis = v[:, np.argmax(w)]
        return axis / np.linalg.norm(axis) * angle
    return axis / n * angle


@dataclass(frozen=True)
class IKResult:
    success: bool
    angles: tuple[float, ...]
    position_error: float  # mm
    orientation_error: float  # rad
    iterations: int
    reason: str = ""


def _clamp_to_limits(q: np.ndarray, robot: RobotSpec) -> np.ndarray:
    lo = np.array([l for l, _ in robot.joint_limits])
    hi = np.array([h for _, h in robot.joint_limits])
    return np.clip(q, lo, hi)


def _solve_from(robot: RobotSpec, target: Pose, q0: np.ndarray) -> IKResult:
    q = q0.copy()
    p_t = target.p
    r_t = target.rot
    lam2 = IK_DAMPING**2
    eye6 = np.eye(6)
    for it in range(1, IK_MAX_ITERATIONS + 1):
        frames = fk_frames(robot, q)
        t = frames[-1]
        dp = p_t - t[:3, 3]
        drot = _rotation_error(r_t, t[:3, :3])
        pos_err = float(np.linalg.norm(dp))
        rot_err = float(np.linalg.norm(drot))
        if pos_err < IK_POSITION_TOL and rot_err < IK_ORIENTATION_TOL:
            return IKResult(True, tuple(float(v) for v in q), pos_err, rot_err, it)
        jac = jacobian(robot, q)
        jac_m = jac.copy()
        jac_m[:3, :] /= 1000.0
        err = np.concatenate([dp / 1000.0, drot])
        dq = jac_m.T @ np.linalg.solve(jac_m @ jac_m.T + lam2 * eye6, err)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        q = _clamp_to_limits(q + dq, robot)
    frames = fk_frames(robot, q)
    t = frames[-1]
    pos_err = float(np.linalg.norm(p_t - t[:3, 3]))
    rot_err = float(np.linalg.norm(_rotation_error(r_t, t[:3, :3])))
    return IKResult(False, tuple(float(v) for v in q), pos_err, rot_err, IK_MAX_ITERATIONS, "did not converge")


def inverse_kinematics(robot: RobotSpec, target: Pose, seed=None) -> IKResult:
    """Damped-least-squares IK with deterministic random restarts.

    The target is in the robot base frame.  Positions beyond the rated
    reach (measured from the shoulder) are rejected before solving.
    """
    if not within_rated_reach(robot, target.position):
        dist = float(np.linalg.norm(target.p - shoulder_point(robot)))
        return IKResult(
            False,
            tuple(seed) if seed is not None else tuple(robot.home),
            math.inf,
            math.inf,
            0,
            f"target {dist:.1f} mm from shoulder exceeds rated reach {robot.rated_reach:.0f} mm",
        )
    starts = [np.asarray(seed, dtype=float) if seed is not None else np.asarray(robot.home, dtype=float)]
    rng = np.random.default_rng(_RESTART_SEED)
    lo = np.array([max(l, -math.pi) for l, _ in robot.joint_limits])
    hi = np.array([min(h, math.pi) for _, h in robot.joint_limits])
    for _ in range(IK_MAX_RESTARTS):
        starts.append(rng.uniform(lo, hi))
    best: IKResult | None = None
    total_iters = 0
    for q0 in starts:
        result = _solve_from(robot, target, _clamp_to_limits(q0, robot))
        total_iters += result.iterations
        if result.success:
            return IKResult(
                True, result.angles, result.position_error, result.orientation_error, total_iters
            )
        if best is None or result.position_error < best.position_error:
            best = result
    assert best is not None
    log.debug("ik failed: %.3f mm residual after %d iterations", best.position_error, total_iters)
    return IKResult(
        False, best.angles, best.position_error, best.orientation_error, total_iters, best.reason
    )


FLANGE_CLEARANCE_MM = 60.0
"""The tool is not part of the arm model; the wrist capsule stops this far
short of the flange so programmed part engagement is not reported as contact."""


def robot_link_shapes(robot: RobotSpec, angles, base_pose: Pose | None = None) -> list[PlacedShape]:
    """Collision capsules along the arm, one per link of non-trivial length."""
    frames = fk_frames(robot, angles)
    if base_pose is not None:
        frames = np.einsum("ij,njk->nik", base_pose.matrix(), frames)
    shapes: list[PlacedShape] = []
    for i in range(robot.dof):
        a = frames[i][:3, 3]
        b = frames[i + 1][:3, 3]
        radius = robot.link_radii[i]
        if i == robot.dof - 1:
            axis = b - a
            length = float(np.linalg.norm(axis))
            if length > FLANGE_CLEARANCE_MM:
                b = b - axis / length * FLANGE_CLEARANCE_MM
            else:
                b = a
        if np.linalg.norm(b - a) < 1.0:
            shapes.append(
                PlacedShape(
                    f"robot/link{i + 1}",
                    ShapePrimitive(ShapeKind.SPHERE, (radius,)),
                    Pose(tuple(float(v) for v in b)),
                )
            )
        else:
            shapes.append(capsule_world(f"robot/link{i + 1}", a, b, radius))
    return shapes
