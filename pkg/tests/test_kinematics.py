"""Forward and inverse kinematics against an independent matrix oracle.

The oracle composes standard DH transforms with plain numpy, written
here without reference to the implementation, and is also used batched
to sample the reach bound cheaply.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from twincell.geometry import Pose, quat_to_matrix
from twincell.kinematics import (
    FLANGE_CLEARANCE_MM,
    JointLimitError,
    forward_kinematics,
    inverse_kinematics,
    robot_link_shapes,
    shoulder_point,
    within_rated_reach,
)
from twincell.scene import DHRow, RobotSpec

# frozen reference: tool pose at all-zero joints for the packaged arm,
# computed once by the oracle below
ZERO_POSE_POSITION = (-817.2, -232.9, 62.8)
ZERO_POSE_QUAT = (0.7071067811865476, 0.7071067811865475, 0.0, 0.0)


def oracle_fk(robot, angles) -> np.ndarray:
    """Independent DH composition: Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    t = np.eye(4)
    for row, q in zip(robot.dh_rows, angles):
        theta = q + row.theta_offset
        ct, st = math.cos(theta), math.sin(theta)
        ca, sa = math.cos(row.alpha), math.sin(row.alpha)
        t = t @ np.array(
            [
                [ct, -st * ca, st * sa, row.a * ct],
                [st, ct * ca, -ct * sa, row.a * st],
                [0.0, sa, ca, row.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
    return t


def oracle_fk_batch(robot, angles: np.ndarray) -> np.ndarray:
    """Tool positions for a batch of joint vectors, shape (n, dof) -> (n, 3)."""
    n = angles.shape[0]
    t = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    for i, row in enumerate(robot.dh_rows):
        theta = angles[:, i] + row.theta_offset
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = math.cos(row.alpha), math.sin(row.alpha)
        link = np.zeros((n, 4, 4))
        link[:, 0, 0] = ct
        link[:, 0, 1] = -st * ca
        link[:, 0, 2] = st * sa
        link[:, 0, 3] = row.a * ct
        link[:, 1, 0] = st
        link[:, 1, 1] = ct * ca
        link[:, 1, 2] = -ct * sa
        link[:, 1, 3] = row.a * st
        link[:, 2, 1] = sa
        link[:, 2, 2] = ca
        link[:, 2, 3] = row.d
        link[:, 3, 3] = 1.0
        t = t @ link
    return t[:, :3, 3]


def random_joints(robot, rng, n: int) -> np.ndarray:
    lo = np.array([max(l, -math.pi) for l, _ in robot.joint_limits])
    hi = np.array([min(h, math.pi) for _, h in robot.joint_limits])
    return rng.uniform(lo, hi, size=(n, robot.dof))


def one_link_robot(a: float = 100.0) -> RobotSpec:
    return RobotSpec(
        dof=1,
        dh_rows=(DHRow(a=a, d=0.0, alpha=0.0),),
        joint_limits=((-math.pi, math.pi),),
        max_joint_speed=(1.0,),
        max_joint_accel=(1.0,),
        payload_capacity=1.0,
        rated_reach=2 * a,
    )


class TestForwardKinematics:
    def test_zero_joints_match_frozen_reference(self, scene):
        pose = forward_kinematics(scene.robot, (0.0,) * 6)
        assert np.allclose(pose.position, ZERO_POSE_POSITION, atol=1e-9)
        assert np.allclose(pose.orientation, ZERO_POSE_QUAT, atol=1e-12)

    def test_matches_oracle_on_random_states(self, scene):
        rng = np.random.default_rng(4)
        for q in random_joints(scene.robot, rng, 200):
            expected = oracle_fk(scene.robot, q)
            pose = forward_kinematics(scene.robot, tuple(q))
            assert np.allclose(pose.position, expected[:3, 3], atol=1e-9)
            assert np.allclose(quat_to_matrix(pose.orientation), expected[:3, :3], atol=1e-9)

    def test_one_link_quarter_turn(self):
        pose = forward_kinematics(one_link_robot(100.0), (math.pi / 2,))
        assert np.allclose(pose.position, (0.0, 100.0, 0.0), atol=1e-9)

    def test_rejects_out_of_limit_joint(self, scene):
        beyond = (7.0,) + (0.0,) * 5
        with pytest.raises(JointLimitError):
            forward_kinematics(scene.robot, beyond)

    def test_reach_bound_sampled(self, scene):
        # tool position never exceeds rated reach plus the wrist stack,
        # measured from the shoulder
        robot = scene.robot
        rng = np.random.default_rng(7)
        positions = oracle_fk_batch(robot, random_joints(robot, rng, 100_000))
        radii = np.linalg.norm(positions - shoulder_point(robot), axis=1)
        wrist = sum(abs(row.d) for row in robot.dh_rows[3:])
        assert float(radii.max()) <= robot.rated_reach + wrist + 1e-6


class TestInverseKinematics:
    def test_round_trip_on_reachable_poses(self, scene):
        robot = scene.robot
        rng = np.random.default_rng(11)
        solved = 0
        for q in random_joints(robot, rng, 100):
            target = forward_kinematics(robot, tuple(q))
            if not within_rated_reach(robot, target.position):
                continue
            result = inverse_kinematics(robot, target, seed=tuple(q))
            assert result.success, result.reason
            assert result.position_error <= 0.1
            assert result.orientation_error <= 1e-3
            solved += 1
        assert solved > 50

    def test_far_target_reports_not_reachable(self, scene):
        target = Pose((900.0, 0.0, 200.0))
        result = inverse_kinematics(scene.robot, target)
        assert not result.success
        assert "reach" in result.reason

    def test_every_direction_beyond_reach_rejected(self, scene):
        robot = scene.robot
        center = shoulder_point(robot)
        rng = np.random.default_rng(3)
        for _ in range(50):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            target = Pose(tuple(center + direction * (robot.rated_reach + 1.0)))
            assert not inverse_kinematics(robot, target).success

    def test_robot_task_points_are_solvable(self, scene, plan):
        # manual stations sit beyond the arm on purpose
        base = scene.robot_base_pose()
        for tid in plan.robot_task_ids():
            task = scene.task(tid)
            for pose in (task.pick, task.place):
                if pose is None:
                    continue
                local = base.inverse().compose(pose)
                result = inverse_kinematics(scene.robot, local)
                assert result.success, f"{tid}: {result.reason}"

    def test_deterministic_for_fixed_inputs(self, scene):
        target = forward_kinematics(scene.robot, scene.robot.home)
        a = inverse_kinematics(scene.robot, target)
        b = inverse_kinematics(scene.robot, target)
        assert a == b


class TestLinkShapes:
    def test_one_capsule_per_link(self, scene):
        links = robot_link_shapes(scene.robot, scene.robot.home)
        assert len(links) == scene.robot.dof
        assert all(s.as_capsule() is not None for s in links)

    def test_flange_capsule_stops_short_of_tool(self, scene):
        links = robot_link_shapes(scene.robot, scene.robot.home)
        tool = forward_kinematics(scene.robot, scene.robot.home)
        _, end, _ = links[-1].as_capsule()
        assert np.linalg.norm(end - tool.p) >= FLANGE_CLEARANCE_MM - 1e-6

    def test_base_pose_translates_all_links(self, scene):
        base = Pose((100.0, -50.0, 0.0))
        plain = robot_link_shapes(scene.robot, scene.robot.home)
        moved = robot_link_shapes(scene.robot, scene.robot.home, base_pose=base)
        for a, b in zip(plain, moved):
            (a0, a1, _), (b0, b1, _) = a.as_capsule(), b.as_capsule()
            assert np.allclose(b0 - a0, (100.0, -50.0, 0.0), atol=1e-9)
            assert np.allclose(b1 - a1, (100.0, -50.0, 0.0), atol=1e-9)
