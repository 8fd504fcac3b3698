"""Velocity profiles, moves and virtual walls against closed-form checks."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twincell.geometry import Pose, quat_from_axis_angle, quat_mul, rotation_angle_between
from twincell.kinematics import forward_kinematics
from twincell.trajectory import (
    TICK_US,
    Trapezoid,
    VirtualWall,
    make_joint_move,
    make_linear_move,
    sample_times_us,
    synchronized_profile,
    wall_violation,
)

distance = st.floats(1e-6, 10.0, allow_nan=False)
limit = st.floats(0.1, 5.0, allow_nan=False)


class TestTrapezoid:
    @given(distance, limit, limit)
    def test_covers_exact_distance(self, d, v, a):
        profile = Trapezoid(d, v, a)
        assert math.isclose(profile.position(profile.duration), d, abs_tol=1e-9)
        assert profile.position(0.0) == 0.0

    @given(distance, limit, limit)
    def test_position_is_monotone(self, d, v, a):
        profile = Trapezoid(d, v, a)
        times = np.linspace(0.0, profile.duration, 50)
        samples = [profile.position(t) for t in times]
        assert all(b >= a - 1e-12 for a, b in zip(samples, samples[1:]))

    @given(distance, limit, limit)
    def test_velocity_never_exceeds_limit(self, d, v, a):
        profile = Trapezoid(d, v, a)
        if profile.duration == 0.0:
            return
        times = np.linspace(0.0, profile.duration, 200)
        samples = np.array([profile.position(t) for t in times])
        speeds = np.abs(np.diff(samples)) / np.diff(times)
        assert speeds.max() <= v + 1e-6

    def test_triangular_when_too_short_to_cruise(self):
        profile = Trapezoid(0.5, 10.0, 1.0)
        assert profile.t_cruise == 0.0
        assert profile.v_peak < 10.0

    def test_rejects_nonpositive_limits(self):
        with pytest.raises(ValueError):
            Trapezoid(1.0, 0.0, 1.0)


class TestSynchronizedProfile:
    def test_slowest_joint_pins_duration(self):
        # joint 0 needs 2 rad at 1 rad/s; joint 1 is far faster
        profile = synchronized_profile((2.0, 0.1), (1.0, 10.0), (10.0, 10.0))
        solo = Trapezoid(2.0, 1.0, 10.0)
        assert math.isclose(profile.duration, solo.duration, rel_tol=1e-9)

    @given(
        st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=6),
        st.floats(0.1, 1.0),
    )
    @settings(max_examples=50)
    def test_each_joint_obeys_scaled_speed(self, deltas, scale):
        v_limits = [1.0] * len(deltas)
        a_limits = [4.0] * len(deltas)
        profile = synchronized_profile(deltas, v_limits, a_limits, speed_scale=scale)
        if profile.duration == 0.0:
            return
        times = np.linspace(0.0, profile.duration, 100)
        s = np.array([profile.fraction(t) for t in times])
        for d in deltas:
            speeds = np.abs(np.diff(s * d)) / np.diff(times)
            assert speeds.max() <= 1.0 * scale + 1e-6

    def test_zero_motion_is_zero_duration(self):
        assert synchronized_profile((0.0, 0.0), (1.0, 1.0), (1.0, 1.0)).duration == 0.0

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            synchronized_profile((1.0,), (1.0,), (1.0,), speed_scale=0.0)


class TestJointMove:
    def test_endpoints_and_quantized_duration(self, scene):
        robot = scene.robot
        q1 = tuple(v + 0.3 for v in robot.home)
        move = make_joint_move(robot, robot.home, q1)
        assert np.allclose(move.sample(0.0), robot.home)
        assert np.allclose(move.sample(move.duration_s), q1)
        assert move.duration_us == round(move.profile.duration * 1e6)

    def test_samples_respect_speed_limits(self, scene):
        robot = scene.robot
        q1 = tuple(v + 0.8 for v in robot.home)
        move = make_joint_move(robot, robot.home, q1)
        times = np.linspace(0.0, move.duration_s, 120)
        samples = np.array([move.sample(t) for t in times])
        rates = np.abs(np.diff(samples, axis=0)) / np.diff(times)[:, None]
        assert np.all(rates.max(axis=0) <= np.asarray(robot.max_joint_speed) + 1e-6)

    def test_speed_scale_stretches_duration(self, scene):
        robot = scene.robot
        # scale derates velocity only; pick one low enough to bite on a
        # short, acceleration-limited motion
        q1 = tuple(v + 0.5 for v in robot.home)
        fast = make_joint_move(robot, robot.home, q1, speed_scale=1.0)
        slow = make_joint_move(robot, robot.home, q1, speed_scale=0.1)
        assert slow.duration_s > fast.duration_s


class TestLinearMove:
    def test_tcp_path_is_straight(self, scene):
        robot = scene.robot
        start = forward_kinematics(robot, robot.home)
        target = Pose((start.position[0], start.position[1] + 80.0, start.position[2]), start.orientation)
        move = make_linear_move(robot, robot.home, target, speed=100.0)
        p0, p1 = np.asarray(start.position), np.asarray(target.position)
        direction = (p1 - p0) / np.linalg.norm(p1 - p0)
        for t in np.linspace(0.0, move.duration_s, 30):
            p = np.asarray(move.tcp_at(t).position)
            off_axis = (p - p0) - np.dot(p - p0, direction) * direction
            assert np.linalg.norm(off_axis) < 1e-6

    def test_orientation_interpolates_monotonically(self, scene):
        robot = scene.robot
        start = forward_kinematics(robot, robot.home)
        twist = quat_from_axis_angle((0, 0, 1), 0.6)
        target = Pose.make(start.position, quat_mul(twist, start.orientation))
        move = make_linear_move(robot, robot.home, target, speed=100.0)
        angles = [
            rotation_angle_between(start.orientation, move.tcp_at(t).orientation)
            for t in np.linspace(0.0, move.duration_s, 20)
        ]
        assert all(b >= a - 1e-9 for a, b in zip(angles, angles[1:]))
        assert math.isclose(angles[-1], 0.6, abs_tol=1e-6)

    def test_joint_samples_follow_tcp(self, scene):
        robot = scene.robot
        start = forward_kinematics(robot, robot.home)
        target = Pose((start.position[0] + 50.0, start.position[1], start.position[2]), start.orientation)
        move = make_linear_move(robot, robot.home, target, speed=100.0)
        for t in np.linspace(0.0, move.duration_s, 10):
            fk = forward_kinematics(robot, tuple(move.sample(t)))
            want = move.tcp_at(t)
            assert np.linalg.norm(np.asarray(fk.position) - want.position) < 2.0


class TestSampleTimes:
    def test_grid_is_tick_spaced_and_hits_end(self):
        times = sample_times_us(3 * TICK_US + 100)
        assert times[0] == 0
        assert times[-1] == 3 * TICK_US + 100
        assert all(b - a <= TICK_US for a, b in zip(times, times[1:]))


class TestVirtualWall:
    def test_normal_is_normalized(self):
        wall = VirtualWall((0, 0, 0), (3.0, 0.0, 0.0))
        assert wall.normal == (1.0, 0.0, 0.0)

    def test_rejects_zero_normal(self):
        with pytest.raises(ValueError):
            VirtualWall((0, 0, 0), (0.0, 0.0, 0.0))

    @given(st.floats(-100.0, 100.0))
    def test_violation_sign_matches_halfspace(self, x):
        wall = VirtualWall((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
        assert wall.violates((x, 5.0, -3.0)) == (x > 0.0)

    def test_wall_violation_flags_crossing_move(self, scene):
        robot = scene.robot
        start = forward_kinematics(robot, robot.home)
        target = Pose((start.position[0] + 120.0, start.position[1], start.position[2]), start.orientation)
        move = make_linear_move(robot, robot.home, target, speed=100.0)
        crossing = VirtualWall(
            (start.position[0] + 60.0, 0.0, 0.0), (1.0, 0.0, 0.0)
        )
        clear = VirtualWall((start.position[0] + 500.0, 0.0, 0.0), (1.0, 0.0, 0.0))
        assert wall_violation(move, [crossing]) is not None
        assert wall_violation(move, [clear]) is None
