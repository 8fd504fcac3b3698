"""Design-phase analyses: reach grids, envelopes, sweeps, collision checks."""

import math
import random
from dataclasses import replace

import numpy as np
import pytest

from twincell.analysis import (
    CandidateGrid,
    Trajectory,
    check_collision,
    grasp_envelope,
    plan_trajectory,
    reach_and_placement,
    scene_table_height,
    swept_volume,
    trajectory_from_moves,
)
from twincell.geometry import Pose
from twincell.kinematics import (
    JointState,
    forward_kinematics,
    inverse_kinematics,
    robot_link_shapes,
)
from twincell.scene import BehaviorState, ResourceKind
from twincell.trajectory import Trapezoid, VirtualWall, make_joint_move, sample_times_us


def _random_joint_path(robot, rng, n=3, span=0.6):
    qs = [robot.home]
    for _ in range(n):
        qs.append(tuple(v + rng.uniform(-span, span) for v in robot.home))
    return [make_joint_move(robot, a, b) for a, b in zip(qs, qs[1:])]


class TestReachGrid:
    def test_matches_per_cell_ik(self, scene):
        """The grid must agree with running IK by hand at each cell."""
        robot = scene.robot
        targets = [t.place for t in scene.tasks if t.id in ("place_cell_a", "place_cell_b")]
        base = scene.robot_base_pose()
        grid = CandidateGrid(
            origin=(base.position[0] - 200.0, base.position[1] - 200.0, base.position[2]),
            shape=(3, 3, 1),
            cell_size=200.0,
        )
        result = reach_and_placement(scene, targets, grid)
        assert result.cells.shape == (3, 3, 1)
        for ix in range(3):
            for iy in range(3):
                candidate = Pose(tuple(grid.center((ix, iy, 0))), base.orientation)
                ok = all(
                    inverse_kinematics(
                        robot, candidate.inverse().compose(t), seed=robot.home
                    ).success
                    for t in targets
                )
                assert result.cells[ix, iy, 0] == ok, (ix, iy)

    def test_current_base_cell_reaches_the_robot_tasks(self, scene, plan):
        base = scene.robot_base_pose()
        targets = []
        for tid in plan.robot_task_ids():
            t = scene.task(tid)
            targets += [p for p in (t.pick, t.place) if p is not None]
        grid = CandidateGrid(origin=base.position, shape=(1, 1, 1), cell_size=50.0)
        result = reach_and_placement(scene, targets, grid)
        assert result.reachable_count == 1

    def test_needs_targets(self, scene):
        grid = CandidateGrid(origin=(0.0, 0.0, 0.0), shape=(1, 1, 1), cell_size=100.0)
        with pytest.raises(ValueError, match="target"):
            reach_and_placement(scene, [], grid)


class TestGraspEnvelope:
    def test_geometry_of_the_sector(self, scene):
        env = grasp_envelope(scene.human, scene_table_height(scene))
        s = np.asarray(env.shoulder)
        f = np.asarray(env.facing)
        inside = s + f * (env.radius * 0.5)
        assert env.contains(inside)
        assert not env.contains(s + f * (env.radius + 1.0))
        assert not env.contains(s - f * (env.radius * 0.5))
        below = inside.copy()
        below[2] = env.min_z - 1.0
        assert not env.contains(below)

    def test_table_height_is_the_floor(self, scene):
        h = scene_table_height(scene)
        assert h > 0.0
        tops = []
        for r in scene.resources:
            if r.kind is ResourceKind.TABLE:
                for ps in r.placed_shapes():
                    pose, half = ps.as_box()
                    tops.append(pose.p[2] + half[2])
        assert h == pytest.approx(max(tops))

    def test_fixture_stations_sit_inside_the_envelope(self, scene, plan):
        env = grasp_envelope(scene.human, scene_table_height(scene))
        for tid in ("fit_clips", "seat_board", "close_cover"):
            assert env.contains(scene.task(tid).place.position), tid
        # the prep bench needs a step sideways, so it falls outside the
        # no-bend sector by design
        assert not env.contains(scene.task("prep_harness").place.position)


class TestPlanTrajectory:
    def test_two_positions_duration_is_the_trapezoid_time(self, scene):
        robot = scene.robot
        start_pose = forward_kinematics(robot, robot.home)
        q1 = tuple(v + 0.4 for v in robot.home)
        traj = plan_trajectory(robot, [start_pose, forward_kinematics(robot, q1)])
        # the synchronized profile is pinned by the slowest joint; a
        # uniform 0.4 rad delta makes that joint analytic
        worst = max(
            Trapezoid(0.4, v, a).duration
            for v, a in zip(robot.max_joint_speed, robot.max_joint_accel)
        )
        assert traj.timing[1] == pytest.approx(worst, rel=1e-6)
        assert len(traj.waypoints) == 3

    def test_samples_respect_joint_and_speed_limits(self, scene):
        robot = scene.robot
        rng = random.Random(11)
        targets = []
        for _ in range(3):
            q = tuple(v + rng.uniform(-0.5, 0.5) for v in robot.home)
            targets.append(forward_kinematics(robot, q))
        traj = plan_trajectory(robot, targets)
        for move in traj.moves:
            prev_q, prev_t = None, None
            for t_us in sample_times_us(move.duration_us):
                q = move.sample(t_us / 1e6)
                assert robot.within_limits(q)
                if prev_q is not None and t_us > prev_t:
                    dt = (t_us - prev_t) / 1e6
                    for qd, qp, vmax in zip(q, prev_q, robot.max_joint_speed):
                        assert abs(qd - qp) / dt <= vmax * 1.01
                prev_q, prev_t = q, t_us

    def test_unreachable_key_position_is_an_error(self, scene):
        robot = scene.robot
        far = Pose((2000.0, 0.0, 0.0))
        with pytest.raises(ValueError, match="not reachable"):
            plan_trajectory(robot, [far])

    def test_wall_in_the_way_is_an_error(self, scene):
        robot = scene.robot
        start = forward_kinematics(robot, robot.home)
        q1 = tuple(v + 0.8 for v in robot.home)
        goal = forward_kinematics(robot, q1)
        # normal points at the forbidden side, i.e. toward the goal
        mid = 0.5 * (np.asarray(start.position) + np.asarray(goal.position))
        normal = np.asarray(goal.position) - np.asarray(start.position)
        wall = VirtualWall(tuple(mid), tuple(normal / np.linalg.norm(normal)))
        assert not wall.violates(start.position)
        assert wall.violates(goal.position)
        with pytest.raises(ValueError, match="wall"):
            plan_trajectory(robot, [start, goal], walls=(wall,))


class TestSweptVolume:
    def test_contains_every_playback_sample(self, scene):
        rng = random.Random(7)
        robot = scene.robot
        for case in range(4):
            moves = _random_joint_path(robot, rng, n=2)
            traj = trajectory_from_moves(moves)
            vol = swept_volume(robot, traj, voxel_size=40.0)
            for move in traj.moves:
                for t_us in sample_times_us(move.duration_us):
                    q = move.sample(t_us / 1e6)
                    for shape in robot_link_shapes(robot, q):
                        cap = shape.as_capsule()
                        if cap is None:
                            continue
                        a, b, _ = cap
                        assert vol.contains_point(a)
                        assert vol.contains_point(b)
                        assert vol.contains_point(0.5 * (np.asarray(a) + np.asarray(b)))

    def test_static_trajectory_voxelizes_the_pose(self, scene):
        robot = scene.robot
        traj = Trajectory((JointState(robot.home, 0.0),), ())
        vol = swept_volume(robot, traj, voxel_size=50.0)
        assert vol.count() > 0
        for shape in robot_link_shapes(robot, robot.home):
            cap = shape.as_capsule()
            if cap is not None:
                assert vol.contains_point(cap[0])
                assert vol.contains_point(cap[1])

    def test_base_pose_shifts_the_volume(self, scene):
        robot = scene.robot
        traj = Trajectory((JointState(robot.home, 0.0),), ())
        here = swept_volume(robot, traj, voxel_size=50.0)
        there = swept_volume(
            robot, traj, base_pose=Pose((500.0, 0.0, 0.0)), voxel_size=50.0
        )
        lo_a, _ = here.bounds()
        lo_b, _ = there.bounds()
        assert lo_b[0] - lo_a[0] == pytest.approx(500.0, abs=50.0)


class TestCheckCollision:
    def test_case_pose_reports_only_the_base_resting_on_the_table(self, scene):
        # the base link capsule rounds past the mount plane, so it shows
        # up as a resting contact; anything else would be a layout fault
        contacts = check_collision(scene)
        assert {(c.owner_a, c.owner_b) for c in contacts} <= {("robot/link1", "table")}

    def test_reported_pairs_are_real_penetrations(self, scene):
        # fold the arm into the table to force contact
        bent = BehaviorState(
            joint_angles=(0.0, 0.5, 1.5, 0.0, 0.0, 0.0),
            human_posture=scene.behavior.human_posture,
            placements=scene.behavior.placements,
        )
        contacts = check_collision(scene, bent)
        assert contacts
        for c in contacts:
            assert c.depth > 0.0
            assert c.owner_a != c.owner_b

    def test_pedestal_contact_is_not_reported(self, scene):
        for c in check_collision(scene):
            assert scene.robot_id not in (c.owner_a, c.owner_b)

    def test_empty_when_everything_is_far_apart(self, scene):
        # lift the arm off the table and push the human a room away so
        # every pairwise distance is positive
        from twincell.scene import place_resource

        base = scene.robot_base_pose()
        lifted = place_resource(
            scene, scene.robot_id, Pose((base.position[0], base.position[1], 400.0), base.orientation)
        )
        far = place_resource(lifted, scene.human_id, Pose((5000.0, 5000.0, 0.0)))
        assert check_collision(far) == []


class TestTrajectoryFromMoves:
    def test_waypoints_follow_move_boundaries(self, scene):
        rng = random.Random(3)
        moves = _random_joint_path(scene.robot, rng, n=3)
        traj = trajectory_from_moves(moves)
        assert len(traj.waypoints) == 4
        assert traj.waypoints[0].angles == tuple(moves[0].q_start)
        clock = 0.0
        for wp, move in zip(traj.waypoints[1:], moves):
            clock += move.duration_s
            assert wp.angles == tuple(move.q_end)
            assert wp.timestamp == pytest.approx(clock)
        assert traj.duration_s == pytest.approx(clock)

    def test_empty_chain_rejected(self):
        with pytest.raises(ValueError, match="move"):
            trajectory_from_moves([])
