"""Design-phase analyses: reach/placement grids, grasp envelope, swept
volume and collision checks.

Everything here is a pure function over immutable scene values, so grid
cells and trajectory samples can be evaluated independently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Contact, PlacedShape, Pose, contacts_between
from .kinematics import (
    JointState,
    forward_kinematics,
    inverse_kinematics,
    robot_link_shapes,
    shoulder_point,
    within_rated_reach,
)
from .scene import (
    BehaviorState,
    HumanModel,
    ResourceKind,
    RobotSpec,
    Scene,
    derive_human_reach,
    human_body_shapes,
)
from .trajectory import (
    Move,
    VirtualWall,
    WallError,
    make_joint_move,
    plan_move,
    sample_times_us,
)

log = logging.getLogger(__name__)

DEFAULT_VOXEL_MM = 10.0


@dataclass(frozen=True)
class CandidateGrid:
    """Regular grid of candidate base placements (cell centers)."""

    origin: tuple[float, float, float]  # mm, center of cell (0,0,0)
    shape: tuple[int, int, int]
    cell_size: float  # mm

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        if any(n < 1 for n in self.shape):
            raise ValueError("grid shape must be at least 1 cell per axis")

    def center(self, idx) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(idx, dtype=float) * self.cell_size


@dataclass
class ReachGrid:
    """Reachability of a fixed target set per candidate base placement."""

    origin: tuple[float, float, float]
    cell_size: float
    cells: np.ndarray  # bool, indexed [ix, iy, iz]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.cells.shape)

    def reachable_count(self) -> int:
        return int(np.count_nonzero(self.cells))


def reach_and_placement(scene: Scene, targets, grid: CandidateGrid) -> ReachGrid:
    """Mark every grid cell from which the robot reaches all targets.

    Targets are world poses; each candidate cell re-bases the robot (same
    orientation as the current base) and checks IK for every target.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("reach analysis needs at least one target")
    robot = scene.robot
    base_q = scene.robot_base_pose().orientation
    cells = np.zeros(grid.shape, dtype=bool)
    for ix in range(grid.shape[0]):
        for iy in range(grid.shape[1]):
            for iz in range(grid.shape[2]):
                base = Pose(tuple(grid.center((ix, iy, iz))), base_q)
                inv = base.inverse()
                ok = True
                for target in targets:
                    local = inv.compose(target)
                    if not within_rated_reach(robot, local.position):
                        ok = False
                        break
                    if not inverse_kinematics(robot, local, seed=robot.home).success:
                        ok = False
                        break
                cells[ix, iy, iz] = ok
    return ReachGrid(grid.origin, grid.cell_size, cells)


@dataclass(frozen=True)
class GraspEnvelope:
    """Region a human reaches without bending: a sphere sector.

    Inside means within arm reach of the shoulder, at or above table
    height, and on the facing side of the torso plane.
    """

    shoulder: tuple[float, float, float]  # mm, world
    radius: float  # mm
    facing: tuple[float, float, float]  # unit, world
    min_z: float  # mm, table height

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        s = np.asarray(self.shoulder)
        if p[2] < self.min_z:
            return False
        if float(np.linalg.norm(p - s)) > self.radius:
            return False
        return float(np.dot(p - s, np.asarray(self.facing))) >= 0.0


def grasp_envelope(human: HumanModel, table_height: float = 0.0) -> GraspEnvelope:
    reach_cm, _ = derive_human_reach(human)
    return GraspEnvelope(
        shoulder=tuple(float(v) for v in human.shoulder_point()),
        radius=reach_cm * 10.0,
        facing=tuple(float(v) for v in human.facing()),
        min_z=table_height,
    )


def scene_table_height(scene: Scene) -> float:
    """Top surface of the tallest table resource; 0 when there is none."""
    tops = []
    for r in scene.resources:
        if r.kind is not ResourceKind.TABLE:
            continue
        for s in r.placed_shapes():
            box = s.as_box()
            if box is not None:
                pose, half = box
                tops.append(float(pose.p[2] + half[2]))
    return max(tops, default=0.0)


# ---------------------------------------------------------------------------
# trajectories and swept volume
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Timed joint-space path with tool actions and wall constraints."""

    waypoints: tuple[JointState, ...]
    timing: tuple[float, ...]  # per-segment duration, s
    tool_actions: tuple[tuple[int, str], ...] = ()
    constraints: tuple[VirtualWall, ...] = ()
    moves: tuple[Move, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.timing) != max(len(self.waypoints) - 1, 0):
            raise ValueError("need one duration per waypoint pair")
        if any(d < 0 for d in self.timing):
            raise ValueError("segment durations must be >= 0")

    @property
    def duration_s(self) -> float:
        return float(sum(self.timing))


def plan_trajectory(
    robot: RobotSpec,
    key_positions,
    walls=(),
    seed=None,
    base_pose: Pose | None = None,
    speed_scale: float = 1.0,
) -> Trajectory:
    """Joint-space path through IK solutions of the key positions.

    Key positions are poses in the robot base frame (or world when
    base_pose is given).  Trapezoidal profiles synchronized to the
    slowest joint set the timing; every sampled flange position must stay
    on the allowed side of every wall.
    """
    key_positions = list(key_positions)
    if not key_positions:
        raise ValueError("need at least one key position")
    inv = base_pose.inverse() if base_pose is not None else None
    q = tuple(seed) if seed is not None else robot.home
    waypoints = [JointState(q, 0.0)]
    moves: list[Move] = []
    timing: list[float] = []
    clock = 0.0
    for i, pose in enumerate(key_positions):
        local = inv.compose(pose) if inv is not None else pose
        result = inverse_kinematics(robot, local, seed=q)
        if not result.success:
            raise ValueError(
                f"key position {i} not reachable: {result.reason or 'no IK solution'} "
                f"(best residual {result.position_error:.2f} mm)"
            )
        move = plan_move(robot, q, result.angles, walls=walls, speed_scale=speed_scale)
        q = tuple(result.angles)
        clock += move.duration_s
        waypoints.append(JointState(q, clock))
        moves.append(move)
        timing.append(move.duration_s)
    return Trajectory(tuple(waypoints), tuple(timing), constraints=tuple(walls), moves=tuple(moves))


@dataclass
class SweptVolume:
    """Voxel occupancy of the robot over a trajectory."""

    origin: tuple[float, float, float]
    voxel_size: float
    voxels: set[tuple[int, int, int]]

    def index_of(self, point) -> tuple[int, int, int]:
        p = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.voxel_size
        return tuple(int(v) for v in np.floor(p))

    def contains_point(self, point) -> bool:
        return self.index_of(point) in self.voxels

    def count(self) -> int:
        return len(self.voxels)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.array(sorted(self.voxels))
        lo = np.asarray(self.origin) + idx.min(axis=0) * self.voxel_size
        hi = np.asarray(self.origin) + (idx.max(axis=0) + 1) * self.voxel_size
        return lo, hi


def _voxelize_capsule(a, b, radius, origin, size, out: set) -> None:
    """Voxels whose center lies inside the capsule [a,b]+radius."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    o = np.asarray(origin, dtype=float)
    lo = np.floor((np.minimum(a, b) - radius - o) / size).astype(int)
    hi = np.ceil((np.maximum(a, b) + radius - o) / size).astype(int)
    xs = np.arange(lo[0], hi[0] + 1)
    ys = np.arange(lo[1], hi[1] + 1)
    zs = np.arange(lo[2], hi[2] + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    centers = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) * size + o + size / 2.0
    d = b - a
    L2 = float(d @ d)
    if L2 < 1e-12:
        dist = np.linalg.norm(centers - a, axis=1)
    else:
        t = np.clip((centers - a) @ d / L2, 0.0, 1.0)
        dist = np.linalg.norm(centers - (a + t[:, None] * d), axis=1)
    idx = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)[dist <= radius]
    out.update(map(tuple, idx.tolist()))


def swept_volume(
    robot: RobotSpec,
    trajectory: Trajectory,
    base_pose: Pose | None = None,
    voxel_size: float = DEFAULT_VOXEL_MM,
    origin=(0.0, 0.0, 0.0),
) -> SweptVolume:
    """Union of link capsules sampled along the trajectory at 5 ms steps.

    A trajectory with no segments voxelizes the static robot at its first
    waypoint.
    """
    voxels: set[tuple[int, int, int]] = set()

    def add_state(q) -> None:
        for shape in robot_link_shapes(robot, q, base_pose):
            cap = shape.as_capsule()
            if cap is not None:
                a, b, r = cap
                _voxelize_capsule(a, b, r, origin, voxel_size, voxels)

    if not trajectory.moves:
        add_state(trajectory.waypoints[0].angles)
    for move in trajectory.moves:
        for t_us in sample_times_us(move.duration_us):
            add_state(move.sample(t_us / 1e6))
    return SweptVolume(tuple(float(v) for v in origin), voxel_size, voxels)


def trajectory_from_moves(moves, walls=()) -> Trajectory:
    """Wrap a move chain as a Trajectory (waypoints at move boundaries)."""
    moves = list(moves)
    if not moves:
        raise ValueError("need at least one move")
    clock = 0.0
    waypoints = [JointState(tuple(moves[0].q_start), 0.0)]
    timing = []
    for m in moves:
        clock += m.duration_s
        waypoints.append(JointState(tuple(m.q_end), clock))
        timing.append(m.duration_s)
    return Trajectory(tuple(waypoints), tuple(timing), constraints=tuple(walls), moves=tuple(moves))


# ---------------------------------------------------------------------------
# collision
# ---------------------------------------------------------------------------

def check_collision(scene: Scene, behavior: BehaviorState | None = None) -> list[Contact]:
    """Contacts of the posed robot against the human and static resources.

    The robot's own pedestal resource is excluded (the arm legitimately
    rises out of it); human-versus-static contact is not a robot hazard
    and is not reported.
    """
    b = behavior if behavior is not None else scene.behavior
    base = scene.robot_base_pose()
    links = robot_link_shapes(scene.robot, b.joint_angles, base)
    human = human_body_shapes(scene.human, b.human_posture)
    statics = [
        s
        for r in scene.resources
        if r.kind not in (ResourceKind.HUMAN, ResourceKind.ROBOT)
        for s in r.placed_shapes()
    ]
    contacts = contacts_between(links, human) + contacts_between(links, statics)
    contacts.sort(key=lambda c: (c.owner_a, c.owner_b, -c.depth))
    return contacts
