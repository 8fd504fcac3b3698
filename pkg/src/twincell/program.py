"""Robot programs: generation from the twin, canonical serialization,
and virtual-wall application.

The binary form is the single source of truth for transfer between the
twins (little-endian, length-checked); the text projection exists for
humans and diffs.  MoveL instructions carry both the Cartesian target
and the joint solution the twin planned, so both interpreters execute
identical motion without re-solving IK.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, quat_normalize, signed_distance
from .kinematics import forward_kinematics, inverse_kinematics, robot_link_shapes
from .scene import RobotSpec, Scene
from .trajectory import (
    DEFAULT_TCP_SPEED,
    VirtualWall,
    WallError,
    make_joint_move,
    make_linear_move,
    plan_move,
    wall_violation,
)

log = logging.getLogger(__name__)

MAGIC = b"RPGM"
FORMAT_VERSION = 1

DEFAULT_FORCE_LIMIT_N = 10.0
GRIPPER_ACTUATE_S = 0.4

OP_MOVEJ = 1
OP_MOVEL = 2
OP_GRIPPER = 3
OP_TOOL = 4
OP_WAIT = 5
OP_SETWALL = 6
OP_LOG = 7
OP_FORCEGUARD = 8

LOG_FORCE = 1
LOG_IDLE = 2
LOG_COMPLETED = 3
LOG_KIND_NAMES = {LOG_FORCE: "force", LOG_IDLE: "idle_wait", LOG_COMPLETED: "completed"}


class ProgramError(ValueError):
    pass


class ProgramParseError(ProgramError):
    """Malformed program bytes; message names the first bad offset."""


@dataclass(frozen=True)
class MoveJ:
    target: tuple[float, ...]
    speed_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        if not 0.0 < self.speed_scale <= 1.0:
            raise ProgramError(f"MoveJ speed_scale {self.speed_scale} outside (0,1]")


@dataclass(frozen=True)
class MoveL:
    target: Pose
    speed: float = DEFAULT_TCP_SPEED  # mm/s
    joints: tuple[float, ...] = ()  # planned solution at the target

    def __post_init__(self):
        if self.speed <= 0:
            raise ProgramError(f"MoveL speed {self.speed} must be > 0")
        object.__setattr__(self, "joints", tuple(float(v) for v in self.joints))


@dataclass(frozen=True)
class GripperSet:
    mode: str  # "open" | "close" | "width"
    width: float = 0.0  # mm, for mode "width"

    def __post_init__(self):
        if self.mode not in ("open", "close", "width"):
            raise ProgramError(f"GripperSet mode {self.mode!r}")
        if self.mode == "width" and self.width <= 0:
            raise ProgramError("GripperSet width must be > 0")


@dataclass(frozen=True)
class ToolAction:
    action: str  # "start" | "stop"

    def __post_init__(self):
        if self.action not in ("start", "stop"):
            raise ProgramError(f"ToolAction {self.action!r}")


@dataclass(frozen=True)
class WaitSignal:
    switch: str


@dataclass(frozen=True)
class SetWall:
    wall: VirtualWall


@dataclass(frozen=True)
class LogDirective:
    record_kind: int  # LOG_FORCE | LOG_IDLE | LOG_COMPLETED

    def __post_init__(self):
        if self.record_kind not in LOG_KIND_NAMES:
            raise ProgramError(f"LogDirective kind {self.record_kind}")


@dataclass(frozen=True)
class ForceGuard:
    threshold: float = DEFAULT_FORCE_LIMIT_N  # N

    def __post_init__(self):
        if self.threshold <= 0:
            raise ProgramError("ForceGuard threshold must be > 0")


Instruction = MoveJ | MoveL | GripperSet | ToolAction | WaitSignal | SetWall | LogDirective | ForceGuard


@dataclass(frozen=True)
class RobotProgram:
    name: str
    instructions: tuple[Instruction, ...] = ()
    version: int = 1

    def walls(self) -> list[VirtualWall]:
        return [i.wall for i in self.instructions if isinstance(i, SetWall)]

    def moves(self) -> list[Instruction]:
        return [i for i in self.instructions if isinstance(i, (MoveJ, MoveL))]

    def bump(self) -> "RobotProgram":
        return replace(self, version=self.version + 1)


def validate_program(program: RobotProgram, scene: Scene | None = None) -> None:
    """Static checks: switches exist, MoveL targets clear the walls."""
    walls: list[VirtualWall] = []
    for idx, ins in enumerate(program.instructions):
        if isinstance(ins, SetWall):
            walls.append(ins.wall)
        elif isinstance(ins, MoveL):
            for wall in walls:
                if wall.violates(ins.target.position):
                    raise ProgramError(
                        f"instruction {idx}: MoveL target {ins.target.position} beyond wall"
                    )
        elif isinstance(ins, WaitSignal) and scene is not None:
            if ins.switch not in scene.switch_ids:
                raise ProgramError(f"instruction {idx}: unknown switch {ins.switch!r}")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoggingSpec:
    force: bool = True
    idle: bool = True
    completion: bool = True


@dataclass(frozen=True)
class TaskMotion:
    """Planned motion block for one robot task."""

    task_id: str
    instructions: tuple[Instruction, ...]
    duration_s: float


def _endpoint_clear(scene: Scene):
    """Predicate rejecting joint solutions whose links stand inside scene geometry.

    Pairs already touching at home are mounting contacts and stay legal.
    """
    robot = scene.robot
    base = scene.robot_base_pose()
    statics = list(scene.static_shapes())
    resting = {
        (link.owner, s.owner)
        for link in robot_link_shapes(robot, robot.home, base)
        for s in statics
        if signed_distance(link, s) < 0.0
    }

    def clear(q) -> bool:
        for link in robot_link_shapes(robot, q, base):
            for s in statics:
                if (link.owner, s.owner) in resting:
                    continue
                if signed_distance(link, s) < 0.0:
                    return False
        return True

    return clear


def _solved(robot: RobotSpec, target: Pose, seed, clear=None) -> tuple[float, ...]:
    result = inverse_kinematics(robot, target, seed=seed)
    if not result.success:
        raise ProgramError(
            f"target {target.position} not reachable ({result.reason or 'no solution'})"
        )
    if clear is None or clear(result.angles):
        return result.angles
    # reachable, but that branch of the solution space stands in the scene;
    # hunt other branches from spread-out seeds
    rng = np.random.default_rng(11)
    lo, hi = (np.asarray(side) for side in zip(*robot.joint_limits))
    for _ in range(24):
        retry = inverse_kinematics(robot, target, seed=tuple(rng.uniform(lo, hi)))
        if retry.success and clear(retry.angles):
            return retry.angles
    raise ProgramError(f"no collision-free solution for target {target.position}")


def _linear(robot: RobotSpec, q_from, target: Pose, speed: float, walls, clear=None) -> MoveL:
    joints = _solved(robot, target, q_from, clear)
    move = make_linear_move(robot, q_from, target, speed=speed, q_end=joints)
    hit = wall_violation(move, walls)
    if hit is not None:
        raise WallError(f"linear move to {target.position} crosses a wall at t={hit[0]} us")
    return MoveL(target, speed, joints)


def _block_duration(robot: RobotSpec, q_start, instructions) -> tuple[float, tuple[float, ...]]:
    """Nominal execution time of an instruction block and the exit joints."""
    q = tuple(q_start)
    total = 0.0
    for ins in instructions:
        if isinstance(ins, MoveJ):
            total += make_joint_move(robot, q, ins.target, ins.speed_scale).duration_s
            q = ins.target
        elif isinstance(ins, MoveL):
            move = make_linear_move(robot, q, ins.target, speed=ins.speed, q_end=ins.joints)
            total += move.duration_s
            q = ins.joints if ins.joints else tuple(move.q_end)
        elif isinstance(ins, GripperSet):
            total += GRIPPER_ACTUATE_S
    return total, q


def plan_pick_place(
    scene: Scene,
    task_id: str,
    walls=(),
    approach_mm: float = 60.0,
    place_speed: float = 80.0,
) -> TaskMotion:
    """Pick at the task's pick pose, place at its place pose.

    Approach points sit straight above the grasp points; descents are
    linear so the force guard sees a clean insertion axis.
    """
    task = scene.task(task_id)
    pick_world = task.pick if task.pick is not None else scene.component(task.component_id).feed_location
    if task.place is None:
        raise ProgramError(f"task {task_id!r} has no place pose")
    robot = scene.robot
    base_inv = scene.robot_base_pose().inverse()
    pick = base_inv.compose(pick_world)
    place = base_inv.compose(task.place)
    up = (0.0, 0.0, approach_mm)

    def above(p: Pose) -> Pose:
        return Pose(tuple(np.asarray(p.position) + up), p.orientation)

    ins: list[Instruction] = []
    q = tuple(scene.robot.home)
    clear = _endpoint_clear(scene)
    q_above_pick = _solved(robot, above(pick), q, clear)
    ins.append(MoveJ(q_above_pick))
    ins.append(_linear(robot, q_above_pick, pick, place_speed, walls, clear))
    ins.append(GripperSet("close"))
    q_at_pick = ins[1].joints
    ins.append(_linear(robot, q_at_pick, above(pick), place_speed, walls, clear))
    q_lift = ins[3].joints
    q_above_place = _solved(robot, above(place), q_lift, clear)
    ins.append(MoveJ(q_above_place))
    ins.append(_linear(robot, q_above_place, place, place_speed, walls, clear))
    ins.append(GripperSet("open"))
    q_at_place = ins[5].joints
    ins.append(_linear(robot, q_at_place, above(place), place_speed, walls, clear))
    duration, _ = _block_duration(robot, q, ins)
    return TaskMotion(task_id, tuple(ins), duration)


def plan_screw_run(
    scene: Scene,
    task_id: str,
    screw_points,
    walls=(),
    approach_mm: float = 50.0,
    feed_mm: float = 12.0,
    feed_speed: float = 12.0,
) -> TaskMotion:
    """Drive one screw per point: approach, start driver, feed down, stop, retract."""
    robot = scene.robot
    base_inv = scene.robot_base_pose().inverse()
    ins: list[Instruction] = []
    q = tuple(scene.robot.home)
    clear = _endpoint_clear(scene)
    for world_pose in screw_points:
        p = base_inv.compose(world_pose)
        above = Pose(tuple(np.asarray(p.position) + (0.0, 0.0, approach_mm)), p.orientation)
        entry = Pose(tuple(np.asarray(p.position) + (0.0, 0.0, feed_mm)), p.orientation)
        q_above = _solved(robot, above, q, clear)
        ins.append(MoveJ(q_above))
        ins.append(_linear(robot, q_above, entry, 60.0, walls, clear))
        ins.append(ToolAction("start"))
        ins.append(_linear(robot, ins[-2].joints, p, feed_speed, walls, clear))
        ins.append(ToolAction("stop"))
        ins.append(_linear(robot, ins[-2].joints, above, 60.0, walls, clear))
        q = ins[-1].joints
    duration, _ = _block_duration(robot, tuple(scene.robot.home), ins)
    return TaskMotion(task_id, tuple(ins), duration)


@dataclass(frozen=True)
class ProgramLayout:
    """Where each robot task's motion block sits in the instruction list."""

    blocks: tuple[tuple[str, int, int], ...]  # (task_id, start, end exclusive)
    waits: tuple[tuple[str, int], ...] = ()  # (switch, instruction index)

    def block_end_marks(self) -> dict[int, str]:
        return {end - 1: tid for tid, _, end in self.blocks}


@dataclass(frozen=True)
class ProgramBuild:
    program: RobotProgram
    layout: ProgramLayout


def derive_layout(scene: Scene, plan, program: RobotProgram) -> ProgramLayout:
    """Recover block marks for a program this scene and plan generate.

    Block boundaries between back-to-back tasks leave no structural
    trace, so the program is matched against a regeneration instead;
    walls prepended after generation shift every mark uniformly.
    Anything else is rejected rather than guessed at.
    """
    reference = generate_program(scene, plan, default_motions(scene, plan), name=program.name)
    ins = program.instructions
    base = reference.program.instructions
    shift = len(ins) - len(base)
    if shift < 0 or any(not isinstance(x, SetWall) for x in ins[:shift]) or ins[shift:] != base:
        raise ProgramError("program does not match what this scene and plan generate")
    layout = reference.layout
    return ProgramLayout(
        tuple((tid, s + shift, e + shift) for tid, s, e in layout.blocks),
        tuple((sw, idx + shift) for sw, idx in layout.waits),
    )


def screw_pattern(scene: Scene, task_id: str, count: int = 4, inset_mm: float = 6.0) -> list[Pose]:
    """Fastener positions around a task's place pose, corner-first."""
    task = scene.task(task_id)
    if task.place is None:
        raise ProgramError(f"task {task_id!r} has no place pose")
    width = scene.component(task.component_id).bounding_width
    r = max(width / 2.0 - inset_mm, 8.0)
    offsets = [(-r, -r), (r, -r), (r, r), (-r, r)][:count]
    out = []
    for dx, dy in offsets:
        p = np.asarray(task.place.position) + (dx, dy, 0.0)
        out.append(Pose(tuple(p), task.place.orientation))
    return out


PACE_TOL_S = 0.05
HANDBACK_SPEED_SCALE = 0.26


def _paced(robot: RobotSpec, motion: TaskMotion, target_s: float) -> TaskMotion:
    """Slow a block's moves so its nominal duration matches the takt.

    Collaborative operation caps motion speed well below the arm's rating;
    the planned task duration is the engineered pace.  Blocks already at
    or above the target keep their physical minimum.
    """
    if motion.duration_s >= target_s - PACE_TOL_S:
        return motion
    ins = list(motion.instructions)
    duration = motion.duration_s
    for _ in range(8):
        moving = duration - GRIPPER_ACTUATE_S * sum(isinstance(i, GripperSet) for i in ins)
        want = target_s - (duration - moving)
        if moving <= 0.0 or want <= 0.0:
            break
        f = moving / want
        ins = [
            replace(i, speed_scale=min(i.speed_scale * f, 1.0)) if isinstance(i, MoveJ)
            else replace(i, speed=i.speed * f) if isinstance(i, MoveL)
            else i
            for i in ins
        ]
        duration, _ = _block_duration(robot, robot.home, ins)
        if abs(duration - target_s) <= PACE_TOL_S:
            break
    return TaskMotion(motion.task_id, tuple(ins), duration)


def default_motions(scene: Scene, plan, walls=()) -> dict[str, TaskMotion]:
    """Motion blocks for every robot task, picked by the task's tool and paced to the takt."""
    durations = {a.task_id: a.duration_s for a in plan.assignments}
    motions: dict[str, TaskMotion] = {}
    for tid in plan.robot_task_ids():
        task = scene.task(tid)
        if task.tool == "screwdriver":
            tm = plan_screw_run(scene, tid, screw_pattern(scene, tid), walls)
        else:
            tm = plan_pick_place(scene, tid, walls)
        motions[tid] = _paced(scene.robot, tm, durations[tid])
    return motions


def generate_program(
    scene: Scene,
    plan,
    motions: dict[str, TaskMotion],
    logging_spec: LoggingSpec = LoggingSpec(),
    walls=(),
    name: str = "cell_program",
    force_limit: float = DEFAULT_FORCE_LIMIT_N,
) -> ProgramBuild:
    """Interleave task motion blocks with waits, logging and safety setup.

    The plan fixes robot task order; a task with a switch waits for it
    first (and logs the idle time).  The program ends by waiting for the
    cycle-clear switch (one whose pressing task is manual and final) and
    logging completion.
    """
    ins: list[Instruction] = []
    blocks: list[tuple[str, int, int]] = []
    wait_marks: list[tuple[str, int]] = []
    for wall in walls:
        ins.append(SetWall(wall))
    ins.append(ForceGuard(force_limit))
    if logging_spec.force:
        ins.append(LogDirective(LOG_FORCE))
    robot_tasks = plan.robot_task_ids()
    missing = [tid for tid in robot_tasks if tid not in motions]
    if missing:
        raise ProgramError(f"missing trajectory for robot tasks {missing}")
    # every inserted home precedes an operator handoff; retreat at
    # collaborative speed while the human approaches the fixture
    home = MoveJ(tuple(scene.robot.home), HANDBACK_SPEED_SCALE)
    for tid in robot_tasks:
        task = scene.task(tid)
        if task.switch is not None:
            ins.append(home)
            wait_marks.append((task.switch, len(ins)))
            ins.append(WaitSignal(task.switch))
            if logging_spec.idle:
                ins.append(LogDirective(LOG_IDLE))
        start = len(ins)
        ins.extend(motions[tid].instructions)
        blocks.append((tid, start, len(ins)))
    ins.append(home)
    terminal = [s for s in scene.switches if s.pressed_after is not None]
    if terminal:
        last = terminal[-1]
        if all(t.switch != last.id for t in scene.tasks):
            wait_marks.append((last.id, len(ins)))
            ins.append(WaitSignal(last.id))
            if logging_spec.idle:
                ins.append(LogDirective(LOG_IDLE))
    if logging_spec.completion:
        ins.append(LogDirective(LOG_COMPLETED))
    program = RobotProgram(name, tuple(ins), version=1)
    validate_program(program, scene)
    return ProgramBuild(program, ProgramLayout(tuple(blocks), tuple(wait_marks)))


def apply_virtual_wall(program: RobotProgram, wall: VirtualWall, robot: RobotSpec) -> RobotProgram:
    """Prepend a wall and verify every move target stays on the allowed side."""
    offenders = []
    for idx, instr in enumerate(program.instructions):
        if isinstance(instr, MoveL):
            if wall.violates(instr.target.position):
                offenders.append((idx, tuple(instr.target.position)))
        elif isinstance(instr, MoveJ):
            pose = forward_kinematics(robot, instr.target)
            if wall.violates(pose.position):
                offenders.append((idx, tuple(pose.position)))
    if offenders:
        listing = ", ".join(f"instruction {i} at {p}" for i, p in offenders)
        raise ProgramError(f"wall excludes existing targets: {listing}")
    return replace(
        program,
        instructions=(SetWall(wall),) + program.instructions,
        version=program.version + 1,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProgramError("string too long to serialize")
    return struct.pack("<H", len(raw)) + raw


def serialize(program: RobotProgram) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BI", FORMAT_VERSION, program.version)
    out += _pack_str(program.name)
    out += struct.pack("<I", len(program.instructions))
    for ins in program.instructions:
        if isinstance(ins, MoveJ):
            out += struct.pack("<BB", OP_MOVEJ, len(ins.target))
            out += struct.pack(f"<{len(ins.target)}d", *ins.target)
            out += struct.pack("<d", ins.speed_scale)
        elif isinstance(ins, MoveL):
            out += struct.pack("<B", OP_MOVEL)
            out += struct.pack("<3d", *ins.target.position)
            out += struct.pack("<4d", *ins.target.orientation)
            out += struct.pack("<d", ins.speed)
            out += struct.pack("<B", len(ins.joints))
            out += struct.pack(f"<{len(ins.joints)}d", *ins.joints)
        elif isinstance(ins, GripperSet):
            mode = {"open": 0, "close": 1, "width": 2}[ins.mode]
            out += struct.pack("<BBd", OP_GRIPPER, mode, ins.width)
        elif isinstance(ins, ToolAction):
            out += struct.pack("<BB", OP_TOOL, 1 if ins.action == "start" else 0)
        elif isinstance(ins, WaitSignal):
            out += struct.pack("<B", OP_WAIT) + _pack_str(ins.switch)
        elif isinstance(ins, SetWall):
            out += struct.pack("<B", OP_SETWALL)
            out += struct.pack("<3d", *ins.wall.point)
            out += struct.pack("<3d", *ins.wall.normal)
        elif isinstance(ins, LogDirective):
            out += struct.pack("<BB", OP_LOG, ins.record_kind)
        elif isinstance(ins, ForceGuard):
            out += struct.pack("<Bd", OP_FORCEGUARD, ins.threshold)
        else:
            raise ProgramError(f"cannot serialize {type(ins).__name__}")
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ProgramParseError(
                f"truncated at offset {self.pos}: need {size} bytes, have {len(self.data) - self.pos}"
            )
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def take_str(self) -> str:
        (n,) = self.take("<H")
        if self.pos + n > len(self.data):
            raise ProgramParseError(f"truncated string at offset {self.pos}")
        raw = self.data[self.pos : self.pos + n]
        self.pos += n
        return raw.decode("utf-8")


def parse(data: bytes) -> RobotProgram:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise ProgramParseError("bad magic at offset 0")
    r.pos = 4
    fmt_version, version = r.take("<BI")
    if fmt_version != FORMAT_VERSION:
        raise ProgramParseError(f"unsupported format version {fmt_version} at offset 4")
    name = r.take_str()
    (count,) = r.take("<I")
    instructions: list[Instruction] = []
    for _ in range(count):
        at = r.pos
        (op,) = r.take("<B")
        try:
            if op == OP_MOVEJ:
                (n,) = r.take("<B")
                target = r.take(f"<{n}d")
                (speed,) = r.take("<d")
                instructions.append(MoveJ(target, speed))
            elif op == OP_MOVEL:
                pos = r.take("<3d")
                quat = r.take("<4d")
                (speed,) = r.take("<d")
                (n,) = r.take("<B")
                joints = r.take(f"<{n}d")
                instructions.append(MoveL(Pose(pos, quat_normalize(quat)), speed, joints))
            elif op == OP_GRIPPER:
                mode_i, width = r.take("<Bd")
                mode = {0: "open", 1: "close", 2: "width"}.get(mode_i)
                if mode is None:
                    raise ProgramParseError(f"bad gripper mode {mode_i} at offset {at}")
                instructions.append(GripperSet(mode, width))
            elif op == OP_TOOL:
                (flag,) = r.take("<B")
                instructions.append(ToolAction("start" if flag else "stop"))
            elif op == OP_WAIT:
                instructions.append(WaitSignal(r.take_str()))
            elif op == OP_SETWALL:
                point = r.take("<3d")
                normal = r.take("<3d")
                instructions.append(SetWall(VirtualWall(point, normal)))
            elif op == OP_LOG:
                (kind,) = r.take("<B")
                instructions.append(LogDirective(kind))
            elif op == OP_FORCEGUARD:
                (threshold,) = r.take("<d")
                instructions.append(ForceGuard(threshold))
            else:
                raise ProgramParseError(f"unknown opcode {op} at offset {at}")
        except ProgramError as e:
            if isinstance(e, ProgramParseError):
                raise
            raise ProgramParseError(f"invalid instruction at offset {at}: {e}") from None
    if r.pos != len(data):
        raise ProgramParseError(f"{len(data) - r.pos} trailing bytes at offset {r.pos}")
    return RobotProgram(name, tuple(instructions), version)


def text_projection(program: RobotProgram) -> str:
    """Readable one-instruction-per-line rendering for diffs."""
    lines = [f"program {program.name} v{program.version}"]
    for i, ins in enumerate(program.instructions):
        if isinstance(ins, MoveJ):
            joints = " ".join(f"{v:.5f}" for v in ins.target)
            lines.append(f"{i:4d}  movej  [{joints}] scale={ins.speed_scale:g}")
        elif isinstance(ins, MoveL):
            x, y, z = ins.target.position
            lines.append(f"{i:4d}  movel  ({x:.1f}, {y:.1f}, {z:.1f}) mm at {ins.speed:g} mm/s")
        elif isinstance(ins, GripperSet):
            extra = f" {ins.width:g} mm" if ins.mode == "width" else ""
            lines.append(f"{i:4d}  grip   {ins.mode}{extra}")
        elif isinstance(ins, ToolAction):
            lines.append(f"{i:4d}  tool   {ins.action}")
        elif isinstance(ins, WaitSignal):
            lines.append(f"{i:4d}  wait   {ins.switch}")
        elif isinstance(ins, SetWall):
            lines.append(f"{i:4d}  wall   at {ins.wall.point} normal {ins.wall.normal}")
        elif isinstance(ins, LogDirective):
            lines.append(f"{i:4d}  log    {LOG_KIND_NAMES[ins.record_kind]}")
        elif isinstance(ins, ForceGuard):
            lines.append(f"{i:4d}  guard  {ins.threshold:g} N")
    return "\n".join(lines) + "\n"
