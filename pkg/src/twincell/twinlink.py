"""Connectivity between the digital twin and the physical cell, plus a
deterministic emulator standing in for the physical side.

The emulator interprets robot programs on a sequential clock with a
stochastic operator; the sync session mirrors its frame stream back
into twin state, dropping stale frames and flagging a dead link when
heartbeats stop.  Virtual commissioning replays a program against the
static scene (plus any hypothesized obstacles) and reports collisions.
"""

from __future__ import annotations

import logging
import socket
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import AssemblyPlan, HUMAN
from .datalog import (
    LogRecord,
    LogWriter,
    RECORD_CYCLE,
    RECORD_TRIP,
    RECORD_WAIT,
)
from .geometry import PlacedShape, aabb, signed_distance
from .kinematics import robot_link_shapes
from .program import (
    GRIPPER_ACTUATE_S,
    LOG_KIND_NAMES,
    ForceGuard,
    GripperSet,
    LogDirective,
    MoveJ,
    MoveL,
    ProgramBuild,
    ProgramError,
    RobotProgram,
    SetWall,
    ToolAction,
    WaitSignal,
)
from .protocol import (
    Ack,
    ForceEvent,
    FrameDecoder,
    GripperState,
    Heartbeat,
    JointState as JointStateMsg,
    LogEvent,
    Message,
    SwitchEvent,
    encode_frame,
)
from .scene import Scene
from .simulate import (
    DeadlockError,
    DeadlockReport,
    GRIPPER_US,
    ProgramTrace,
    TRIP_PENALTY_US,
    TraceEvent,
    VariationModel,
    us_of,
)
from .trajectory import make_joint_move, make_linear_move

log = logging.getLogger(__name__)

MAX_STREAM_RATE_HZ = 200
DEFAULT_STREAM_RATE_HZ = 10
DEFAULT_HEARTBEAT_MS = 500
HEARTBEAT_MISS_LIMIT = 3


class TwinLinkError(Exception):
    pass


class EmulatorError(TwinLinkError):
    pass


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

class LoopbackTransport:
    """In-memory byte pipe; ends are created as a connected pair."""

    def __init__(self):
        self._rx: deque[bytes] = deque()
        self._peer: "LoopbackTransport | None" = None
        self.closed = False

    @classmethod
    def pair(cls) -> tuple["LoopbackTransport", "LoopbackTransport"]:
        a, b = cls(), cls()
        a._peer, b._peer = b, a
        return a, b

    def send(self, data: bytes) -> None:
        if self.closed or self._peer is None or self._peer.closed:
            raise TwinLinkError("transport closed")
        self._peer._rx.append(bytes(data))

    def recv(self) -> bytes:
        out = b"".join(self._rx)
        self._rx.clear()
        return out

    def close(self) -> None:
        self.closed = True


class TcpTransport:
    """Thin non-blocking wrapper over a connected TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setblocking(False)
        self.closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> "TcpTransport":
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(sock)

    @classmethod
    def accept_one(cls, port: int, host: str = "127.0.0.1", timeout: float = 5.0):
        """Listen, accept a single peer, return (transport, bound port)."""
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        server.settimeout(timeout)
        bound = server.getsockname()[1]
        return server, bound

    @classmethod
    def from_listener(cls, server: socket.socket) -> "TcpTransport":
        conn, _ = server.accept()
        server.close()
        return cls(conn)

    def send(self, data: bytes) -> None:
        if self.closed:
            raise TwinLinkError("transport closed")
        self._sock.setblocking(True)
        try:
            self._sock.sendall(data)
        finally:
            self._sock.setblocking(False)

    def recv(self) -> bytes:
        chunks = []
        while True:
            try:
                chunk = self._sock.recv(65536)
            except BlockingIOError:
                break
            if not chunk:
                break
            chunks.append(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        self.closed = True
        self._sock.close()


# ---------------------------------------------------------------------------
# sequential program interpreter (the physical side's control loop)
# ---------------------------------------------------------------------------

_CHAIN_RANK = 1e9  # instruction-chain events sort after every press at a tie


def emulate_program(
    scene: Scene,
    program: RobotProgram,
    operator=(),
    trips=(),
    start_joints=None,
    press_resolver=None,
    block_marks: dict[int, str] | None = None,
    on_sample=None,
) -> ProgramTrace:
    """Run one program cycle on a sequential clock.

    The scripted form (``operator`` as absolute (t_us, switch) presses)
    mirrors the twin's event-queue playback, tie for tie: presses sort
    before instruction events at the same microsecond, and a wait ends
    immediately after the press that releases it.  A ``press_resolver``
    callback instead decides press times on demand, which is how the
    stochastic operator hooks in.  ``block_marks`` maps instruction
    indices to task ids reported back through the resolver.
    """
    robot = scene.robot
    q = tuple(start_joints if start_joints is not None else robot.home)
    t = 0
    guard = None
    trip_count = 0
    move_ordinal = 0
    chain = [0]
    keyed: list[tuple[int, float, TraceEvent]] = []
    logs: list[tuple[int, str]] = []
    waits: list[tuple[str, int]] = []
    marks: dict[str, int] = {}
    trip_at = {int(o): float(f) for o, f in trips}

    scripted: dict[str, int] = {}
    press_rank: dict[str, float] = {}
    for t_us, sid in sorted(operator):
        if sid not in scripted:
            scripted[sid] = int(t_us)
            press_rank[sid] = float(len(press_rank))
            keyed.append((int(t_us), press_rank[sid], TraceEvent(int(t_us), "switch", sid)))

    def emit(at: int, kind: str, detail: str, rank: float | None = None) -> None:
        if rank is None:
            chain[0] += 1
            rank = _CHAIN_RANK + chain[0]
        keyed.append((at, rank, TraceEvent(at, kind, detail)))

    for index, ins in enumerate(program.instructions):
        if isinstance(ins, (MoveJ, MoveL)):
            if isinstance(ins, MoveJ):
                move = make_joint_move(robot, q, ins.target, ins.speed_scale)
                q_next = tuple(ins.target)
            else:
                if not ins.joints:
                    raise ProgramError(f"instruction {index}: MoveL without joint solution")
                move = make_linear_move(robot, q, ins.target, speed=ins.speed, q_end=ins.joints)
                q_next = tuple(ins.joints)
            duration = move.duration_us
            emit(t, "move_start", f"{index}")
            end = t + duration
            if move_ordinal in trip_at and guard is not None:
                halt = t + int(round(trip_at[move_ordinal] * duration))
                emit(halt, "trip", f"{index}")
                trip_count += 1
                end = t + duration + TRIP_PENALTY_US
            if on_sample is not None:
                on_sample(t, end, move, index)
            move_ordinal += 1
            t = end
            q = q_next
            emit(t, "move_end", f"{index}")
        elif isinstance(ins, GripperSet):
            emit(t, "gripper", f"{index} {ins.mode}")
            t += GRIPPER_US
        elif isinstance(ins, ToolAction):
            emit(t, "tool", f"{index} {ins.action}")
        elif isinstance(ins, WaitSignal):
            emit(t, "wait_start", f"{index} {ins.switch}")
            if ins.switch in scripted:
                t_press = scripted[ins.switch]
            elif press_resolver is not None:
                t_press = int(press_resolver(ins.switch, t, dict(marks)))
                if ins.switch not in press_rank:
                    scripted[ins.switch] = t_press
                    press_rank[ins.switch] = float(len(press_rank))
                    keyed.append(
                        (t_press, press_rank[ins.switch], TraceEvent(t_press, "switch", ins.switch))
                    )
            else:
                report = DeadlockReport(
                    t,
                    (f"instruction {index} waiting: switch '{ins.switch}' never pressed (since {t} us)",),
                )
                raise DeadlockError(report)
            waited = max(0, t_press - t)
            t = max(t, t_press)
            waits.append((ins.switch, waited))
            # released by the press itself: slots right after that press
            rank = press_rank[ins.switch] + 0.5 if waited > 0 else None
            emit(t, "wait_end", f"{index} {ins.switch} waited={waited}", rank)
        elif isinstance(ins, SetWall):
            emit(t, "wall_set", f"{index}")
        elif isinstance(ins, LogDirective):
            name = LOG_KIND_NAMES[ins.record_kind]
            emit(t, "log", f"{index} {name}")
            logs.append((t, name))
        elif isinstance(ins, ForceGuard):
            guard = ins.threshold
            emit(t, "guard", f"{index} {ins.threshold:g}")
        else:
            raise EmulatorError(f"cannot interpret {type(ins).__name__}")
        if block_marks and index in block_marks:
            marks[block_marks[index]] = t
    emit(t, "program_end", "")

    keyed.sort(key=lambda item: (item[0], item[1]))
    return ProgramTrace(
        events=tuple(ev for _, _, ev in keyed),
        duration_us=t,
        trips=trip_count,
        waits=tuple(waits),
        logs=tuple(logs),
        final_joints=q,
    )


# ---------------------------------------------------------------------------
# stochastic operator model
# ---------------------------------------------------------------------------

class OperatorModel:
    """Manual-side process feeding switch presses to the interpreter.

    Human tasks run in plan order against the takt: each starts at its
    scheduled time, later only if a gating robot block has not finished.
    Press time for a switch is the end of the task that presses it,
    plus a sampled reaction delay.
    """

    def __init__(self, scene: Scene, plan: AssemblyPlan, variation: VariationModel, rng):
        self._scene = scene
        self._variation = variation
        self._rng = rng
        self._humans = [a.task_id for a in plan.by_resource(HUMAN)]
        self._robots = set(plan.robot_task_ids())
        self._durations = {
            tid: plan.assignment(tid).duration_s * variation.sample_multiplier(rng)
            for tid in self._humans
        }
        self._takt = {tid: plan.assignment(tid).start_s for tid in self._humans}
        self._ends: dict[str, int] = {}
        self._presses: dict[str, int] = {}

    def press_time(self, switch_id: str, now_us: int, marks: dict[str, int]) -> int:
        if switch_id in self._presses:
            return self._presses[switch_id]
        switch = self._scene.switch(switch_id)
        if switch.pressed_after is None:
            raise EmulatorError(f"switch {switch_id!r} has no pressing task")
        target = switch.pressed_after
        if target not in self._humans:
            raise EmulatorError(f"switch {switch_id!r} pressed by non-manual task {target!r}")
        free = 0
        for tid in self._humans:
            if tid in self._ends:
                free = max(free, self._ends[tid])
                if tid == target:
                    break
                continue
            task = self._scene.task(tid)
            start = max(free, us_of(self._takt[tid]))
            for pred in task.precedence:
                if pred in self._humans:
                    continue
                if pred not in marks:
                    raise EmulatorError(
                        f"operator needs robot task {pred!r} finished before {tid!r}; "
                        f"program has not reached it"
                    )
                start = max(start, marks[pred])
            end = start + us_of(self._durations[tid])
            self._ends[tid] = end
            free = end
            if tid == target:
                break
        if target not in self._ends:
            raise EmulatorError(f"task {target!r} not in the manual queue")
        delay = self._variation.sample_switch_delay(self._rng)
        press = self._ends[target] + us_of(delay)
        self._presses[switch_id] = press
        return press


# ---------------------------------------------------------------------------
# the physical-cell emulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmulatorRun:
    cycles: int
    duration_us: int
    frames: tuple[Message, ...]
    records: tuple[LogRecord, ...]
    traces: tuple[ProgramTrace, ...]

    def frame_bytes(self) -> bytes:
        return b"".join(encode_frame(m) for m in self.frames)


class PhysicalEmulator:
    """Deterministic stand-in for the real cell.

    Each assembly cycle replays the program with freshly sampled
    disturbances (duration multipliers, force trips, operator delays),
    streams telemetry frames, and appends run records.  Identical seeds
    give identical runs, byte for byte.
    """

    def __init__(
        self,
        scene: Scene,
        plan: AssemblyPlan,
        build: ProgramBuild,
        variation: VariationModel | None = None,
        seed: int = 0,
        stream_rate_hz: float = DEFAULT_STREAM_RATE_HZ,
        heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_MS,
        drop_heartbeats=(),
    ):
        if not 0 < stream_rate_hz <= MAX_STREAM_RATE_HZ:
            raise TwinLinkError(
                f"stream rate {stream_rate_hz} Hz outside (0, {MAX_STREAM_RATE_HZ}]"
            )
        self.scene = scene
        self.plan = plan
        self.build = build
        self.variation = variation or VariationModel()
        self.seed = seed
        self.stream_period_us = int(round(1e6 / stream_rate_hz))
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.drop_heartbeats = tuple(drop_heartbeats)

    def _sample_trips(self, rng, n_moves: int):
        trips = []
        magnitudes = []
        p = self.variation.trip_probability
        if p <= 0:
            return trips, magnitudes
        for ordinal in range(n_moves):
            if rng.uniform() < p:
                trips.append((ordinal, float(rng.uniform(0.1, 0.9))))
                magnitudes.append(10.0 + float(rng.exponential(3.0)))
        return trips, magnitudes

    def run(self, cycles: int, log_path=None, run_id: str = "emulated") -> EmulatorRun:
        program = self.build.program
        marks = self.build.layout.block_end_marks()
        n_moves = len(program.moves())
        frames: list[tuple[int, Message]] = []
        records: list[LogRecord] = []
        traces: list[ProgramTrace] = []
        serial = 0

        def record(kind: int, t_us: int, value: float, label: str) -> None:
            nonlocal serial
            records.append(LogRecord(serial, t_us, kind, value, label))
            serial += 1

        t0 = 0
        for cycle in range(cycles):
            rng = np.random.default_rng([self.seed, cycle])
            operator = OperatorModel(self.scene, self.plan, self.variation, rng)
            trips, magnitudes = self._sample_trips(rng, n_moves)
            samples: list[tuple[int, tuple[float, ...]]] = []

            def on_sample(t_start, t_end, move, index, _samples=samples):
                step = self.stream_period_us
                first = ((t_start // step) + 1) * step
                for tick in range(first, t_end, step):
                    frac = (tick - t_start) / max(t_end - t_start, 1)
                    q0 = np.asarray(move.q_start)
                    q1 = np.asarray(move.q_end)
                    _samples.append((tick, tuple(q0 + (q1 - q0) * frac)))

            trace = emulate_program(
                self.scene,
                program,
                trips=trips,
                press_resolver=operator.press_time,
                block_marks=marks,
                on_sample=on_sample,
            )
            traces.append(trace)

            for tick, joints in samples:
                frames.append((t0 + tick, JointStateMsg(t0 + tick, joints)))
            trip_i = 0
            for ev in trace.events:
                at = t0 + ev.t_us
                if ev.kind == "switch":
                    frames.append((at, SwitchEvent(at, ev.detail, True)))
                elif ev.kind == "trip":
                    magnitude = magnitudes[trip_i]
                    trip_i += 1
                    record(RECORD_TRIP, at, magnitude, f"cycle={cycle} instr={ev.detail}")
                    frames.append((at, ForceEvent(at, magnitude, ev.detail)))
                elif ev.kind == "gripper":
                    _, mode = ev.detail.split(" ", 1)
                    state = "closed" if mode == "close" else "open"
                    frames.append((at, GripperState(at, state)))
                elif ev.kind == "log":
                    idx, name = ev.detail.split(" ", 1)
                    kind = {v: k for k, v in LOG_KIND_NAMES.items()}[name]
                    frames.append((at, LogEvent(at, kind, f"cycle={cycle}")))
            for switch, waited in trace.waits:
                record(
                    RECORD_WAIT,
                    t0 + trace.duration_us,
                    waited / 1e6,
                    f"cycle={cycle} switch={switch}",
                )
            t0 += trace.duration_us
            record(RECORD_CYCLE, t0, trace.duration_us / 1e6, f"cycle={cycle}")

        hb_step = self.heartbeat_interval_ms * 1000
        for tick in range(0, t0 + 1, hb_step):
            if any(a <= tick < b for a, b in self.drop_heartbeats):
                continue
            frames.append((tick, Heartbeat(tick // 1000)))

        frames.sort(key=lambda item: item[0])
        ordered = tuple(msg for _, msg in frames)
        if log_path is not None:
            with LogWriter(log_path, run_id) as writer:
                for r in records:
                    writer.append(r.kind, r.t_us, r.value, r.label)
        return EmulatorRun(
            cycles=cycles,
            duration_us=t0,
            frames=ordered,
            records=tuple(records),
            traces=tuple(traces),
        )


def run_physical_emulator(
    scene: Scene,
    plan: AssemblyPlan,
    build: ProgramBuild,
    cycles: int,
    variation: VariationModel | None = None,
    seed: int = 0,
    log_path=None,
    run_id: str = "emulated",
) -> EmulatorRun:
    emulator = PhysicalEmulator(scene, plan, build, variation=variation, seed=seed)
    return emulator.run(cycles, log_path=log_path, run_id=run_id)


# ---------------------------------------------------------------------------
# mirroring the stream back into twin state
# ---------------------------------------------------------------------------

@dataclass
class MirrorState:
    joints: tuple[float, ...] = ()
    joints_t_us: int = -1
    gripper: str = "open"
    switches: dict = field(default_factory=dict)
    last_heartbeat_us: int | None = None
    now_us: int = 0
    applied: int = 0
    dropped_stale: int = 0
    force_events: int = 0


class SyncSession:
    """Consumes the physical stream and keeps a live mirror.

    Frames older than what is already applied are dropped, and the link
    counts as lost when HEARTBEAT_MISS_LIMIT intervals pass without a
    heartbeat.
    """

    def __init__(self, scene: Scene, heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_MS):
        self.scene = scene
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.state = MirrorState(joints=tuple(scene.robot.home))
        self._decoder = FrameDecoder()

    def feed_bytes(self, chunk: bytes) -> list[Message]:
        msgs = self._decoder.feed(chunk)
        for msg in msgs:
            self.feed(msg)
        return msgs

    def feed(self, msg: Message) -> None:
        s = self.state
        if isinstance(msg, JointStateMsg):
            if msg.t_us <= s.joints_t_us:
                s.dropped_stale += 1
                return
            s.joints = msg.angles
            s.joints_t_us = msg.t_us
            s.now_us = max(s.now_us, msg.t_us)
        elif isinstance(msg, GripperState):
            s.gripper = msg.mode
            s.now_us = max(s.now_us, msg.t_us)
        elif isinstance(msg, SwitchEvent):
            s.switches[msg.switch] = msg.pressed
            s.now_us = max(s.now_us, msg.t_us)
        elif isinstance(msg, ForceEvent):
            s.force_events += 1
            s.now_us = max(s.now_us, msg.t_us)
        elif isinstance(msg, Heartbeat):
            at = msg.uptime_ms * 1000
            if s.last_heartbeat_us is None or at > s.last_heartbeat_us:
                s.last_heartbeat_us = at
            s.now_us = max(s.now_us, at)
        elif isinstance(msg, (LogEvent, Ack)):
            s.now_us = max(s.now_us, getattr(msg, "t_us", s.now_us))
        s.applied += 1

    @property
    def link_ok(self) -> bool:
        s = self.state
        if s.last_heartbeat_us is None:
            return False
        budget = HEARTBEAT_MISS_LIMIT * self.heartbeat_interval_ms * 1000
        return s.now_us - s.last_heartbeat_us <= budget


# ---------------------------------------------------------------------------
# virtual commissioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionFinding:
    t_us: int
    instruction: int
    owner_a: str
    owner_b: str
    depth_mm: float


def _aabb_overlap(a, b, margin: float = 0.0) -> bool:
    return bool(np.all(a[0] - margin <= b[1]) and np.all(b[0] - margin <= a[1]))


def virtual_commissioning(
    scene: Scene,
    program: RobotProgram,
    extra_obstacles=(),
    stride_us: int = 20_000,
    include_human: bool = False,
) -> tuple[CollisionFinding, ...]:
    """Replay a program against static geometry and report penetrations.

    Switches press instantly and no variation applies; the robot path
    is exactly what the program commands.  ``extra_obstacles`` lets a
    what-if layout inject hypothesized geometry without touching the
    scene.
    """
    robot = scene.robot
    base = scene.robot_base_pose()
    statics = list(scene.static_shapes()) + list(extra_obstacles)
    if include_human and scene.human is not None:
        statics += scene.human_shapes()
    static_boxes = [aabb(s) for s in statics]

    # pairs touching before any motion are mounting contacts, not findings
    resting: set[tuple[str, str]] = set()
    for link in robot_link_shapes(robot, robot.home, base_pose=base):
        for static in statics:
            if signed_distance(link, static) < 0.0:
                resting.add((link.owner, static.owner))

    worst: dict[tuple[int, str, str], CollisionFinding] = {}
    q = tuple(robot.home)
    t = 0
    for index, ins in enumerate(program.instructions):
        if not isinstance(ins, (MoveJ, MoveL)):
            continue
        if isinstance(ins, MoveJ):
            move = make_joint_move(robot, q, ins.target, ins.speed_scale)
            q_next = tuple(ins.target)
        else:
            if not ins.joints:
                raise ProgramError(f"instruction {index}: MoveL without joint solution")
            move = make_linear_move(robot, q, ins.target, speed=ins.speed, q_end=ins.joints)
            q_next = tuple(ins.joints)
        ticks = list(range(0, move.duration_us, stride_us)) + [move.duration_us]
        for tick in ticks:
            joints = move.sample(tick / 1e6)
            links = robot_link_shapes(robot, joints, base_pose=base)
            for link in links:
                link_box = aabb(link)
                for static, box in zip(statics, static_boxes):
                    if (link.owner, static.owner) in resting:
                        continue
                    if not _aabb_overlap(link_box, box):
                        continue
                    dist = signed_distance(link, static)
                    if dist < 0.0:
                        key = (index, link.owner, static.owner)
                        prior = worst.get(key)
                        if prior is None:
                            worst[key] = CollisionFinding(
                                t_us=t + tick,
                                instruction=index,
                                owner_a=link.owner,
                                owner_b=static.owner,
                                depth_mm=-dist,
                            )
                        elif -dist > prior.depth_mm:
                            worst[key] = replace(prior, depth_mm=-dist)
        q = q_next
        t += move.duration_us
    return tuple(worst[k] for k in sorted(worst))
