"""Deterministic discrete-event execution of assembly plans and robot
programs.

All clocks are integer microseconds; ties resolve in scheduling order,
so a run is a pure function of (scene, plan, variation, seed).  Plan
runs drive the two resources through their assigned tasks with switch
and transition-logic gating; program playback interprets a serialized
robot program against a scripted operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from .allocation import AssemblyPlan, HUMAN, ROBOT
from .kinematics import robot_link_shapes
from .program import (
    GRIPPER_ACTUATE_S,
    LOG_KIND_NAMES,
    ForceGuard,
    GripperSet,
    LogDirective,
    MoveJ,
    MoveL,
    ProgramError,
    RobotProgram,
    SetWall,
    ToolAction,
    WaitSignal,
)
from .scene import Scene, human_body_shapes
from .sensors import TransitionLogic, evaluate_sensor
from .trajectory import make_joint_move, make_linear_move

log = logging.getLogger(__name__)

US = 1_000_000
TRIP_PENALTY_S = 2.0
LONG_WAIT_THRESHOLD_S = 20.0
GRIPPER_US = int(round(GRIPPER_ACTUATE_S * US))
TRIP_PENALTY_US = int(round(TRIP_PENALTY_S * US))

# Plan-level runs track posture only as parked/away; joint 0 swings out
# while the arm works so parked-only gates read correctly.
AWAY_JOINT0_OFFSET_RAD = 0.9


def us_of(seconds: float) -> int:
    return int(round(seconds * US))


class SimulationError(Exception):
    pass


@dataclass(frozen=True)
class DeadlockReport:
    time_us: int
    blocked: tuple[str, ...]  # one line per stuck activity, naming unmet predicates

    def __str__(self) -> str:
        lines = "; ".join(self.blocked)
        return f"deadlock at {self.time_us} us: {lines}"


class DeadlockError(SimulationError):
    def __init__(self, report: DeadlockReport):
        super().__init__(str(report))
        self.report = report


@dataclass(frozen=True)
class TraceEvent:
    t_us: int
    kind: str
    detail: str


def trace_lines(events) -> list[str]:
    return [f"{e.t_us:>12d}  {e.kind:<12s} {e.detail}" for e in events]


class _Engine:
    """Microsecond event queue; equal times run in scheduling order."""

    def __init__(self):
        self.now_us = 0
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0

    def schedule(self, t_us: int, fn) -> None:
        if t_us < self.now_us:
            raise SimulationError(f"event scheduled in the past ({t_us} < {self.now_us})")
        heappush(self._heap, (t_us, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            t, _, fn = heappop(self._heap)
            self.now_us = t
            fn()


# ---------------------------------------------------------------------------
# variation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariationModel:
    """Stochastic disturbances calibrated against observed cell behavior.

    Task durations scale by a lognormal multiplier, robot moves trip the
    force guard independently (each trip halts the arm for a fixed
    penalty), and operators confirm switches after a shifted-exponential
    reaction delay.
    """

    duration_sigma: float = 0.0
    trip_probability: float = 0.0  # per robot move
    trip_penalty_s: float = TRIP_PENALTY_S
    switch_delay_shift_s: float = 0.0
    switch_delay_mean_s: float = 0.0  # exponential part beyond the shift
    move_counts: tuple[tuple[str, int], ...] = ()  # robot task -> moves per cycle

    def moves_for(self, task_id: str) -> int:
        for tid, n in self.move_counts:
            if tid == task_id:
                return n
        return 0

    def sample_multiplier(self, rng) -> float:
        if self.duration_sigma <= 0:
            return 1.0
        return float(np.exp(rng.normal(0.0, self.duration_sigma)))

    def sample_trips(self, task_id: str, rng) -> int:
        n = self.moves_for(task_id)
        if n <= 0 or self.trip_probability <= 0:
            return 0
        return int(rng.binomial(n, self.trip_probability))

    def sample_switch_delay(self, rng) -> float:
        if self.switch_delay_mean_s <= 0 and self.switch_delay_shift_s <= 0:
            return 0.0
        extra = rng.exponential(self.switch_delay_mean_s) if self.switch_delay_mean_s > 0 else 0.0
        return self.switch_delay_shift_s + float(extra)


# ---------------------------------------------------------------------------
# world view over a plan-driven run
# ---------------------------------------------------------------------------

class PlanWorld:
    """Sensor-facing view of a plan run.

    Posture is parked/away, component positions update when their
    placing task completes, and shape queries rebuild geometry on
    demand (only spatial sensors pay that cost).
    """

    def __init__(self, scene: Scene, state: dict):
        self._scene = scene
        self._state = state

    @property
    def dof(self) -> int:
        return self._scene.robot.dof

    def joint_angles(self):
        home = tuple(self._scene.robot.home)
        if not self._state["robot_busy"]:
            return home
        lo, hi = self._scene.robot.joint_limits[0]
        away = min(max(home[0] + AWAY_JOINT0_OFFSET_RAD, lo), hi)
        return (away,) + home[1:]

    def resource_point(self, ref: str):
        rid = ref.split(".")[0]
        return np.asarray(self._scene.resource(rid).pose.position, dtype=float)

    def object_positions(self) -> dict:
        return dict(self._state["placements"])

    def object_property(self, object_id: str, key: str):
        if key == "status":
            return "placed" if object_id in self._state["placed"] else "pending"
        comp = next((c for c in self._scene.components if c.id == object_id), None)
        if comp is None:
            return None
        return getattr(comp, key, None)

    def moving_shapes(self):
        shapes = list(
            robot_link_shapes(
                self._scene.robot,
                self.joint_angles(),
                base_pose=self._scene.robot_base_pose(),
            )
        )
        if self._scene.human is not None:
            shapes.extend(human_body_shapes(self._scene.human, self._state["human_posture"]))
        return shapes


# ---------------------------------------------------------------------------
# plan-driven cycle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaitRecord:
    resource: str
    task_id: str
    start_s: float
    wait_s: float
    cause: str


@dataclass(frozen=True)
class TimelineEntry:
    resource: str
    task_id: str
    start_s: float
    end_s: float
    trips: int = 0


@dataclass(frozen=True)
class UtilizationReport:
    cycle_s: float
    busy_s: dict
    timeline: tuple[TimelineEntry, ...]
    waits: tuple[WaitRecord, ...]
    trips: int

    def utilization(self, resource: str) -> float:
        if self.cycle_s <= 0:
            return 0.0
        return self.busy_s.get(resource, 0.0) / self.cycle_s


@dataclass(frozen=True)
class CycleResult:
    report: UtilizationReport
    trace: tuple[TraceEvent, ...]


def _gating_logics(scene: Scene, task_id: str) -> list[TransitionLogic]:
    return [lg for lg in scene.logics if lg.triggered_operation == task_id]


def run_cycle(
    scene: Scene,
    plan: AssemblyPlan,
    variation: VariationModel | None = None,
    seed: int | None = None,
    _rng=None,
) -> CycleResult:
    """Execute one assembly cycle of the plan.

    Without variation the timing reproduces the plan exactly; with it,
    sampled durations, trips and operator delays shift the schedule and
    the gating logic replays against the disturbed timeline.
    """
    rng = _rng
    if rng is None and variation is not None:
        rng = np.random.default_rng(0 if seed is None else seed)
    var = variation or VariationModel()

    engine = _Engine()
    trace: list[TraceEvent] = []
    state = {
        "robot_busy": False,
        "human_posture": "neutral",
        "placements": {},
        "placed": set(),
    }
    world = PlanWorld(scene, state)

    def emit(kind: str, detail: str) -> None:
        trace.append(TraceEvent(engine.now_us, kind, detail))

    queues: dict[str, list[str]] = {}
    for a in sorted(plan.assignments, key=lambda a: (a.start_s, a.task_id)):
        queues.setdefault(a.resource, []).append(a.task_id)
    assignment = {a.task_id: a for a in plan.assignments}

    done: dict[str, int] = {}  # task -> completion time us
    switch_on: dict[str, bool] = {s.id: False for s in scene.switches}
    logic_fired: set[int] = set()
    logic_prev: dict[int, bool] = {}
    blocked_since: dict[str, int] = {}
    resource_busy: dict[str, bool] = {r: False for r in queues}
    busy_us: dict[str, int] = {r: 0 for r in queues}
    waits: list[WaitRecord] = []
    timeline: list[TimelineEntry] = []
    total_trips = 0

    def eval_logics() -> None:
        for idx, lg in enumerate(scene.logics):
            if idx in logic_fired:
                continue
            ok = True
            for pred in lg.guard:
                if pred.kind == "switch":
                    ok = switch_on.get(pred.ref, False)
                else:
                    ok = bool(evaluate_sensor(scene.sensor(pred.ref), world))
                if not ok:
                    break
            was = logic_prev.get(idx, False)
            logic_prev[idx] = ok
            if ok and not was:
                logic_fired.add(idx)
                emit("logic", lg.triggered_operation)

    def gate_status(task_id: str) -> tuple[bool, list[str]]:
        unmet = []
        task = scene.task(task_id)
        if task.switch is not None and not switch_on.get(task.switch, False):
            unmet.append(f"switch '{task.switch}' not pressed")
        for lg in _gating_logics(scene, task_id):
            idx = scene.logics.index(lg)
            if idx not in logic_fired:
                parts = [f"{p.kind} '{p.ref}'" for p in lg.guard]
                unmet.append("logic guard unmet (" + " & ".join(parts) + ")")
        return (not unmet), unmet

    def press(switch_id: str) -> None:
        if switch_on.get(switch_id):
            return
        switch_on[switch_id] = True
        emit("switch", switch_id)
        eval_logics()
        dispatch_all()

    def finish(resource: str, task_id: str, start_us: int, trips: int) -> None:
        end_us = engine.now_us
        done[task_id] = end_us
        resource_busy[resource] = False
        if resource == ROBOT:
            state["robot_busy"] = False
        busy_us[resource] += end_us - start_us
        timeline.append(
            TimelineEntry(resource, task_id, start_us / US, end_us / US, trips)
        )
        emit("task_end", f"{resource} {task_id}")
        task = scene.task(task_id)
        rid = scene.robot_id if resource == ROBOT else scene.human_id
        state["placements"][task.component_id] = np.asarray(
            task.place.position if task.place is not None else scene.resource(rid).pose.position,
            dtype=float,
        )
        state["placed"].add(task.component_id)
        for sw in scene.switches:
            if sw.pressed_after == task_id:
                delay = var.sample_switch_delay(rng) if rng is not None else 0.0
                engine.schedule(end_us + us_of(delay), lambda s=sw.id: press(s))
        eval_logics()
        dispatch_all()

    def dispatch(resource: str) -> None:
        nonlocal total_trips
        if resource_busy[resource]:
            return
        queue = queues[resource]
        if not queue:
            return
        task_id = queue[0]
        task = scene.task(task_id)
        if any(p not in done for p in task.precedence):
            return
        ok, _ = gate_status(task_id)
        if not ok:
            blocked_since.setdefault(task_id, engine.now_us)
            return
        queue.pop(0)
        if task_id in blocked_since:
            waited = engine.now_us - blocked_since.pop(task_id)
            if waited > 0:
                cause = f"switch:{task.switch}" if task.switch else "logic"
                waits.append(
                    WaitRecord(resource, task_id, engine.now_us / US, waited / US, cause)
                )
                emit("wait_end", f"{resource} {task_id} cause={cause} us={waited}")
        base = assignment[task_id].duration_s
        mult = var.sample_multiplier(rng) if rng is not None else 1.0
        trips = 0
        if resource == ROBOT and rng is not None:
            trips = var.sample_trips(task_id, rng)
        duration = base * mult + trips * var.trip_penalty_s
        total_trips += trips
        resource_busy[resource] = True
        if resource == ROBOT:
            state["robot_busy"] = True
        start_us = engine.now_us
        emit("task_start", f"{resource} {task_id}")
        if trips:
            emit("trip", f"{task_id} count={trips}")
        eval_logics()
        engine.schedule(
            start_us + us_of(duration),
            lambda r=resource, t=task_id, s=start_us, k=trips: finish(r, t, s, k),
        )

    def dispatch_all() -> None:
        for resource in queues:
            dispatch(resource)

    engine.schedule(0, dispatch_all)
    eval_logics()
    engine.run()

    pending = [tid for q in queues.values() for tid in q]
    if pending:
        blocked = []
        for tid in pending:
            task = scene.task(tid)
            reasons = [f"precedence '{p}' incomplete" for p in task.precedence if p not in done]
            ok, unmet = gate_status(tid)
            reasons.extend(unmet)
            if not reasons:
                reasons.append("resource never freed")
            blocked.append(f"task '{tid}' waiting: " + ", ".join(reasons))
        raise DeadlockError(DeadlockReport(engine.now_us, tuple(blocked)))

    cycle_us = max(
        [t for t in done.values()]
        + [e.t_us for e in trace if e.kind == "switch"]
        + [0]
    )
    trace.append(TraceEvent(cycle_us, "cycle_end", f"us={cycle_us}"))
    report = UtilizationReport(
        cycle_s=cycle_us / US,
        busy_s={r: b / US for r, b in busy_us.items()},
        timeline=tuple(sorted(timeline, key=lambda e: (e.start_s, e.resource))),
        waits=tuple(waits),
        trips=total_trips,
    )
    return CycleResult(report, tuple(trace))


# ---------------------------------------------------------------------------
# shift simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftResult:
    shift_s: float
    completed: int
    cycle_s: tuple[float, ...]
    force_trips: int
    long_waits: int
    wait_threshold_s: float
    waits_s: tuple[float, ...]
    utilization: dict

    @property
    def mean_cycle_s(self) -> float:
        return float(np.mean(self.cycle_s)) if self.cycle_s else 0.0


def simulate_shift(
    scene: Scene,
    plan: AssemblyPlan,
    shift_s: float = 28800.0,
    variation: VariationModel | None = None,
    seed: int = 0,
    fixed_cycle_s: float | None = None,
    wait_threshold_s: float = LONG_WAIT_THRESHOLD_S,
) -> ShiftResult:
    """Count assemblies completed inside a shift.

    Cycles run back to back; one counts only if it finishes before the
    shift ends.  With ``fixed_cycle_s`` the cycle time is locked and the
    count is exact integer arithmetic (no sampling at all).
    """
    shift_us = us_of(shift_s)
    if fixed_cycle_s is not None:
        if fixed_cycle_s <= 0:
            raise SimulationError("fixed_cycle_s must be > 0")
        cycle_us = us_of(fixed_cycle_s)
        completed = shift_us // cycle_us
        busy = {a.resource: 0.0 for a in plan.assignments}
        for a in plan.assignments:
            busy[a.resource] += a.duration_s
        return ShiftResult(
            shift_s=shift_s,
            completed=int(completed),
            cycle_s=tuple([fixed_cycle_s] * int(completed)),
            force_trips=0,
            long_waits=0,
            wait_threshold_s=wait_threshold_s,
            waits_s=(),
            utilization={r: b / fixed_cycle_s for r, b in busy.items()},
        )

    elapsed_us = 0
    cycles: list[float] = []
    waits_all: list[float] = []
    trips = 0
    busy_fracs: dict[str, list[float]] = {}
    index = 0
    while elapsed_us < shift_us:
        rng = np.random.default_rng([seed, index])
        result = run_cycle(scene, plan, variation=variation, _rng=rng)
        cycle_us = us_of(result.report.cycle_s)
        if cycle_us <= 0:
            raise SimulationError("plan produced a zero-length cycle")
        if elapsed_us + cycle_us > shift_us:
            break
        elapsed_us += cycle_us
        cycles.append(result.report.cycle_s)
        trips += result.report.trips
        waits_all.extend(w.wait_s for w in result.report.waits)
        for res, b in result.report.busy_s.items():
            busy_fracs.setdefault(res, []).append(b / result.report.cycle_s)
        index += 1

    return ShiftResult(
        shift_s=shift_s,
        completed=len(cycles),
        cycle_s=tuple(cycles),
        force_trips=trips,
        long_waits=sum(1 for w in waits_all if w > wait_threshold_s),
        wait_threshold_s=wait_threshold_s,
        waits_s=tuple(waits_all),
        utilization={r: float(np.mean(v)) for r, v in busy_fracs.items()},
    )


# ---------------------------------------------------------------------------
# program playback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProgramTrace:
    events: tuple[TraceEvent, ...]
    duration_us: int
    trips: int
    waits: tuple[tuple[str, int], ...]  # (switch, waited us)
    logs: tuple[tuple[int, str], ...]  # (t_us, record kind name)
    final_joints: tuple[float, ...]


def play_program(
    scene: Scene,
    program: RobotProgram,
    operator=(),
    trips=(),
    start_joints=None,
) -> ProgramTrace:
    """Interpret a robot program against a scripted operator.

    ``operator`` lists absolute switch presses as (t_us, switch_id);
    ``trips`` injects force-guard halts as (move_ordinal, fraction of
    the move).  A halt adds a fixed penalty mid-move; trips are ignored
    while no guard is armed.
    """
    robot = scene.robot
    engine = _Engine()
    events: list[TraceEvent] = []
    logs: list[tuple[int, str]] = []
    waits: list[tuple[str, int]] = []
    pressed: dict[str, bool] = {}
    trip_at = {int(ordinal): float(fraction) for ordinal, fraction in trips}
    for _, frac in trip_at.items():
        if not 0.0 <= frac < 1.0:
            raise SimulationError(f"trip fraction {frac} outside [0,1)")

    state = {
        "q": tuple(start_joints if start_joints is not None else robot.home),
        "guard": None,
        "move_ordinal": 0,
        "trip_count": 0,
        "waiting": None,  # (index, switch, t_start)
        "done": False,
        "end_us": 0,
    }

    def emit(kind: str, detail: str) -> None:
        events.append(TraceEvent(engine.now_us, kind, detail))

    def press(switch_id: str) -> None:
        if pressed.get(switch_id):
            return
        pressed[switch_id] = True
        emit("switch", switch_id)
        if state["waiting"] is not None and state["waiting"][1] == switch_id:
            index, sid, t0 = state["waiting"]
            state["waiting"] = None
            waited = engine.now_us - t0
            waits.append((sid, waited))
            emit("wait_end", f"{index} {sid} waited={waited}")
            engine.schedule(engine.now_us, lambda: step(index + 1))

    for t_us, sid in sorted(operator):
        engine.schedule(int(t_us), lambda s=sid: press(s))

    def step(index: int) -> None:
        if index >= len(program.instructions):
            state["done"] = True
            state["end_us"] = engine.now_us
            emit("program_end", "")
            return
        ins = program.instructions[index]
        now = engine.now_us
        if isinstance(ins, (MoveJ, MoveL)):
            ordinal = state["move_ordinal"]
            state["move_ordinal"] += 1
            if isinstance(ins, MoveJ):
                move = make_joint_move(robot, state["q"], ins.target, ins.speed_scale)
                q_next = tuple(ins.target)
            else:
                if not ins.joints:
                    raise ProgramError(f"instruction {index}: MoveL without joint solution")
                move = make_linear_move(robot, state["q"], ins.target, speed=ins.speed, q_end=ins.joints)
                q_next = tuple(ins.joints)
            duration = move.duration_us
            emit("move_start", f"{index}")
            end = now + duration
            if ordinal in trip_at and state["guard"] is not None:
                halt = now + int(round(trip_at[ordinal] * duration))
                end = now + duration + TRIP_PENALTY_US

                def tripped(i=index):
                    state["trip_count"] += 1
                    emit("trip", f"{i}")

                engine.schedule(halt, tripped)

            def arrive(i=index, q=q_next):
                state["q"] = q
                emit("move_end", f"{i}")
                step(i + 1)

            engine.schedule(end, arrive)
        elif isinstance(ins, GripperSet):
            emit("gripper", f"{index} {ins.mode}")
            engine.schedule(now + GRIPPER_US, lambda i=index: step(i + 1))
        elif isinstance(ins, ToolAction):
            emit("tool", f"{index} {ins.action}")
            engine.schedule(now, lambda i=index: step(i + 1))
        elif isinstance(ins, WaitSignal):
            emit("wait_start", f"{index} {ins.switch}")
            if pressed.get(ins.switch):
                waits.append((ins.switch, 0))
                emit("wait_end", f"{index} {ins.switch} waited=0")
                engine.schedule(now, lambda i=index: step(i + 1))
            else:
                state["waiting"] = (index, ins.switch, now)
        elif isinstance(ins, SetWall):
            emit("wall_set", f"{index}")
            engine.schedule(now, lambda i=index: step(i + 1))
        elif isinstance(ins, LogDirective):
            name = LOG_KIND_NAMES[ins.record_kind]
            emit("log", f"{index} {name}")
            logs.append((now, name))
            engine.schedule(now, lambda i=index: step(i + 1))
        elif isinstance(ins, ForceGuard):
            state["guard"] = ins.threshold
            emit("guard", f"{index} {ins.threshold:g}")
            engine.schedule(now, lambda i=index: step(i + 1))
        else:
            raise SimulationError(f"cannot interpret {type(ins).__name__}")

    engine.schedule(0, lambda: step(0))
    engine.run()

    if not state["done"]:
        blocked = []
        if state["waiting"] is not None:
            index, sid, t0 = state["waiting"]
            blocked.append(
                f"instruction {index} waiting: switch '{sid}' never pressed (since {t0} us)"
            )
        else:
            blocked.append("program stalled")
        raise DeadlockError(DeadlockReport(engine.now_us, tuple(blocked)))

    return ProgramTrace(
        events=tuple(events),
        duration_us=state["end_us"],
        trips=state["trip_count"],
        waits=tuple(waits),
        logs=tuple(logs),
        final_joints=tuple(state["q"]),
    )


def variation_to_document(model: VariationModel) -> dict:
    return {
        "kind": "variation",
        "duration_sigma": model.duration_sigma,
        "trip_probability": model.trip_probability,
        "trip_penalty_s": model.trip_penalty_s,
        "switch_delay_shift_s": model.switch_delay_shift_s,
        "switch_delay_mean_s": model.switch_delay_mean_s,
        "move_counts": {tid: n for tid, n in model.move_counts},
    }


def variation_from_document(doc: dict) -> VariationModel:
    try:
        return VariationModel(
            duration_sigma=float(doc.get("duration_sigma", 0.0)),
            trip_probability=float(doc.get("trip_probability", 0.0)),
            trip_penalty_s=float(doc.get("trip_penalty_s", TRIP_PENALTY_S)),
            switch_delay_shift_s=float(doc.get("switch_delay_shift_s", 0.0)),
            switch_delay_mean_s=float(doc.get("switch_delay_mean_s", 0.0)),
            move_counts=tuple((str(t), int(n)) for t, n in dict(doc.get("move_counts", {})).items()),
        )
    except (TypeError, ValueError, AttributeError) as e:
        raise ValueError(f"variation document: {e}") from e
