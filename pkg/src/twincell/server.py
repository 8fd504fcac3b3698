"""HTTP face of the orchestrator.

One owner task serializes every command against the authoritative
state; handlers enqueue a closure and await its reply, so mutations
never interleave and reads see whole states.  The live stream is
fan-out: each subscriber owns a bounded buffer that drops oldest on
overflow, and a sequence-number discontinuity is surfaced to the
client as an explicit gap event rather than silent loss.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .allocation import AllocationError, AssemblyPlan
from .datalog import (
    InsufficientDataError,
    LogRecord,
    RunSummary,
    predict_throughput,
    summarize,
)
from .orchestrator import (
    ALLOWED_TRANSITIONS,
    GovernanceError,
    Orchestrator,
    PhaseError,
    Proposal,
    TwinPhase,
    action_to_doc,
    change_from_doc,
)
from .program import ProgramError
from .protocol import (
    Ack,
    ForceEvent,
    GripperState,
    Heartbeat,
    JointState,
    LogEvent,
    Message,
    SwitchEvent,
)
from .scene import Scene, SceneValidationError
from .trajectory import WallError
from .twinlink import PhysicalEmulator

log = logging.getLogger(__name__)

DEFAULT_LISTEN = "127.0.0.1:8787"
LISTEN_ENV = "TWINCELL_LISTEN"
DATA_DIR_ENV = "TWINCELL_DATA_DIR"

STREAM_HISTORY = 4096  # events kept for Last-Event-ID resumption
SUBSCRIBER_BUFFER = 1024  # per-subscriber queue before oldest-dropped
KEEPALIVE_S = 15.0

RECORD_NAMES = {1: "cycle", 2: "trip", 3: "wait", 4: "note"}


# ---------------------------------------------------------------------------
# document encoders
# ---------------------------------------------------------------------------

def pose_doc(pose) -> dict:
    return {"position": list(pose.position), "orientation": list(pose.orientation)}


def scene_doc(scene: Scene) -> dict:
    return {
        "version": scene.version,
        "robot": {
            "id": scene.robot_id,
            "base": pose_doc(scene.robot_base_pose()),
            "dof": scene.robot.dof,
            "rated_reach_mm": scene.robot.rated_reach,
            "home": list(scene.robot.home),
        },
        "human": {"id": scene.human_id, "base": pose_doc(scene.human_resource().pose)},
        "resources": [
            {
                "id": r.id,
                "kind": r.kind.value,
                "pose": pose_doc(r.pose),
                "shapes": [
                    {"kind": s.kind.value, "dimensions": list(s.dimensions)} for s in r.shapes
                ],
            }
            for r in scene.resources
        ],
        "tasks": [
            {
                "id": t.id,
                "component": t.component_id,
                "precedence": list(t.precedence),
                "manual_s": t.manual_s,
                "robot_s": t.robot_s,
                "switch": t.switch,
                "tool": t.tool,
            }
            for t in scene.tasks
        ],
    }


def plan_doc(plan: AssemblyPlan) -> dict:
    return {
        "cycle_s": plan.cycle_s,
        "idle_s": plan.idle_s,
        "assignments": [
            {
                "task_id": a.task_id,
                "resource": a.resource,
                "start_s": a.start_s,
                "duration_s": a.duration_s,
            }
            for a in plan.assignments
        ],
    }


def proposal_doc(proposal: Proposal) -> dict:
    return {
        "id": proposal.id,
        "action": action_to_doc(proposal.action),
        "rationale": proposal.rationale,
        "state": proposal.state.value,
        "decided_by": proposal.decided_by,
        "decision_note": proposal.decision_note,
        "applied_version": proposal.applied_version,
    }


def summary_doc(run_id: str, summary: RunSummary, complete: bool, shift_s: float) -> dict:
    try:
        predicted = predict_throughput(summary, shift_s)
    except InsufficientDataError:
        predicted = None
    return {
        "run": run_id,
        "complete": complete,
        "completed": summary.completed,
        "force_trips": summary.force_trips,
        "waits": summary.waits,
        "long_waits": summary.long_waits,
        "wait_threshold_s": summary.wait_threshold_s,
        "mean_cycle_s": summary.mean_cycle_s,
        "cycle_variance": summary.cycle_variance,
        "first_t_us": summary.first_t_us,
        "last_t_us": summary.last_t_us,
        "predicted_shift": predicted,
    }


def record_doc(run_id: str, record: LogRecord) -> dict:
    return {
        "run": run_id,
        "serial": record.serial,
        "t_us": record.t_us,
        "kind": RECORD_NAMES.get(record.kind, str(record.kind)),
        "value": record.value,
        "label": record.label,
    }


def message_event(msg: Message) -> tuple[str, dict]:
    """Stream (event name, payload) for one telemetry frame."""
    if isinstance(msg, JointState):
        return "joint_state", {"t_us": msg.t_us, "angles": list(msg.angles)}
    if isinstance(msg, GripperState):
        return "gripper_state", {"t_us": msg.t_us, "mode": msg.mode, "width": msg.width}
    if isinstance(msg, SwitchEvent):
        return "switch_event", {"t_us": msg.t_us, "switch": msg.switch, "pressed": msg.pressed}
    if isinstance(msg, ForceEvent):
        return "force_event", {"t_us": msg.t_us, "magnitude": msg.magnitude, "label": msg.label}
    if isinstance(msg, LogEvent):
        return "log_event", {
            "t_us": msg.t_us,
            "kind": RECORD_NAMES.get(msg.record_kind, str(msg.record_kind)),
            "detail": msg.detail,
        }
    if isinstance(msg, Heartbeat):
        return "heartbeat", {"uptime_ms": msg.uptime_ms}
    if isinstance(msg, Ack):
        return "ack", {"serial": msg.serial, "ok": msg.ok, "message": msg.message}
    raise TypeError(f"unstreamable message {type(msg).__name__}")


# ---------------------------------------------------------------------------
# event fan-out
# ---------------------------------------------------------------------------

class _Subscriber:
    def __init__(self, bound: int):
        self.items: deque[tuple[int, str, dict]] = deque(maxlen=bound)
        self.wakeup = asyncio.Event()

    def push(self, item: tuple[int, str, dict]) -> None:
        self.items.append(item)  # maxlen drops the oldest
        self.wakeup.set()


class Broadcast:
    """Sequence-numbered fan-out buffer for the live stream."""

    def __init__(self, history: int = STREAM_HISTORY, buffer: int = SUBSCRIBER_BUFFER):
        self._history: deque[tuple[int, str, dict]] = deque(maxlen=history)
        self._subscribers: set[_Subscriber] = set()
        self._buffer = buffer
        self.seq = 0

    def publish(self, event: str, data: dict) -> int:
        self.seq += 1
        item = (self.seq, event, data)
        self._history.append(item)
        for sub in self._subscribers:
            sub.push(item)
        return self.seq

    def subscribe(self, after: int | None = None) -> _Subscriber:
        sub = _Subscriber(self._buffer)
        if after is not None:
            for item in self._history:
                if item[0] > after:
                    sub.push(item)
        self._subscribers.add(sub)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        self._subscribers.discard(sub)


# ---------------------------------------------------------------------------
# state owner
# ---------------------------------------------------------------------------

class StateOwner:
    """Runs submitted closures one at a time, off the event loop."""

    def __init__(self):
        self._commands: asyncio.Queue = asyncio.Queue()
        self._task: asyncio.Task | None = None

    def start(self) -> None:
        self._task = asyncio.create_task(self._loop())

    async def stop(self) -> None:
        if self._task is not None:
            await self._commands.put(None)
            await self._task
            self._task = None

    async def _loop(self) -> None:
        loop = asyncio.get_running_loop()
        while True:
            cmd = await self._commands.get()
            if cmd is None:
                return
            fn, fut = cmd
            try:
                result = await loop.run_in_executor(None, fn)
            except BaseException as e:
                if not fut.cancelled():
                    fut.set_exception(e)
            else:
                if not fut.cancelled():
                    fut.set_result(result)

    async def submit(self, fn):
        fut = asyncio.get_running_loop().create_future()
        await self._commands.put((fn, fut))
        return await fut


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplaySpec:
    """Drive the emulator once at startup and stream the run live."""

    cycles: int = 30
    seed: int = 0
    run_id: str = "replay-1"
    time_scale: float = 0.0  # seconds of cell time per wall second; <= 0 plays flat out
    assess: bool = True  # stage a proposal bundle when the run completes


@dataclass
class _RunState:
    records: list[LogRecord] = field(default_factory=list)
    complete: bool = False


class CellService:
    """Everything the endpoints share: state owner, fan-out, run store."""

    def __init__(self, orch: Orchestrator, data_dir=None, replay: ReplaySpec | None = None):
        self.orch = orch
        self.data_dir = Path(data_dir) if data_dir else None
        self.replay = replay
        self.owner = StateOwner()
        self.broadcast = Broadcast()
        self.runs: dict[str, _RunState] = {}
        self.latest_joints: dict | None = None
        self._replay_task: asyncio.Task | None = None

    async def start(self) -> None:
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        self.owner.start()
        if self.replay is not None:
            self._replay_task = asyncio.create_task(self._run_replay(self.replay))

    async def stop(self) -> None:
        if self._replay_task is not None:
            self._replay_task.cancel()
            try:
                await self._replay_task
            except asyncio.CancelledError:
                pass
            self._replay_task = None
        await self.owner.stop()

    def publish_proposal(self, proposal: Proposal) -> None:
        self.broadcast.publish("proposal", proposal_doc(proposal))

    async def _run_replay(self, spec: ReplaySpec) -> None:
        loop = asyncio.get_running_loop()
        orch = self.orch
        emulator = PhysicalEmulator(
            orch.scene,
            orch.plan,
            orch.build(),
            variation=orch.variation,
            seed=spec.seed,
        )
        log_path = self.data_dir / f"{spec.run_id}.log" if self.data_dir else None
        run = await loop.run_in_executor(
            None, partial(emulator.run, spec.cycles, log_path=log_path, run_id=spec.run_id)
        )
        state = self.runs.setdefault(spec.run_id, _RunState())

        # one ordered feed: telemetry frames and log records merged by time
        def at(m) -> int:
            return m.uptime_ms * 1000 if isinstance(m, Heartbeat) else m.t_us

        feed: list[tuple[int, int, object]] = [(at(m), 0, m) for m in run.frames]
        feed += [(r.t_us, 1, r) for r in run.records]
        feed.sort(key=lambda item: (item[0], item[1]))

        last_t = 0
        for i, (t_us, _, item) in enumerate(feed):
            if spec.time_scale > 0:
                await asyncio.sleep((t_us - last_t) / 1e6 / spec.time_scale)
            elif i % 512 == 0:
                await asyncio.sleep(0)  # let reads interleave with a flat-out replay
            last_t = t_us
            if isinstance(item, LogRecord):
                state.records.append(item)
                self.broadcast.publish("log_record", record_doc(spec.run_id, item))
            else:
                event, data = message_event(item)
                if event == "joint_state":
                    self.latest_joints = data
                self.broadcast.publish(event, data)

        state.complete = True
        summary = summarize(state.records)

        def finish() -> list[Proposal]:
            orch.record_run(spec.run_id, summary)
            if spec.assess:
                return orch.run_assessment(spec.run_id, actor="assessor")
            return []

        try:
            proposals = await self.owner.submit(finish)
        except (PhaseError, GovernanceError) as e:
            log.warning("assessment after replay %s failed: %s", spec.run_id, e)
            proposals = []
        self.broadcast.publish(
            "run_complete",
            {"run": spec.run_id, "completed": summary.completed, "proposals": len(proposals)},
        )
        for p in proposals:
            self.publish_proposal(p)


# ---------------------------------------------------------------------------
# the application
# ---------------------------------------------------------------------------

class DecisionBody(BaseModel):
    approve: bool
    actor: str
    note: str = ""


class PhaseBody(BaseModel):
    to: str
    actor: str = "operator"


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status)


def create_app(
    orch: Orchestrator,
    data_dir=None,
    replay: ReplaySpec | None = None,
) -> FastAPI:
    """Application over one orchestrator; replay needs it in operation phase."""
    service = CellService(orch, data_dir=data_dir, replay=replay)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        await service.start()
        yield
        await service.stop()

    app = FastAPI(title="twincell", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(KeyError)
    async def _not_found(request: Request, exc: KeyError):
        return _error(404, "not_found", str(exc).strip("'\""))

    @app.exception_handler(PhaseError)
    async def _phase(request: Request, exc: PhaseError):
        return _error(409, "phase", str(exc))

    @app.exception_handler(GovernanceError)
    async def _governance(request: Request, exc: GovernanceError):
        return _error(409, "conflict", str(exc))

    for invalid in (AllocationError, ProgramError, SceneValidationError, WallError):
        @app.exception_handler(invalid)
        async def _invalid(request: Request, exc: Exception):
            return _error(422, "validation", str(exc))

    # -- reads ------------------------------------------------------------

    @app.get("/v1/phase")
    async def get_phase():
        def read():
            return {
                "phase": service.orch.phase.value,
                "allowed": sorted(p.value for p in ALLOWED_TRANSITIONS[service.orch.phase]),
            }

        return await service.owner.submit(read)

    @app.get("/v1/scene")
    async def get_scene():
        def read():
            o = service.orch
            return {
                "scene": scene_doc(o.scene),
                "plan": plan_doc(o.plan),
                "walls": [
                    {"point": list(w.point), "normal": list(w.normal)} for w in o.walls
                ],
                "robot_speed_factor": o.robot_speed_factor,
                "program": {
                    "name": o.build().program.name,
                    "version": o.build().program.version,
                    "instructions": len(o.build().program.instructions),
                },
            }

        return await service.owner.submit(read)

    @app.get("/v1/joints")
    async def get_joints():
        return {"joints": service.latest_joints}

    @app.get("/v1/runs")
    async def get_runs():
        return {
            "runs": [
                {"run": run_id, "complete": state.complete, "records": len(state.records)}
                for run_id, state in service.runs.items()
            ]
        }

    @app.get("/v1/summary/{run_id}")
    async def get_summary(run_id: str):
        def read():
            state = service.runs.get(run_id)
            if state is not None:
                return summary_doc(
                    run_id, summarize(state.records), state.complete, service.orch.shift_s
                )
            summary = service.orch.summaries.get(run_id)
            if summary is None:
                raise KeyError(f"unknown run {run_id!r}")
            return summary_doc(run_id, summary, True, service.orch.shift_s)

        return await service.owner.submit(read)

    @app.get("/v1/proposals")
    async def get_proposals():
        def read():
            return {
                "proposals": [proposal_doc(p) for p in service.orch.proposals.values()],
                "program_version": service.orch.build().program.version,
            }

        return await service.owner.submit(read)

    # -- writes -----------------------------------------------------------

    @app.post("/v1/whatif")
    async def post_whatif(body: dict):
        def evaluate():
            change = change_from_doc(body)
            result = service.orch.what_if(change)
            return {
                "change": result.action,
                "cycle_before_s": result.cycle_before_s,
                "cycle_after_s": result.cycle_after_s,
                "throughput_before": result.throughput_before,
                "throughput_after": result.throughput_after,
                "digest": result.digest,
            }

        try:
            return await service.owner.submit(evaluate)
        except GovernanceError as e:
            return _error(422, "validation", str(e))
        except KeyError as e:
            # unknown resource or task named by the change document
            return _error(422, "validation", str(e).strip("'\""))

    @app.post("/v1/proposals/{proposal_id}/decision")
    async def post_decision(proposal_id: str, body: DecisionBody):
        def decide():
            proposal = service.orch.decide(
                proposal_id, body.approve, actor=body.actor, note=body.note
            )
            return proposal

        proposal = await service.owner.submit(decide)
        service.publish_proposal(proposal)
        return proposal_doc(proposal)

    @app.post("/v1/phase")
    async def post_phase(body: PhaseBody):
        def advance():
            try:
                to = TwinPhase(body.to)
            except ValueError:
                raise GovernanceError(f"unknown phase {body.to!r}") from None
            service.orch.transition(to, actor=body.actor)
            return {"phase": service.orch.phase.value}

        try:
            return await service.owner.submit(advance)
        except GovernanceError as e:
            return _error(422, "validation", str(e))

    # -- stream -----------------------------------------------------------

    @app.get("/v1/stream")
    async def stream(request: Request, last_event_id: str | None = Header(default=None)):
        after = None
        if last_event_id is not None:
            try:
                after = int(last_event_id)
            except ValueError:
                after = None
        start_seq = after if after is not None else service.broadcast.seq
        sub = service.broadcast.subscribe(after=after)

        async def gen():
            last = start_seq
            sent = 0
            try:
                yield ": connected\n\n"
                while True:
                    while not sub.items:
                        sub.wakeup.clear()
                        if await request.is_disconnected():
                            return
                        try:
                            await asyncio.wait_for(sub.wakeup.wait(), timeout=KEEPALIVE_S)
                        except asyncio.TimeoutError:
                            yield ": keepalive\n\n"
                    seq, event, data = sub.items.popleft()
                    if seq > last + 1:
                        gap = {"after": last, "next": seq, "missed": seq - last - 1}
                        yield f"event: gap\ndata: {_json(gap)}\n\n"
                    yield f"id: {seq}\nevent: {event}\ndata: {_json(data)}\n\n"
                    last = seq
                    sent += 1
                    if sent % 128 == 0 and await request.is_disconnected():
                        return
            finally:
                service.broadcast.unsubscribe(sub)

        return StreamingResponse(gen(), media_type="text/event-stream")

    return app


def _json(data: dict) -> str:
    return json.dumps(data, separators=(",", ":"))


def serve(
    orch: Orchestrator,
    listen: str | None = None,
    data_dir=None,
    replay: ReplaySpec | None = None,
) -> None:
    """Block serving the API; listen/data dir fall back to env vars."""
    import uvicorn

    address = listen or os.environ.get(LISTEN_ENV, DEFAULT_LISTEN)
    host, _, port = address.rpartition(":")
    if not host:
        raise ValueError(f"listen address {address!r} is not host:port")
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    app = create_app(orch, data_dir=data_dir, replay=replay)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
