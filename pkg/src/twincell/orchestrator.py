"""Lifecycle and governance around the cell model.

The orchestrator owns the authoritative scene, plan and robot program,
moves them through lifecycle phases, and turns run evidence into
improvement proposals.  Nothing mutates that state except an applied
proposal, and a proposal applies only through a recorded approval; a
what-if evaluates any action or overlay on a copy and provably leaves
the authoritative state untouched (digest-compared).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

from .allocation import (
    AllocationError,
    AssemblyPlan,
    HUMAN,
    ROBOT,
    TaskClass,
    balance,
    classify_scene,
)
from .datalog import (
    InsufficientDataError,
    RunSummary,
    predict_throughput,
)
from .geometry import Pose
from .program import (
    ProgramBuild,
    ProgramError,
    ProgramLayout,
    apply_virtual_wall,
    default_motions,
    generate_program,
    serialize,
)
from .scene import ResourceKind, Scene, SceneValidationError, relocate_resource
from .sensors import SensorError
from .simulate import VariationModel, run_cycle, simulate_shift
from .trajectory import VirtualWall
from .twinlink import virtual_commissioning

log = logging.getLogger(__name__)

LONG_WAIT_SHARE = 0.15  # long waits per completed cycle that trigger a finding
TRIP_SHARE = 0.20  # force trips per completed cycle that trigger a finding
THROUGHPUT_SLACK = 0.93  # observed/ideal ratio below which throughput is low
FIXTURE_PULL_MM = 80.0  # how far a relocation proposal pulls fixtures inward


class PhaseError(RuntimeError):
    pass


class GovernanceError(RuntimeError):
    pass


class TwinPhase(str, Enum):
    DESIGN = "design"
    DEVELOPMENT = "development"
    COMMISSIONING = "commissioning"
    OPERATION = "operation"
    MAINTENANCE = "maintenance"


ALLOWED_TRANSITIONS: dict[TwinPhase, frozenset[TwinPhase]] = {
    TwinPhase.DESIGN: frozenset({TwinPhase.DEVELOPMENT}),
    TwinPhase.DEVELOPMENT: frozenset({TwinPhase.COMMISSIONING, TwinPhase.DESIGN}),
    TwinPhase.COMMISSIONING: frozenset({TwinPhase.OPERATION, TwinPhase.DEVELOPMENT}),
    TwinPhase.OPERATION: frozenset({TwinPhase.MAINTENANCE, TwinPhase.DESIGN}),
    TwinPhase.MAINTENANCE: frozenset({TwinPhase.OPERATION}),
}


# ---------------------------------------------------------------------------
# actions and proposals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelocateFixture:
    resource_id: str
    pose: Pose

    kind = "relocate_fixture"


@dataclass(frozen=True)
class ReallocateTask:
    task_id: str
    resource: str  # "robot" | "human"

    kind = "reallocate_task"


@dataclass(frozen=True)
class AddVirtualWall:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    kind = "add_virtual_wall"


@dataclass(frozen=True)
class RetimePlan:
    robot_speed_factor: float

    kind = "retime_plan"

    def __post_init__(self):
        if not 0.5 <= self.robot_speed_factor <= 1.25:
            raise GovernanceError(
                f"robot_speed_factor {self.robot_speed_factor} outside [0.5, 1.25]"
            )


Action = RelocateFixture | ReallocateTask | AddVirtualWall | RetimePlan


def action_to_doc(action: Action) -> dict:
    if isinstance(action, RelocateFixture):
        return {
            "kind": action.kind,
            "resource_id": action.resource_id,
            "position": list(action.pose.position),
            "orientation": list(action.pose.orientation),
        }
    if isinstance(action, ReallocateTask):
        return {"kind": action.kind, "task_id": action.task_id, "resource": action.resource}
    if isinstance(action, AddVirtualWall):
        return {"kind": action.kind, "point": list(action.point), "normal": list(action.normal)}
    return {"kind": action.kind, "robot_speed_factor": action.robot_speed_factor}


def action_from_doc(doc: dict) -> Action:
    kind = doc.get("kind")
    try:
        if kind == "relocate_fixture":
            return RelocateFixture(
                doc["resource_id"],
                Pose.make(doc["position"], doc.get("orientation", (1.0, 0.0, 0.0, 0.0))),
            )
        if kind == "reallocate_task":
            return ReallocateTask(doc["task_id"], doc["resource"])
        if kind == "add_virtual_wall":
            return AddVirtualWall(tuple(doc["point"]), tuple(doc["normal"]))
        if kind == "retime_plan":
            return RetimePlan(float(doc["robot_speed_factor"]))
    except KeyError as e:
        raise GovernanceError(f"action {kind!r}: missing {e}") from None
    raise GovernanceError(f"unknown action kind {kind!r}")


@dataclass(frozen=True)
class Overlay:
    """What-if patch: any combination of the governed change kinds plus
    plain duration overrides, evaluated together on one scratch copy.
    An empty overlay is the identity and reports baseline metrics.
    """

    relocations: tuple[tuple[str, Pose], ...] = ()
    reallocations: tuple[tuple[str, str], ...] = ()  # (task, "robot"|"human")
    duration_overrides: tuple[tuple[str, str, float], ...] = ()  # (task, resource, s)
    walls: tuple[VirtualWall, ...] = ()
    robot_speed_factor: float | None = None

    def __post_init__(self):
        if self.robot_speed_factor is not None and not 0.5 <= self.robot_speed_factor <= 1.25:
            raise GovernanceError(
                f"robot_speed_factor {self.robot_speed_factor} outside [0.5, 1.25]"
            )
        for tid, _, seconds in self.duration_overrides:
            if seconds <= 0:
                raise GovernanceError(f"override for {tid!r} must be positive, got {seconds}")


def action_overlay(action: Action) -> Overlay:
    if isinstance(action, RelocateFixture):
        return Overlay(relocations=((action.resource_id, action.pose),))
    if isinstance(action, ReallocateTask):
        return Overlay(reallocations=((action.task_id, action.resource),))
    if isinstance(action, AddVirtualWall):
        return Overlay(walls=(VirtualWall(action.point, action.normal),))
    if isinstance(action, RetimePlan):
        return Overlay(robot_speed_factor=action.robot_speed_factor)
    raise GovernanceError(f"cannot evaluate {type(action).__name__}")


def overlay_to_doc(overlay: Overlay) -> dict:
    return {
        "kind": "overlay",
        "relocations": [
            {"resource_id": rid, "position": list(p.position), "orientation": list(p.orientation)}
            for rid, p in overlay.relocations
        ],
        "reallocations": [
            {"task_id": tid, "resource": res} for tid, res in overlay.reallocations
        ],
        "duration_overrides": [
            {"task_id": tid, "resource": res, "seconds": s}
            for tid, res, s in overlay.duration_overrides
        ],
        "walls": [{"point": list(w.point), "normal": list(w.normal)} for w in overlay.walls],
        "robot_speed_factor": overlay.robot_speed_factor,
    }


def overlay_from_doc(doc: dict) -> Overlay:
    try:
        return Overlay(
            relocations=tuple(
                (r["resource_id"], Pose.make(r["position"], r.get("orientation", (1.0, 0.0, 0.0, 0.0))))
                for r in doc.get("relocations", ())
            ),
            reallocations=tuple(
                (r["task_id"], r["resource"]) for r in doc.get("reallocations", ())
            ),
            duration_overrides=tuple(
                (d["task_id"], d["resource"], float(d["seconds"]))
                for d in doc.get("duration_overrides", ())
            ),
            walls=tuple(
                VirtualWall(tuple(w["point"]), tuple(w["normal"])) for w in doc.get("walls", ())
            ),
            robot_speed_factor=(
                None if doc.get("robot_speed_factor") is None else float(doc["robot_speed_factor"])
            ),
        )
    except KeyError as e:
        raise GovernanceError(f"overlay: missing {e}") from None


def change_from_doc(doc: dict) -> Action | Overlay:
    if doc.get("kind") == "overlay":
        return overlay_from_doc(doc)
    return action_from_doc(doc)


def change_to_doc(change: Action | Overlay) -> dict:
    if isinstance(change, Overlay):
        return overlay_to_doc(change)
    return action_to_doc(change)


class ProposalState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"
    APPLIED = "applied"


@dataclass
class Proposal:
    id: str
    action: Action
    rationale: str
    state: ProposalState = ProposalState.PENDING
    decided_by: str | None = None
    decision_note: str = ""
    applied_version: int | None = None


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    event: str  # proposal_created | decision | applied | phase_change | what_if | assessment | suppressed
    actor: str
    detail: str


@dataclass(frozen=True)
class Finding:
    kind: str  # long_waits | force_trips | low_throughput
    severity: float  # observed share or shortfall ratio
    evidence: str


@dataclass(frozen=True)
class WhatIfResult:
    action: dict
    cycle_before_s: float
    cycle_after_s: float
    throughput_before: int
    throughput_after: int
    collisions_before: int | None
    collisions_after: int | None
    digest: str  # authoritative state digest, unchanged by the evaluation


# ---------------------------------------------------------------------------
# assessment playbook
# ---------------------------------------------------------------------------

def assess_summary(summary: RunSummary, plan: AssemblyPlan, shift_s: float = 28800.0) -> list[Finding]:
    """Findings worth acting on, from one run's summary."""
    findings: list[Finding] = []
    if summary.completed == 0:
        return findings
    wait_share = summary.long_waits / summary.completed
    if wait_share > LONG_WAIT_SHARE:
        findings.append(
            Finding(
                "long_waits",
                wait_share,
                f"{summary.long_waits} waits over {summary.wait_threshold_s:g} s "
                f"in {summary.completed} cycles",
            )
        )
    trip_share = summary.force_trips / summary.completed
    if trip_share > TRIP_SHARE:
        findings.append(
            Finding(
                "force_trips",
                trip_share,
                f"{summary.force_trips} force trips in {summary.completed} cycles",
            )
        )
    try:
        observed = predict_throughput(summary, shift_s)
    except InsufficientDataError:
        return findings
    ideal = int(shift_s // plan.cycle_s) if plan.cycle_s > 0 else 0
    if ideal > 0 and observed < THROUGHPUT_SLACK * ideal:
        findings.append(
            Finding(
                "low_throughput",
                observed / ideal,
                f"predicted {observed}/shift against an ideal {ideal}",
            )
        )
    return findings


class Orchestrator:
    """Single writer for scene, plan and program state."""

    def __init__(
        self,
        scene: Scene,
        weights=None,
        variation: VariationModel | None = None,
        seed: int = 0,
        phase: TwinPhase = TwinPhase.DESIGN,
        shift_s: float = 28800.0,
    ):
        self.scene = scene
        self.weights = weights
        self.variation = variation
        self.seed = seed
        self.shift_s = shift_s
        self.phase = phase
        self.walls: tuple[VirtualWall, ...] = ()
        self.robot_speed_factor = 1.0
        self.plan: AssemblyPlan = balance(scene, weights=weights)
        self._build: ProgramBuild | None = None
        self.proposals: dict[str, Proposal] = {}
        self.audit: list[AuditEntry] = []
        self.summaries: dict[str, RunSummary] = {}
        self._counter = 0

    # -- bookkeeping --------------------------------------------------------

    def _record(self, event: str, actor: str, detail: str) -> None:
        self.audit.append(AuditEntry(len(self.audit), event, actor, detail))

    def _require_phase(self, *phases: TwinPhase) -> None:
        if self.phase not in phases:
            allowed = ", ".join(p.value for p in phases)
            raise PhaseError(f"not allowed in phase {self.phase.value}; needs {allowed}")

    def transition(self, to: TwinPhase, actor: str = "system") -> None:
        to = TwinPhase(to)
        if to not in ALLOWED_TRANSITIONS[self.phase]:
            raise PhaseError(f"cannot move {self.phase.value} -> {to.value}")
        self._record("phase_change", actor, f"{self.phase.value} -> {to.value}")
        self.phase = to

    # -- program ------------------------------------------------------------

    def build(self) -> ProgramBuild:
        """Current program, generated on first use and after every change."""
        if self._build is None:
            motions = default_motions(self.scene, self.plan, self.walls)
            built = generate_program(
                self.scene, self.plan, motions, walls=self.walls, name="cell_program"
            )
            self._build = built
        return self._build

    def _regenerate(self, version: int) -> None:
        motions = default_motions(self.scene, self.plan, self.walls)
        built = generate_program(
            self.scene, self.plan, motions, walls=self.walls, name="cell_program"
        )
        self._build = ProgramBuild(
            replace(built.program, version=version), built.layout
        )

    def state_digest(self) -> str:
        """Stable digest of everything a proposal is allowed to change."""
        from .scene import emit_scene

        h = hashlib.sha256()
        h.update(emit_scene(self.scene).encode())
        h.update(repr(self.plan).encode())
        h.update(serialize(self.build().program))
        h.update(self.phase.value.encode())
        h.update(repr(sorted(self.proposals)).encode())
        h.update(f"{self.robot_speed_factor}".encode())
        return h.hexdigest()

    # -- runs and assessment --------------------------------------------------

    def record_run(self, run_id: str, summary: RunSummary) -> None:
        self.summaries[run_id] = summary

    def predict_shift(self) -> int:
        result = simulate_shift(
            self.scene,
            self.plan,
            shift_s=self.shift_s,
            variation=self.variation,
            seed=self.seed,
        )
        return result.completed

    def run_assessment(self, run_id: str, actor: str = "system") -> list[Proposal]:
        """Sense a run, analyze it, and stage a proposal bundle.

        Candidates are rehearsed cumulatively on one scratch copy, in
        bundle order.  A candidate that fails to apply or predicts a
        worse cycle than the state it would land on is suppressed (with
        an audit record), never staged.
        """
        self._require_phase(TwinPhase.OPERATION, TwinPhase.MAINTENANCE)
        if any(p.state is ProposalState.PENDING for p in self.proposals.values()):
            raise GovernanceError("a pending proposal bundle already exists")
        summary = self.summaries.get(run_id)
        if summary is None:
            raise KeyError(f"unknown run {run_id!r}")
        findings = assess_summary(summary, self.plan, self.shift_s)
        self._record(
            "assessment",
            actor,
            f"run {run_id}: " + (", ".join(f.kind for f in findings) or "no findings"),
        )
        created: list[Proposal] = []
        scratch = self._scratch()
        for action, why in self._playbook(findings):
            snapshot = (
                scratch.scene,
                scratch.plan,
                scratch.walls,
                scratch.robot_speed_factor,
                scratch._build,
            )
            cycle_before = scratch.plan.cycle_s
            try:
                scratch._apply_patch(action_overlay(action))
            except (AllocationError, GovernanceError, ProgramError, SceneValidationError) as e:
                self._record("suppressed", actor, f"{action_to_doc(action)}: {e}")
                (
                    scratch.scene,
                    scratch.plan,
                    scratch.walls,
                    scratch.robot_speed_factor,
                    scratch._build,
                ) = snapshot
                continue
            if scratch.plan.cycle_s > cycle_before + 1e-9:
                self._record(
                    "suppressed",
                    actor,
                    f"{action_to_doc(action)}: cycle {cycle_before:g} s -> "
                    f"{scratch.plan.cycle_s:g} s",
                )
                (
                    scratch.scene,
                    scratch.plan,
                    scratch.walls,
                    scratch.robot_speed_factor,
                    scratch._build,
                ) = snapshot
                continue
            created.append(self._stage(action, why, actor))
        return created

    def _playbook(self, findings: list[Finding]) -> list[tuple[Action, str]]:
        """One coherent bundle; later actions assume earlier ones land."""
        out: list[tuple[Action, str]] = []
        fixture_x = {f.id: f.pose.position[0] for f in self._work_fixtures()}
        for finding in findings:
            if finding.kind == "long_waits":
                for fixture in self._work_fixtures():
                    p = fixture.pose.position
                    target = Pose(
                        (p[0] - FIXTURE_PULL_MM, p[1], p[2]), fixture.pose.orientation
                    )
                    fixture_x[fixture.id] = target.position[0]
                    out.append(
                        (
                            RelocateFixture(fixture.id, target),
                            f"pull {fixture.id} {FIXTURE_PULL_MM:g} mm toward the robot; "
                            f"{finding.evidence}",
                        )
                    )
                either = self._either_tasks()
                if either:
                    out.append(
                        (
                            ReallocateTask(either[0], HUMAN),
                            f"shift boundary task {either[0]} to the operator; "
                            f"{finding.evidence}",
                        )
                    )
            elif finding.kind == "force_trips":
                point, normal = self._wall_suggestion(fixture_x)
                out.append(
                    (
                        AddVirtualWall(point, normal),
                        f"fence the robot at the fixture envelope; {finding.evidence}",
                    )
                )
            elif finding.kind == "low_throughput":
                out.append(
                    (
                        RetimePlan(min(self.robot_speed_factor * 1.1, 1.25)),
                        f"raise robot pace 10%; {finding.evidence}",
                    )
                )
        return out

    def _work_fixtures(self):
        return [r for r in self.scene.resources if r.kind is ResourceKind.FIXTURE]

    def _either_tasks(self) -> list[str]:
        classes = classify_scene(self.scene, self.weights)
        return sorted(tid for tid, (_, cls) in classes.items() if cls is TaskClass.EITHER)

    def _wall_suggestion(
        self, fixture_x: dict[str, float]
    ) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
        """Plane flush with the far edge of the fixture envelope.

        Everything the robot legitimately reaches sits at or before that
        edge; beyond it is the operator's side.
        """
        fixtures = self._work_fixtures()
        if not fixtures:
            raise GovernanceError("no fixtures to fence against")
        edge = 0.0
        for f in fixtures:
            depth = max((s.dimensions[0] for s in f.shapes), default=0.0)
            edge = max(edge, fixture_x[f.id] + depth / 2.0)
        return (edge, 0.0, 0.0), (1.0, 0.0, 0.0)

    # -- proposals ------------------------------------------------------------

    def _stage(self, action: Action, rationale: str, actor: str) -> Proposal:
        self._counter += 1
        proposal = Proposal(f"p-{self._counter:03d}", action, rationale)
        self.proposals[proposal.id] = proposal
        self._record("proposal_created", actor, f"{proposal.id}: {action_to_doc(action)}")
        return proposal

    def stage_proposal(self, action: Action, rationale: str, actor: str = "system") -> Proposal:
        self._require_phase(TwinPhase.OPERATION, TwinPhase.MAINTENANCE)
        return self._stage(action, rationale, actor)

    def proposal(self, proposal_id: str) -> Proposal:
        try:
            return self.proposals[proposal_id]
        except KeyError:
            raise KeyError(f"unknown proposal {proposal_id!r}") from None

    def decide(self, proposal_id: str, approve: bool, actor: str, note: str = "") -> Proposal:
        """Record a decision; approval applies the action immediately."""
        proposal = self.proposals.get(proposal_id)
        if proposal is None:
            raise KeyError(f"unknown proposal {proposal_id!r}")
        if proposal.state is not ProposalState.PENDING:
            raise GovernanceError(f"proposal {proposal_id} already {proposal.state.value}")
        if not actor:
            raise GovernanceError("a decision needs a named actor")
        proposal.state = ProposalState.APPROVED if approve else ProposalState.REJECTED
        proposal.decided_by = actor
        proposal.decision_note = note
        self._record(
            "decision", actor, f"{proposal_id}: {'approved' if approve else 'rejected'} {note}".strip()
        )
        if approve:
            self._apply(proposal, actor)
        return proposal

    def _apply(self, proposal: Proposal, actor: str) -> None:
        if proposal.state is not ProposalState.APPROVED:
            raise GovernanceError(f"proposal {proposal.id} is not approved")
        decision_recorded = any(
            e.event == "decision" and e.detail.startswith(f"{proposal.id}: approved")
            for e in self.audit
        )
        if not decision_recorded:
            raise GovernanceError(f"no recorded approval for {proposal.id}")
        old_version = self.build().program.version
        self._apply_action(proposal.action)
        self._regenerate(old_version + 1)
        proposal.state = ProposalState.APPLIED
        proposal.applied_version = old_version + 1
        self._record(
            "applied", actor, f"{proposal.id}: program version {old_version} -> {old_version + 1}"
        )

    def _apply_action(self, action: Action) -> None:
        self._apply_patch(action_overlay(action))

    def _apply_patch(self, overlay: Overlay) -> None:
        """Mutate scene, plan, walls and pace in one consistent step.

        The plan is rebalanced at most once, with every override folded
        in, so a pace change and a reallocation in the same patch cannot
        shadow each other.  Wall checks run against a program built for
        the patched layout.
        """
        for resource_id, pose in overlay.relocations:
            self.scene = relocate_resource(self.scene, resource_id, pose)
        classes = None
        if overlay.reallocations:
            classes = {
                tid: cls for tid, (_, cls) in classify_scene(self.scene, self.weights).items()
            }
            for task_id, resource in overlay.reallocations:
                if resource not in (ROBOT, HUMAN):
                    raise GovernanceError(f"unknown resource {resource!r}")
                if task_id not in classes:
                    raise GovernanceError(f"unknown task {task_id!r}")
                classes[task_id] = TaskClass.ROBOT if resource == ROBOT else TaskClass.MANUAL
        if overlay.robot_speed_factor is not None:
            self.robot_speed_factor = overlay.robot_speed_factor
        needs_balance = (
            classes is not None
            or overlay.robot_speed_factor is not None
            or bool(overlay.duration_overrides)
        )
        if needs_balance:
            durations = {}
            for task in self.scene.tasks:
                if task.robot_s > 0:
                    durations[(task.id, ROBOT)] = task.robot_s / self.robot_speed_factor
                if task.manual_s > 0:
                    durations[(task.id, HUMAN)] = task.manual_s
            known = {task.id for task in self.scene.tasks}
            for task_id, resource, seconds in overlay.duration_overrides:
                if resource not in (ROBOT, HUMAN):
                    raise GovernanceError(f"unknown resource {resource!r}")
                if task_id not in known:
                    raise GovernanceError(f"unknown task {task_id!r}")
                durations[(task_id, resource)] = float(seconds)
            self.plan = balance(
                self.scene, classes=classes, durations=durations, weights=self.weights
            )
        if overlay.relocations or needs_balance:
            self._build = None  # program no longer matches the layout
        for wall in overlay.walls:
            # target check catches walls that would orphan programmed poses
            apply_virtual_wall(self.build().program, wall, self.scene.robot)
            self.walls = self.walls + (wall,)
            self._build = None

    # -- what-if ----------------------------------------------------------------

    def _scratch(self) -> Orchestrator:
        """Disposable copy sharing no mutable containers with the authority."""
        twin = Orchestrator(
            self.scene,
            weights=self.weights,
            variation=self.variation,
            seed=self.seed,
            phase=TwinPhase.OPERATION,
            shift_s=self.shift_s,
        )
        twin.walls = self.walls
        twin.robot_speed_factor = self.robot_speed_factor
        twin.plan = self.plan
        return twin

    def what_if(self, change: Action | Overlay, check_collisions: bool = False) -> WhatIfResult:
        """Evaluate an action or overlay on a scratch copy of the whole state."""
        overlay = change if isinstance(change, Overlay) else action_overlay(change)
        digest_before = self.state_digest()
        scratch = self._scratch()
        # played, not read off the plan, so gating problems surface here
        cycle_before = run_cycle(scratch.scene, scratch.plan).report.cycle_s
        throughput_before = scratch.predict_shift()
        collisions_before = None
        collisions_after = None
        if check_collisions:
            collisions_before = len(
                virtual_commissioning(scratch.scene, scratch.build().program, stride_us=40_000)
            )
        scratch._apply_patch(overlay)
        cycle_after = run_cycle(scratch.scene, scratch.plan).report.cycle_s
        throughput_after = scratch.predict_shift()
        if check_collisions:
            collisions_after = len(
                virtual_commissioning(scratch.scene, scratch.build().program, stride_us=40_000)
            )
        digest_after = self.state_digest()
        if digest_after != digest_before:
            raise GovernanceError("what-if leaked into authoritative state")
        self._record("what_if", "system", f"{change_to_doc(change)}")
        return WhatIfResult(
            action=change_to_doc(change),
            cycle_before_s=cycle_before,
            cycle_after_s=cycle_after,
            throughput_before=throughput_before,
            throughput_after=throughput_after,
            collisions_before=collisions_before,
            collisions_after=collisions_after,
            digest=digest_after,
        )
