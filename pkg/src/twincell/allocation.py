"""Task scoring, robot/manual classification and line balancing.

The automation-potential score is a weighted sum over five attribute
scores in [0,1] (gripping feature, joining method, feeding, safety,
symmetry), with hard disqualifiers: a part the robot cannot lift or hold
scores 0 outright.  Classification applies two thresholds; balancing is
a greedy list schedule with critical-path priority.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .scene import JoiningMethod, Scene, TaskDef

log = logging.getLogger(__name__)

THETA_MANUAL = 0.4
THETA_ROBOT = 0.7

ROBOT = "robot"
HUMAN = "human"

# how well each joining method suits a gripper-equipped arm
JOINING_AUTOMATION = {
    JoiningMethod.PLACE: 1.0,
    JoiningMethod.SCREW: 0.8,
    JoiningMethod.SNAP: 0.4,
    JoiningMethod.ROUTE: 0.1,
}

WEIGHT_KEYS = ("gripping", "joining", "feeding", "safety", "symmetry")
DEFAULT_WEIGHTS = {k: 1.0 / len(WEIGHT_KEYS) for k in WEIGHT_KEYS}


class AllocationError(ValueError):
    pass


class TaskClass(str, Enum):
    ROBOT = "Robot"
    MANUAL = "Manual"
    EITHER = "Either"


@dataclass(frozen=True)
class TaskAttributes:
    component_id: str
    fits_gripper: bool
    within_payload: bool
    has_gripping_feature: bool
    joining_method: JoiningMethod
    feeding_complexity: float  # 1 = trivially feedable by machine
    safety_implication: float  # 1 = safest to automate
    symmetry: float  # 1 = fully symmetric

    def __post_init__(self):
        for name in ("feeding_complexity", "safety_implication", "symmetry"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AllocationError(f"{name} {v} outside [0,1]")


def attributes_for(scene: Scene, task: TaskDef) -> TaskAttributes:
    comp = scene.component(task.component_id)
    return TaskAttributes(
        component_id=comp.id,
        fits_gripper=scene.gripper.fits(comp.bounding_width),
        within_payload=comp.mass <= scene.robot.payload_capacity,
        has_gripping_feature=comp.has_gripping_feature,
        joining_method=comp.joining_method,
        feeding_complexity=task.ratings.feeding_complexity,
        safety_implication=task.ratings.safety_implication,
        symmetry=task.ratings.symmetry,
    )


def normalize_weights(weights) -> dict[str, float]:
    w = dict(weights)
    unknown = set(w) - set(WEIGHT_KEYS)
    if unknown:
        raise AllocationError(f"unknown weight keys {sorted(unknown)}")
    total = sum(w.get(k, 0.0) for k in WEIGHT_KEYS)
    if total <= 0:
        raise AllocationError("weights must have a positive sum")
    return {k: w.get(k, 0.0) / total for k in WEIGHT_KEYS}


def score_task(attrs: TaskAttributes, weights=None) -> float:
    """Automation potential in [0,1]; payload/gripper violations force 0."""
    if weights is None:
        w = DEFAULT_WEIGHTS
    else:
        w = {k: float(weights.get(k, 0.0)) for k in WEIGHT_KEYS}
        if any(v < 0 for v in w.values()):
            raise AllocationError("weights must be non-negative")
        if abs(sum(w.values()) - 1.0) > 1e-9:
            raise AllocationError("weights must sum to 1 (see normalize_weights)")
    if not attrs.within_payload or not attrs.fits_gripper:
        return 0.0
    parts = {
        "gripping": 1.0 if attrs.has_gripping_feature else 0.0,
        "joining": JOINING_AUTOMATION[attrs.joining_method],
        "feeding": attrs.feeding_complexity,
        "safety": attrs.safety_implication,
        "symmetry": attrs.symmetry,
    }
    return sum(w[k] * parts[k] for k in WEIGHT_KEYS)


def classify(value: float, theta_m: float = THETA_MANUAL, theta_r: float = THETA_ROBOT) -> TaskClass:
    """Threshold the score; boundaries fall toward Manual at theta_m, Robot at theta_r."""
    if not theta_m < theta_r:
        raise AllocationError(f"thresholds must satisfy theta_m < theta_r, got {theta_m} >= {theta_r}")
    if not 0.0 <= value <= 1.0:
        raise AllocationError(f"score {value} outside [0,1]")
    if value >= theta_r:
        return TaskClass.ROBOT
    if value <= theta_m:
        return TaskClass.MANUAL
    return TaskClass.EITHER


def classify_scene(scene: Scene, weights=None) -> dict[str, tuple[float, TaskClass]]:
    out = {}
    for task in scene.tasks:
        value = score_task(attributes_for(scene, task), weights)
        out[task.id] = (value, classify(value))
    return out


@dataclass(frozen=True)
class Assignment:
    task_id: str
    resource: str  # ROBOT or HUMAN
    start_s: float
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class AssemblyPlan:
    assignments: tuple[Assignment, ...]
    precedence: dict[str, tuple[str, ...]]
    cycle_s: float
    idle_s: dict[str, float]

    def assignment(self, task_id: str) -> Assignment:
        for a in self.assignments:
            if a.task_id == task_id:
                return a
        raise KeyError(f"unknown task {task_id!r}")

    def by_resource(self, resource: str) -> list[Assignment]:
        return sorted(
            (a for a in self.assignments if a.resource == resource), key=lambda a: a.start_s
        )

    def robot_task_ids(self) -> list[str]:
        return [a.task_id for a in self.by_resource(ROBOT)]


def _check_acyclic(tasks: dict[str, tuple[str, ...]]) -> list[str]:
    """Topological order; raises on cycles."""
    order: list[str] = []
    mark: dict[str, int] = {}

    def visit(tid: str):
        state = mark.get(tid, 0)
        if state == 1:
            raise AllocationError(f"cyclic precedence involving {tid!r}")
        if state == 2:
            return
        mark[tid] = 1
        for dep in tasks[tid]:
            visit(dep)
        mark[tid] = 2
        order.append(tid)

    for tid in tasks:
        visit(tid)
    return order


def _critical_path_priority(tasks: dict[str, tuple[str, ...]], base: dict[str, float]) -> dict[str, float]:
    """Longest downstream chain including the task itself."""
    successors: dict[str, list[str]] = {tid: [] for tid in tasks}
    for tid, deps in tasks.items():
        for dep in deps:
            successors[dep].append(tid)
    prio: dict[str, float] = {}

    def rank(tid: str) -> float:
        if tid in prio:
            return prio[tid]
        tail = max((rank(s) for s in successors[tid]), default=0.0)
        prio[tid] = base[tid] + tail
        return prio[tid]

    for tid in tasks:
        rank(tid)
    return prio


def balance(scene: Scene, classes=None, durations=None, weights=None) -> AssemblyPlan:
    """Greedy list schedule over {robot, human}.

    Robot-class tasks run on the robot, Manual on the human; Either goes
    to whichever resource is free sooner (shorter duration on that
    resource breaks ties).  Priority among simultaneously ready tasks is
    the critical-path length.
    """
    if classes is None:
        classes = {tid: cls for tid, (_, cls) in classify_scene(scene, weights).items()}
    if durations is None:
        durations = {}
        for t in scene.tasks:
            if t.robot_s > 0:
                durations[(t.id, ROBOT)] = t.robot_s
            if t.manual_s > 0:
                durations[(t.id, HUMAN)] = t.manual_s
    prec = {t.id: tuple(t.precedence) for t in scene.tasks}
    _check_acyclic(prec)

    capable: dict[str, list[str]] = {}
    for t in scene.tasks:
        cls = classes[t.id]
        resources = {
            TaskClass.ROBOT: [ROBOT],
            TaskClass.MANUAL: [HUMAN],
            TaskClass.EITHER: [ROBOT, HUMAN],
        }[cls]
        resources = [r for r in resources if (t.id, r) in durations]
        if not resources:
            raise AllocationError(f"task {t.id!r} has no capable resource with a duration")
        capable[t.id] = resources

    base = {
        tid: min(durations[(tid, r)] for r in capable[tid]) for tid in prec
    }
    priority = _critical_path_priority(prec, base)

    free = {ROBOT: 0.0, HUMAN: 0.0}
    end: dict[str, float] = {}
    assignments: list[Assignment] = []
    unscheduled = set(prec)
    while unscheduled:
        # backlog a flexible task would stack on top of: work still bound
        # to exactly one resource
        exclusive_left = {ROBOT: 0.0, HUMAN: 0.0}
        for other in unscheduled:
            if len(capable[other]) == 1:
                r = capable[other][0]
                exclusive_left[r] += durations[(other, r)]
        best = None
        for tid in sorted(unscheduled):
            if any(dep not in end for dep in prec[tid]):
                continue
            ready_at = max((end[d] for d in prec[tid]), default=0.0)
            options = capable[tid]
            if len(options) > 1:
                # route toward the resource projected to clear this task
                # plus its exclusive backlog soonest
                def projected(r: str) -> tuple[float, float]:
                    start = max(free[r], ready_at)
                    return (start + durations[(tid, r)] + exclusive_left[r], start)

                cutoff = min(projected(r) for r in options)
                options = [r for r in options if projected(r) == cutoff]
            for resource in options:
                start = max(free[resource], ready_at)
                key = (start, -priority[tid], durations[(tid, resource)], resource, tid)
                if best is None or key < best[0]:
                    best = (key, tid, resource, start)
        if best is None:
            raise AllocationError("no schedulable task (broken precedence)")
        _, tid, resource, start = best
        dur = durations[(tid, resource)]
        assignments.append(Assignment(tid, resource, start, dur))
        end[tid] = start + dur
        free[resource] = start + dur
        unscheduled.discard(tid)

    cycle = max((a.end_s for a in assignments), default=0.0)
    busy = {ROBOT: 0.0, HUMAN: 0.0}
    for a in assignments:
        busy[a.resource] += a.duration_s
    idle = {r: cycle - busy[r] for r in (ROBOT, HUMAN)}
    return AssemblyPlan(tuple(assignments), prec, cycle, idle)


def estimate_cycle_time(plan: AssemblyPlan, scene: Scene, robot_durations=None) -> float:
    """Cycle length of the plan, optionally re-timed with trajectory-derived
    robot durations (task id -> seconds)."""
    if not plan.assignments:
        return 0.0
    durations = {}
    for a in plan.assignments:
        d = a.duration_s
        if robot_durations and a.resource == ROBOT and a.task_id in robot_durations:
            d = robot_durations[a.task_id]
        if d <= 0:
            raise AllocationError(f"task {a.task_id!r} has no usable duration")
        durations[(a.task_id, a.resource)] = d
    classes = {
        a.task_id: (TaskClass.ROBOT if a.resource == ROBOT else TaskClass.MANUAL)
        for a in plan.assignments
    }
    replan = balance(scene, classes=classes, durations=durations)
    return replan.cycle_s


def plan_to_document(plan: AssemblyPlan) -> dict:
    """Plan as a document: one Gantt row per assignment plus totals."""
    return {
        "kind": "plan",
        "cycle_s": round(plan.cycle_s, 6),
        "idle_s": {k: round(v, 6) for k, v in plan.idle_s.items()},
        "precedence": {tid: list(deps) for tid, deps in plan.precedence.items()},
        "rows": [
            {
                "task": a.task_id,
                "resource": a.resource,
                "start_s": round(a.start_s, 6),
                "duration_s": round(a.duration_s, 6),
            }
            for a in plan.assignments
        ],
    }


def plan_from_document(doc: dict) -> AssemblyPlan:
    try:
        assignments = tuple(
            Assignment(r["task"], r["resource"], float(r["start_s"]), float(r["duration_s"]))
            for r in doc["rows"]
        )
        precedence = {tid: tuple(deps) for tid, deps in doc["precedence"].items()}
        cycle = float(doc["cycle_s"])
        idle = {k: float(v) for k, v in doc["idle_s"].items()}
    except (KeyError, TypeError) as e:
        raise AllocationError(f"plan document: {e}") from e
    return AssemblyPlan(assignments, precedence, cycle, idle)
