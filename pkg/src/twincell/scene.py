"""Layered cell model: every physical element's virtual counterpart.

The scene carries four layers: geometry (placed resources with primitive
shapes), physics (robot and human kinematic parameters), behavior (current
joint state, posture, component placements) and rule (the ordered assembly
tasks with precedence).  Scene values are immutable; mutating operations
return new scenes.

Scene documents are versioned YAML so the shipped fixtures double as
documentation of the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .geometry import (
    GeometryError,
    PlacedShape,
    Pose,
    ShapeKind,
    ShapePrimitive,
    aabb,
    capsule_world,
    signed_distance,
)
from .sensors import (
    SensorError,
    TransitionLogic,
    VirtualSensor,
    logic_from_doc,
    logic_to_doc,
    sensor_from_doc,
    sensor_to_doc,
)

SCENE_DOC_VERSION = 1

# anthropometric stand-ins, fractions of body height; overridable per scene
ARM_REACH_RATIO = 0.44
SHOULDER_HEIGHT_RATIO = 0.82

# capacity gained by the additively manufactured extended fingers
EXTENDED_FINGER_GAIN = 2.0  # per finger, times finger_length


class SceneParseError(ValueError):
    """Malformed scene document."""


class SceneValidationError(ValueError):
    """Well-formed document that violates a model invariant."""


class JoiningMethod(str, Enum):
    PLACE = "place"
    SCREW = "screw"
    SNAP = "snap"
    ROUTE = "route"


class ResourceKind(str, Enum):
    ROBOT = "robot"
    HUMAN = "human"
    FIXTURE = "fixture"
    FEEDER = "feeder"
    TABLE = "table"


@dataclass(frozen=True)
class DHRow:
    """One Denavit-Hartenberg row: a, d in mm; alpha, theta_offset in rad."""

    a: float
    d: float
    alpha: float
    theta_offset: float = 0.0


@dataclass(frozen=True)
class RobotSpec:
    dof: int
    dh_rows: tuple[DHRow, ...]
    joint_limits: tuple[tuple[float, float], ...]
    max_joint_speed: tuple[float, ...]  # rad/s
    max_joint_accel: tuple[float, ...]  # rad/s^2
    payload_capacity: float  # kg
    rated_reach: float  # mm
    home: tuple[float, ...] = ()
    link_radii: tuple[float, ...] = ()  # collision capsule radii, mm

    def __post_init__(self):
        if self.dof != len(self.dh_rows):
            raise SceneValidationError(f"robot.dof: {self.dof} != {len(self.dh_rows)} dh rows")
        for name, seq in (
            ("joint_limits", self.joint_limits),
            ("max_joint_speed", self.max_joint_speed),
            ("max_joint_accel", self.max_joint_accel),
        ):
            if len(seq) != self.dof:
                raise SceneValidationError(f"robot.{name}: expected {self.dof} entries")
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not lo < hi:
                raise SceneValidationError(f"robot.joint_limits[{i}]: min {lo} !< max {hi}")
        if any(v <= 0 for v in self.max_joint_speed):
            raise SceneValidationError("robot.max_joint_speed: must be positive")
        if any(v <= 0 for v in self.max_joint_accel):
            raise SceneValidationError("robot.max_joint_accel: must be positive")
        if self.payload_capacity <= 0:
            raise SceneValidationError("robot.payload_capacity: must be positive")
        if self.rated_reach <= 0:
            raise SceneValidationError("robot.rated_reach: must be positive")
        if not self.home:
            object.__setattr__(self, "home", tuple(0.0 for _ in range(self.dof)))
        if not self.link_radii:
            object.__setattr__(self, "link_radii", tuple(45.0 for _ in range(self.dof)))

    def within_limits(self, angles) -> bool:
        return all(
            lo - 1e-9 <= a <= hi + 1e-9 for a, (lo, hi) in zip(angles, self.joint_limits)
        )


@dataclass(frozen=True)
class GripperSpec:
    finger_length: float  # mm
    max_part_width: float  # mm
    extended_fingers: bool = False

    def __post_init__(self):
        if self.finger_length <= 0:
            raise SceneValidationError("gripper.finger_length: must be positive")
        if self.max_part_width <= 0:
            raise SceneValidationError("gripper.max_part_width: must be positive")

    def fits(self, part_width: float) -> bool:
        cap = self.max_part_width
        if self.extended_fingers:
            cap += EXTENDED_FINGER_GAIN * self.finger_length
        return part_width <= cap


@dataclass(frozen=True)
class HumanModel:
    """Anthropometric mannequin; heights in cm, base pose in the world frame."""

    height: float  # cm
    base_pose: Pose = field(default_factory=Pose)
    bmi: float | None = None
    waist_hip_ratio: float | None = None
    shoulder_height: float | None = None  # cm, derived when absent
    arm_reach: float | None = None  # cm, derived when absent

    def __post_init__(self):
        if self.height <= 0:
            raise SceneValidationError("human.height: must be positive")
        reach = self.arm_reach if self.arm_reach is not None else ARM_REACH_RATIO * self.height
        if reach <= 0:
            raise SceneValidationError("human.arm_reach: must be positive")
        if reach >= self.height:
            raise SceneValidationError("human.arm_reach: must be below body height")

    def shoulder_point(self) -> np.ndarray:
        """World shoulder position in mm."""
        _, shoulder_cm = derive_human_reach(self)
        return self.base_pose.p + np.array([0.0, 0.0, shoulder_cm * 10.0])

    def facing(self) -> np.ndarray:
        """Unit torso normal: local +x rotated into the world."""
        return self.base_pose.rot @ np.array([1.0, 0.0, 0.0])


def derive_human_reach(human: HumanModel) -> tuple[float, float]:
    """(arm_reach, shoulder_height) in cm; explicit overrides win."""
    if human.height <= 0:
        raise SceneValidationError("human.height: must be positive")
    reach = human.arm_reach if human.arm_reach is not None else ARM_REACH_RATIO * human.height
    shoulder = (
        human.shoulder_height
        if human.shoulder_height is not None
        else SHOULDER_HEIGHT_RATIO * human.height
    )
    return reach, shoulder


def human_body_shapes(human: HumanModel, posture: str = "neutral") -> list[PlacedShape]:
    """Primitive mannequin: torso and head plus arms posed per `posture`.

    posture "neutral" hangs the arms; "reach:x,y,z" extends the right arm
    toward the world point (clipped to arm reach).
    """
    reach_cm, shoulder_cm = derive_human_reach(human)
    base = human.base_pose.p
    up = np.array([0.0, 0.0, 1.0])
    shoulder_z = base + up * shoulder_cm * 10.0
    head_c = base + up * (human.height - 10.0) * 10.0
    torso_r = 160.0
    shapes = [
        capsule_world("human/torso", base + up * 500.0, shoulder_z, torso_r),
        PlacedShape(
            "human/head",
            ShapePrimitive(ShapeKind.SPHERE, (110.0,)),
            Pose(tuple(float(c) for c in head_c)),
        ),
    ]
    facing = human.facing()
    side = np.cross(up, facing)
    arm_r = 45.0
    reach_mm = reach_cm * 10.0
    for label, sign in (("left", 1.0), ("right", -1.0)):
        s = shoulder_z + side * sign * torso_r
        if label == "right" and posture.startswith("reach:"):
            target = np.array([float(v) for v in posture.split(":", 1)[1].split(",")])
            d = target - s
            n = np.linalg.norm(d)
            tip = target if n <= reach_mm or n == 0 else s + d / n * reach_mm
            shapes.append(capsule_world(f"human/arm_{label}", s, tip, arm_r))
        else:
            shapes.append(capsule_world(f"human/arm_{label}", s, s - up * reach_mm, arm_r))
    return shapes


@dataclass(frozen=True)
class AssemblyComponent:
    id: str
    bounding_width: float  # mm
    mass: float  # kg
    has_gripping_feature: bool
    joining_method: JoiningMethod
    feed_location: Pose

    def __post_init__(self):
        object.__setattr__(self, "joining_method", JoiningMethod(self.joining_method))
        if self.bounding_width <= 0:
            raise SceneValidationError(f"components[{self.id}].bounding_width: must be positive")
        if self.mass < 0:
            raise SceneValidationError(f"components[{self.id}].mass: must be non-negative")


@dataclass(frozen=True)
class TaskRatings:
    """Automation-potential ratings, all in [0,1] with 1 favouring the robot."""

    feeding_complexity: float = 0.5
    safety_implication: float = 0.5
    symmetry: float = 0.5

    def __post_init__(self):
        for name in ("feeding_complexity", "safety_implication", "symmetry"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SceneValidationError(f"ratings.{name}: {v} outside [0,1]")


@dataclass(frozen=True)
class TaskDef:
    id: str
    component_id: str
    precedence: tuple[str, ...] = ()
    manual_s: float = 0.0
    robot_s: float = 0.0
    ratings: TaskRatings = field(default_factory=TaskRatings)
    pick: Pose | None = None
    place: Pose | None = None
    switch: str | None = None
    tool: str = "gripper"


@dataclass(frozen=True)
class SwitchSpec:
    """Operator pushbutton; pressed when the named task completes."""

    id: str
    pressed_after: str | None = None


@dataclass(frozen=True)
class Resource:
    id: str
    kind: ResourceKind
    pose: Pose
    shapes: tuple[ShapePrimitive, ...] = ()
    anchors: dict[str, Pose] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ResourceKind(self.kind))

    def placed_shapes(self) -> list[PlacedShape]:
        return [PlacedShape(self.id, s, self.pose) for s in self.shapes]


@dataclass(frozen=True)
class BehaviorState:
    """Behavior layer: the dynamic snapshot riding on the static geometry."""

    joint_angles: tuple[float, ...]
    human_posture: str = "neutral"
    placements: dict[str, str] = field(default_factory=dict)  # component -> location tag


@dataclass(frozen=True)
class Scene:
    version: int
    resources: tuple[Resource, ...]
    robot: RobotSpec
    gripper: GripperSpec
    human: HumanModel
    components: tuple[AssemblyComponent, ...]
    tasks: tuple[TaskDef, ...]
    behavior: BehaviorState
    switches: tuple[SwitchSpec, ...] = ()
    sensors: tuple[VirtualSensor, ...] = ()
    logics: tuple[TransitionLogic, ...] = ()
    robot_id: str = "robot"
    human_id: str = "operator"

    @property
    def rule(self) -> tuple[str, ...]:
        """Rule layer: the ordered assembly sequence."""
        return tuple(t.id for t in self.tasks)

    def resource(self, rid: str) -> Resource:
        for r in self.resources:
            if r.id == rid:
                return r
        raise KeyError(f"unknown resource {rid!r}")

    def component(self, cid: str) -> AssemblyComponent:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(f"unknown component {cid!r}")

    def task(self, tid: str) -> TaskDef:
        for t in self.tasks:
            if t.id == tid:
                return t
        raise KeyError(f"unknown task {tid!r}")

    @property
    def switch_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.switches)

    def sensor(self, sid: str) -> VirtualSensor:
        for s in self.sensors:
            if s.id == sid:
                return s
        raise KeyError(f"unknown sensor {sid!r}")

    def switch(self, sid: str) -> SwitchSpec:
        for s in self.switches:
            if s.id == sid:
                return s
        raise KeyError(f"unknown switch {sid!r}")

    def robot_resource(self) -> Resource:
        return self.resource(self.robot_id)

    def human_resource(self) -> Resource:
        return self.resource(self.human_id)

    def robot_base_pose(self) -> Pose:
        return self.robot_resource().pose

    def static_shapes(self) -> list[PlacedShape]:
        """Primitives of everything that does not move during a cycle."""
        out: list[PlacedShape] = []
        for r in self.resources:
            if r.kind is ResourceKind.HUMAN:
                continue
            out.extend(r.placed_shapes())
        return out

    def human_shapes(self) -> list[PlacedShape]:
        return human_body_shapes(self.human, self.behavior.human_posture)


# ---------------------------------------------------------------------------
# document <-> model
# ---------------------------------------------------------------------------

def _pose_to_doc(pose: Pose) -> dict:
    return {"position": list(pose.position), "orientation": list(pose.orientation)}


def _pose_from_doc(doc, where: str) -> Pose:
    if isinstance(doc, (list, tuple)):
        if len(doc) == 3:
            return Pose(tuple(float(v) for v in doc))
        raise SceneParseError(f"{where}: pose list must have 3 position entries")
    if not isinstance(doc, dict):
        raise SceneParseError(f"{where}: expected pose mapping")
    try:
        pos = doc.get("position", (0.0, 0.0, 0.0))
        quat = doc.get("orientation", (1.0, 0.0, 0.0, 0.0))
        return Pose(tuple(float(v) for v in pos), tuple(float(v) for v in quat))
    except (TypeError, ValueError, GeometryError) as e:
        raise SceneValidationError(f"{where}: {e}") from None


def _shape_from_doc(doc, where: str) -> ShapePrimitive:
    try:
        kind = ShapeKind(doc["kind"])
        dims = tuple(float(v) for v in doc["dimensions"])
        local = _pose_from_doc(doc.get("at", {}), f"{where}.at")
        return ShapePrimitive(kind, dims, local)
    except KeyError as e:
        raise SceneParseError(f"{where}: missing {e}") from None
    except (ValueError, GeometryError) as e:
        raise SceneValidationError(f"{where}: {e}") from None


def _shape_to_doc(shape: ShapePrimitive) -> dict:
    d = {"kind": shape.kind.value, "dimensions": list(shape.dimensions)}
    if shape.local_pose != Pose():
        d["at"] = _pose_to_doc(shape.local_pose)
    return d


def scene_from_document(doc: dict) -> Scene:
    """Build and validate a Scene from a parsed document mapping."""
    if not isinstance(doc, dict):
        raise SceneParseError("scene document must be a mapping")
    version = int(doc.get("version", 0))
    if version != SCENE_DOC_VERSION:
        raise SceneParseError(f"unsupported scene document version {version}")

    resources = []
    for i, rd in enumerate(doc.get("resources", []) or []):
        where = f"resources[{i}]"
        try:
            rid = rd["id"]
        except (TypeError, KeyError):
            raise SceneParseError(f"{where}: missing id") from None
        try:
            kind = ResourceKind(rd.get("kind", "fixture"))
        except ValueError as e:
            raise SceneValidationError(f"{where}.kind: {e}") from None
        pose = _pose_from_doc(rd.get("pose", {}), f"{where}.pose")
        shapes = tuple(
            _shape_from_doc(sd, f"{where}.shapes[{j}]")
            for j, sd in enumerate(rd.get("shapes", []) or [])
        )
        anchors = {
            name: _pose_from_doc(ad, f"{where}.anchors[{name}]")
            for name, ad in (rd.get("anchors", {}) or {}).items()
        }
        resources.append(Resource(rid, kind, pose, shapes, anchors))

    rdoc = doc.get("robot")
    if rdoc is None or not any(r.kind is ResourceKind.ROBOT for r in resources):
        raise SceneValidationError("resources: no robot in scene")
    if not any(r.kind is ResourceKind.HUMAN for r in resources):
        raise SceneValidationError("resources: no human in scene")
    robots = [r for r in resources if r.kind is ResourceKind.ROBOT]
    humans = [r for r in resources if r.kind is ResourceKind.HUMAN]
    if len(robots) != 1:
        raise SceneValidationError(f"resources: expected exactly one robot, got {len(robots)}")
    if len(humans) != 1:
        raise SceneValidationError(f"resources: expected exactly one human, got {len(humans)}")

    try:
        robot = RobotSpec(
            dof=int(rdoc["dof"]),
            dh_rows=tuple(DHRow(*(float(v) for v in row)) for row in rdoc["dh"]),
            joint_limits=tuple((float(lo), float(hi)) for lo, hi in rdoc["joint_limits"]),
            max_joint_speed=tuple(float(v) for v in rdoc["max_joint_speed"]),
            max_joint_accel=tuple(float(v) for v in rdoc["max_joint_accel"]),
            payload_capacity=float(rdoc["payload_capacity_kg"]),
            rated_reach=float(rdoc["rated_reach_mm"]),
            home=tuple(float(v) for v in rdoc.get("home", ())),
            link_radii=tuple(float(v) for v in rdoc.get("link_radii_mm", ())),
        )
    except KeyError as e:
        raise SceneParseError(f"robot: missing {e}") from None

    gdoc = doc.get("gripper") or {}
    try:
        gripper = GripperSpec(
            finger_length=float(gdoc["finger_length_mm"]),
            max_part_width=float(gdoc["max_part_width_mm"]),
            extended_fingers=bool(gdoc.get("extended_fingers", False)),
        )
    except KeyError as e:
        raise SceneParseError(f"gripper: missing {e}") from None

    hdoc = doc.get("human") or {}
    try:
        human = HumanModel(
            height=float(hdoc["height_cm"]),
            base_pose=humans[0].pose,
            bmi=None if hdoc.get("bmi") is None else float(hdoc["bmi"]),
            waist_hip_ratio=(
                None if hdoc.get("waist_hip_ratio") is None else float(hdoc["waist_hip_ratio"])
            ),
            shoulder_height=(
                None if hdoc.get("shoulder_height_cm") is None else float(hdoc["shoulder_height_cm"])
            ),
            arm_reach=None if hdoc.get("arm_reach_cm") is None else float(hdoc["arm_reach_cm"]),
        )
    except KeyError as e:
        raise SceneParseError(f"human: missing {e}") from None

    components = []
    for i, cd in enumerate(doc.get("components", []) or []):
        where = f"components[{i}]"
        try:
            components.append(
                AssemblyComponent(
                    id=cd["id"],
                    bounding_width=float(cd["bounding_width_mm"]),
                    mass=float(cd["mass_kg"]),
                    has_gripping_feature=bool(cd["has_gripping_feature"]),
                    joining_method=JoiningMethod(cd["joining_method"]),
                    feed_location=_pose_from_doc(cd.get("feed_location", {}), f"{where}.feed_location"),
                )
            )
        except KeyError as e:
            raise SceneParseError(f"{where}: missing {e}") from None
        except ValueError as e:
            raise SceneValidationError(f"{where}: {e}") from None

    tasks = []
    for i, td in enumerate(doc.get("tasks", []) or []):
        where = f"tasks[{i}]"
        try:
            ratings = TaskRatings(**{k: float(v) for k, v in (td.get("ratings", {}) or {}).items()})
            tasks.append(
                TaskDef(
                    id=td["id"],
                    component_id=td["component"],
                    precedence=tuple(td.get("precedence", []) or []),
                    manual_s=float(td.get("manual_s", 0.0)),
                    robot_s=float(td.get("robot_s", 0.0)),
                    ratings=ratings,
                    pick=None if td.get("pick") is None else _pose_from_doc(td["pick"], f"{where}.pick"),
                    place=None if td.get("place") is None else _pose_from_doc(td["place"], f"{where}.place"),
                    switch=td.get("switch"),
                    tool=td.get("tool", "gripper"),
                )
            )
        except KeyError as e:
            raise SceneParseError(f"{where}: missing {e}") from None
        except TypeError as e:
            raise SceneValidationError(f"{where}.ratings: {e}") from None

    bdoc = doc.get("behavior", {}) or {}
    behavior = BehaviorState(
        joint_angles=tuple(float(v) for v in bdoc.get("joint_angles", robot.home)),
        human_posture=bdoc.get("human_posture", "neutral"),
        placements=dict(bdoc.get("placements", {}) or {}),
    )
    if not behavior.placements:
        behavior = replace(behavior, placements={c.id: "feeder" for c in components})

    switches = []
    for i, sd in enumerate(doc.get("switches", []) or []):
        if isinstance(sd, str):
            switches.append(SwitchSpec(sd))
        else:
            try:
                switches.append(SwitchSpec(sd["id"], sd.get("pressed_after")))
            except (TypeError, KeyError):
                raise SceneParseError(f"switches[{i}]: missing id") from None

    try:
        sensors = tuple(sensor_from_doc(sd) for sd in doc.get("sensors", []) or [])
        logics = tuple(logic_from_doc(ld) for ld in doc.get("logics", []) or [])
    except SensorError as e:
        raise SceneValidationError(str(e)) from None

    scene = Scene(
        version=version,
        resources=tuple(resources),
        robot=robot,
        gripper=gripper,
        human=human,
        components=tuple(components),
        tasks=tuple(tasks),
        behavior=behavior,
        switches=tuple(switches),
        sensors=sensors,
        logics=logics,
        robot_id=robots[0].id,
        human_id=humans[0].id,
    )
    validate_scene(scene)
    return scene


def scene_to_document(scene: Scene) -> dict:
    robot = scene.robot
    doc: dict = {
        "version": scene.version,
        "robot": {
            "dof": robot.dof,
            "dh": [[r.a, r.d, r.alpha, r.theta_offset] for r in robot.dh_rows],
            "joint_limits": [[lo, hi] for lo, hi in robot.joint_limits],
            "max_joint_speed": list(robot.max_joint_speed),
            "max_joint_accel": list(robot.max_joint_accel),
            "payload_capacity_kg": robot.payload_capacity,
            "rated_reach_mm": robot.rated_reach,
            "home": list(robot.home),
            "link_radii_mm": list(robot.link_radii),
        },
        "gripper": {
            "finger_length_mm": scene.gripper.finger_length,
            "max_part_width_mm": scene.gripper.max_part_width,
            "extended_fingers": scene.gripper.extended_fingers,
        },
        "human": {
            "height_cm": scene.human.height,
            "bmi": scene.human.bmi,
            "waist_hip_ratio": scene.human.waist_hip_ratio,
            "shoulder_height_cm": scene.human.shoulder_height,
            "arm_reach_cm": scene.human.arm_reach,
        },
        "resources": [
            {
                "id": r.id,
                "kind": r.kind.value,
                "pose": _pose_to_doc(r.pose),
                "shapes": [_shape_to_doc(s) for s in r.shapes],
                **({"anchors": {k: _pose_to_doc(p) for k, p in r.anchors.items()}} if r.anchors else {}),
            }
            for r in scene.resources
        ],
        "components": [
            {
                "id": c.id,
                "bounding_width_mm": c.bounding_width,
                "mass_kg": c.mass,
                "has_gripping_feature": c.has_gripping_feature,
                "joining_method": c.joining_method.value,
                "feed_location": _pose_to_doc(c.feed_location),
            }
            for c in scene.components
        ],
        "tasks": [
            {
                "id": t.id,
                "component": t.component_id,
                "precedence": list(t.precedence),
                "manual_s": t.manual_s,
                "robot_s": t.robot_s,
                "ratings": {
                    "feeding_complexity": t.ratings.feeding_complexity,
                    "safety_implication": t.ratings.safety_implication,
                    "symmetry": t.ratings.symmetry,
                },
                **({"pick": _pose_to_doc(t.pick)} if t.pick else {}),
                **({"place": _pose_to_doc(t.place)} if t.place else {}),
                **({"switch": t.switch} if t.switch else {}),
                "tool": t.tool,
            }
            for t in scene.tasks
        ],
        "switches": [
            {"id": s.id, **({"pressed_after": s.pressed_after} if s.pressed_after else {})}
            for s in scene.switches
        ],
        "sensors": [sensor_to_doc(s) for s in scene.sensors],
        "logics": [logic_to_doc(lg) for lg in scene.logics],
        "behavior": {
            "joint_angles": list(scene.behavior.joint_angles),
            "human_posture": scene.behavior.human_posture,
            "placements": dict(scene.behavior.placements),
        },
    }
    return doc


def emit_scene(scene: Scene) -> str:
    return yaml.safe_dump(scene_to_document(scene), sort_keys=False, default_flow_style=None)


def load_scene(source) -> Scene:
    """Parse a scene document from YAML text, a path, or an already-parsed dict."""
    if isinstance(source, dict):
        return scene_from_document(source)
    if isinstance(source, Path):
        text = source.read_text()
    else:
        text = str(source)
        p = Path(text)
        try:
            if ("\n" not in text) and p.is_file():
                text = p.read_text()
        except OSError:
            pass
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise SceneParseError(f"invalid scene document: {e}") from None
    return scene_from_document(doc)


# ---------------------------------------------------------------------------
# validation and mutation
# ---------------------------------------------------------------------------

PENETRATION_TOL = 1e-6  # resting contact is legal, overlap is not


def _check_static_interpenetration(scene: Scene) -> None:
    statics = [r for r in scene.resources if r.kind is not ResourceKind.HUMAN]
    for i, ra in enumerate(statics):
        for rb in statics[i + 1 :]:
            for sa in ra.placed_shapes():
                for sb in rb.placed_shapes():
                    d = signed_distance(sa, sb)
                    if d < -PENETRATION_TOL:
                        raise SceneValidationError(
                            f"resources: interpenetration between {ra.id!r} and {rb.id!r} "
                            f"(depth {-d:.2f} mm)"
                        )


def validate_scene(scene: Scene) -> None:
    ids = [r.id for r in scene.resources]
    if len(set(ids)) != len(ids):
        raise SceneValidationError("resources: duplicate resource ids")
    if len(scene.behavior.joint_angles) != scene.robot.dof:
        raise SceneValidationError("behavior.joint_angles: wrong joint count")
    if not scene.robot.within_limits(scene.behavior.joint_angles):
        raise SceneValidationError("behavior.joint_angles: outside joint limits")
    component_ids = {c.id for c in scene.components}
    task_ids = {t.id for t in scene.tasks}
    for t in scene.tasks:
        if t.component_id not in component_ids:
            raise SceneValidationError(f"tasks[{t.id}].component: unknown component {t.component_id!r}")
        for dep in t.precedence:
            if dep not in task_ids:
                raise SceneValidationError(f"tasks[{t.id}].precedence: unknown task {dep!r}")
        if t.switch is not None and t.switch not in scene.switch_ids:
            raise SceneValidationError(f"tasks[{t.id}].switch: unknown switch {t.switch!r}")
    for s in scene.switches:
        if s.pressed_after is not None and s.pressed_after not in task_ids:
            raise SceneValidationError(f"switches[{s.id}].pressed_after: unknown task {s.pressed_after!r}")
    resource_ids = {r.id for r in scene.resources}
    sensor_ids = set()
    for sn in scene.sensors:
        if sn.id in sensor_ids:
            raise SceneValidationError(f"sensors[{sn.id}]: duplicate sensor id")
        sensor_ids.add(sn.id)
        for key in ("resource", "location"):
            ref = sn.params.get(key)
            if ref is not None and ref.split(".")[0] not in resource_ids:
                raise SceneValidationError(f"sensors[{sn.id}].{key}: unknown resource {ref!r}")
        if "joint" in sn.params and int(sn.params["joint"]) >= scene.robot.dof:
            raise SceneValidationError(f"sensors[{sn.id}].joint: index beyond dof {scene.robot.dof}")
    for lg in scene.logics:
        if lg.triggered_operation not in task_ids:
            raise SceneValidationError(
                f"logics[{lg.triggered_operation}]: unknown task {lg.triggered_operation!r}"
            )
        for ref in lg.sensor_refs():
            if ref not in sensor_ids:
                raise SceneValidationError(f"logics[{lg.triggered_operation}]: unknown sensor {ref!r}")
        for ref in lg.switch_refs():
            if ref not in scene.switch_ids:
                raise SceneValidationError(f"logics[{lg.triggered_operation}]: unknown switch {ref!r}")
    for cid in scene.behavior.placements:
        if cid not in component_ids:
            raise SceneValidationError(f"behavior.placements: unknown component {cid!r}")
    _check_static_interpenetration(scene)


def place_resource(scene: Scene, resource_id: str, pose: Pose) -> Scene:
    """Move one resource; the behavior layer is untouched.

    Re-runs the interpenetration check so a fixture cannot land inside
    another resource.
    """
    if not any(r.id == resource_id for r in scene.resources):
        raise SceneValidationError(f"resources: unknown resource {resource_id!r}")
    moved = tuple(
        replace(r, pose=pose) if r.id == resource_id else r for r in scene.resources
    )
    new_scene = replace(scene, resources=moved)
    if resource_id == scene.human_id:
        new_scene = replace(new_scene, human=replace(scene.human, base_pose=pose))
    _check_static_interpenetration(new_scene)
    return new_scene


def relocate_resource(scene: Scene, resource_id: str, pose: Pose) -> Scene:
    """Move a resource and carry the work anchored on it.

    Task pick/place poses and component feed locations whose xy falls
    over the resource's footprint translate by the same offset; poses
    anchored elsewhere stay put.
    """
    res = scene.resource(resource_id)
    delta = np.asarray(pose.position) - np.asarray(res.pose.position)
    boxes = [aabb(s) for s in res.placed_shapes()]

    def anchored(p: Pose | None) -> bool:
        if p is None or not boxes:
            return False
        x, y = p.position[0], p.position[1]
        return any(lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1] for lo, hi in boxes)

    def shifted(p: Pose) -> Pose:
        return Pose(tuple(np.asarray(p.position) + delta), p.orientation)

    tasks = tuple(
        replace(
            t,
            pick=shifted(t.pick) if anchored(t.pick) else t.pick,
            place=shifted(t.place) if anchored(t.place) else t.place,
        )
        for t in scene.tasks
    )
    components = tuple(
        replace(c, feed_location=shifted(c.feed_location))
        if anchored(c.feed_location)
        else c
        for c in scene.components
    )
    moved = replace(scene, tasks=tasks, components=components)
    return place_resource(moved, resource_id, pose)


def fixture_case_path() -> Path:
    """Path of the battery-pack cell fixture shipped with the package."""
    return Path(__file__).parent / "fixtures" / "case_battery_pack.yaml"


def load_case_scene() -> Scene:
    return load_scene(fixture_case_path())
