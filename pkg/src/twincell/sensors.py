"""Virtual sensors and transition logic for the logic-driven simulation.

A sensor observes a world view (object positions, joint angles, shapes)
and reports a boolean activation, except JointValue which reports the
raw angle.  Transition logics are conjunctions of predicates over
sensors and operator switches; the simulator fires them on rising edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .geometry import (
    PlacedShape,
    Pose,
    ShapeKind,
    ShapePrimitive,
    capsule_world,
    segment_segment_distance,
    signed_distance,
)

log = logging.getLogger(__name__)


class SensorError(ValueError):
    pass


class SensorKind(str, Enum):
    PROXIMITY = "proximity"
    PHOTOELECTRIC = "photoelectric"
    PROPERTY = "property"
    JOINT_VALUE = "joint_value"
    JOINT_DISTANCE = "joint_distance"


class WorldView(Protocol):
    """What a sensor can observe; implemented by the simulator state."""

    def joint_angles(self) -> tuple[float, ...]: ...

    def resource_point(self, resource_id: str) -> np.ndarray: ...

    def object_positions(self) -> dict[str, np.ndarray]: ...

    def object_property(self, object_id: str, key: str) -> str | None: ...

    def moving_shapes(self) -> list[PlacedShape]: ...

    def dof(self) -> int: ...


@dataclass(frozen=True)
class VirtualSensor:
    """One virtual sensor; `params` fields depend on the kind.

    proximity: resource (id), range_mm
    photoelectric: beam_a, beam_b (world mm)
    property: key, value, location (resource id), range_mm
    joint_value: joint (index)
    joint_distance: joint (index), reference (rad), range_rad
    """

    id: str
    kind: SensorKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", SensorKind(self.kind))
        p = self.params
        need = {
            SensorKind.PROXIMITY: ("resource", "range_mm"),
            SensorKind.PHOTOELECTRIC: ("beam_a", "beam_b"),
            SensorKind.PROPERTY: ("key", "value", "location", "range_mm"),
            SensorKind.JOINT_VALUE: ("joint",),
            SensorKind.JOINT_DISTANCE: ("joint", "reference", "range_rad"),
        }[self.kind]
        for key in need:
            if key not in p:
                raise SensorError(f"sensor {self.id!r}: missing parameter {key!r}")
        for key in ("range_mm", "range_rad"):
            if key in need and float(p[key]) <= 0:
                raise SensorError(f"sensor {self.id!r}: {key} must be > 0")
        if "joint" in need and int(p["joint"]) < 0:
            raise SensorError(f"sensor {self.id!r}: joint index must be >= 0")

    @property
    def spatial(self) -> bool:
        """True when activation depends on body/link geometry in motion."""
        return self.kind in (SensorKind.PROXIMITY, SensorKind.PHOTOELECTRIC)


def evaluate_sensor(sensor: VirtualSensor, world: WorldView):
    """Activation of one sensor against a world view.

    Returns a boolean for all kinds except JointValue, which reports the
    current angle of its joint.
    """
    p = sensor.params
    if sensor.kind is SensorKind.PROXIMITY:
        anchor = world.resource_point(p["resource"])
        rng = float(p["range_mm"])
        for pos in world.object_positions().values():
            if float(np.linalg.norm(pos - anchor)) <= rng:
                return True
        probe = PlacedShape(
            "sensor/probe",
            ShapePrimitive(ShapeKind.SPHERE, (1e-6,)),
            Pose(tuple(float(v) for v in anchor)),
        )
        return any(signed_distance(probe, s) <= rng for s in world.moving_shapes())
    if sensor.kind is SensorKind.PHOTOELECTRIC:
        a = np.asarray(p["beam_a"], dtype=float)
        b = np.asarray(p["beam_b"], dtype=float)
        for pos in world.object_positions().values():
            if segment_segment_distance(a, b, pos, pos) <= float(p.get("object_radius_mm", 30.0)):
                return True
        beam = capsule_world("sensor/beam", a, b, 1.0)
        return any(signed_distance(beam, s) < 0.0 for s in world.moving_shapes())
    if sensor.kind is SensorKind.PROPERTY:
        anchor = world.resource_point(p["location"])
        rng = float(p["range_mm"])
        for oid, pos in world.object_positions().items():
            if world.object_property(oid, p["key"]) != p["value"]:
                continue
            if float(np.linalg.norm(pos - anchor)) <= rng:
                return True
        return False
    joints = world.joint_angles()
    idx = int(p["joint"])
    if idx >= len(joints):
        raise SensorError(f"sensor {sensor.id!r}: joint {idx} beyond dof {len(joints)}")
    if sensor.kind is SensorKind.JOINT_VALUE:
        return float(joints[idx])
    return abs(float(joints[idx]) - float(p["reference"])) <= float(p["range_rad"])


@dataclass(frozen=True)
class GuardPredicate:
    """One conjunct: a sensor being active or a switch press arriving."""

    kind: str  # "sensor" | "switch"
    ref: str

    def __post_init__(self):
        if self.kind not in ("sensor", "switch"):
            raise SensorError(f"unknown predicate kind {self.kind!r}")


@dataclass(frozen=True)
class TransitionLogic:
    """Conjunction of predicates that triggers one assembly operation."""

    guard: tuple[GuardPredicate, ...]
    triggered_operation: str

    def __post_init__(self):
        if not self.guard:
            raise SensorError(f"logic for {self.triggered_operation!r} needs >= 1 predicate")

    def sensor_refs(self) -> list[str]:
        return [g.ref for g in self.guard if g.kind == "sensor"]

    def switch_refs(self) -> list[str]:
        return [g.ref for g in self.guard if g.kind == "switch"]


def sensor_from_doc(doc: dict) -> VirtualSensor:
    try:
        return VirtualSensor(doc["id"], SensorKind(doc["kind"]), dict(doc.get("params", {})))
    except KeyError as e:
        raise SensorError(f"sensor document missing {e}") from None


def sensor_to_doc(sensor: VirtualSensor) -> dict:
    return {"id": sensor.id, "kind": sensor.kind.value, "params": dict(sensor.params)}


def logic_from_doc(doc: dict) -> TransitionLogic:
    try:
        guard = tuple(
            GuardPredicate("sensor", g["sensor"]) if "sensor" in g else GuardPredicate("switch", g["switch"])
            for g in doc["guard"]
        )
        return TransitionLogic(guard, doc["operation"])
    except KeyError as e:
        raise SensorError(f"logic document missing {e}") from None


def logic_to_doc(logic: TransitionLogic) -> dict:
    return {
        "guard": [{g.kind: g.ref} for g in logic.guard],
        "operation": logic.triggered_operation,
    }
