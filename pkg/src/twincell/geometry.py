"""Poses, quaternions and closed-form distances between shape primitives.

All lengths are millimeters, all angles radians.  Quaternions are stored
(w, x, y, z) and must be unit quaternions; vectors are plain float tuples
so that values survive document round trips exactly.  numpy is used for
the actual math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

QUAT_NORM_TOL = 1e-9


class GeometryError(ValueError):
    pass


def _as_tuple3(v) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in v)
    return (x, y, z)


def quat_normalize(q) -> tuple[float, float, float, float]:
    w, x, y, z = (float(c) for c in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise GeometryError("zero quaternion")
    return (w / n, x / n, y / n, z / n)


def quat_mul(a, b) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conj(q) -> tuple[float, float, float, float]:
    w, x, y, z = q
    return (w, -x, -y, -z)


def quat_from_axis_angle(axis, angle: float) -> tuple[float, float, float, float]:
    ax = np.asarray(axis, dtype=float)
    n = np.linalg.norm(ax)
    if n == 0.0:
        raise GeometryError("zero rotation axis")
    ax = ax / n
    half = 0.5 * angle
    s = math.sin(half)
    return (math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> tuple[float, float, float, float]:
    t = float(np.trace(m))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize((w, x, y, z))


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_angle(q) -> float:
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = min(1.0, max(-1.0, abs(float(q[0]))))
    return 2.0 * math.acos(w)


def rotation_angle_between(qa, qb) -> float:
    """Angle of the relative rotation taking qa to qb."""
    return quat_angle(quat_mul(quat_conj(qa), qb))


IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Pose:
    """Rigid placement: position in mm plus a unit orientation quaternion."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = IDENTITY_QUAT

    def __post_init__(self):
        object.__setattr__(self, "position", _as_tuple3(self.position))
        q = tuple(float(c) for c in self.orientation)
        if len(q) != 4:
            raise GeometryError("orientation must have 4 components")
        n = math.sqrt(sum(c * c for c in q))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise GeometryError(f"quaternion norm {n!r} is not 1 within {QUAT_NORM_TOL}")
        object.__setattr__(self, "orientation", q)

    @classmethod
    def make(cls, position=(0.0, 0.0, 0.0), orientation=IDENTITY_QUAT) -> "Pose":
        """Build a pose, normalizing the quaternion first."""
        return cls(_as_tuple3(position), quat_normalize(orientation))

    @property
    def p(self) -> np.ndarray:
        return np.array(self.position, dtype=float)

    @property
    def rot(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rot
        m[:3, 3] = self.position
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        return cls(_as_tuple3(m[:3, 3]), matrix_to_quat(m[:3, :3]))

    def transform_point(self, point) -> np.ndarray:
        return self.rot @ np.asarray(point, dtype=float) + self.p

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other lives in self's frame: world = self * other."""
        return Pose(
            _as_tuple3(self.transform_point(other.p)),
            quat_normalize(quat_mul(self.orientation, other.orientation)),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        pi = -(quat_to_matrix(qi) @ self.p)
        return Pose(_as_tuple3(pi), quat_normalize(qi))


class ShapeKind(str, Enum):
    BOX = "box"
    CAPSULE = "capsule"
    SPHERE = "sphere"


@dataclass(frozen=True)
class ShapePrimitive:
    """Occupancy stand-in for a CAD body.

    box: dimensions = full extents (lx, ly, lz)
    capsule: dimensions = (radius, segment length), axis along local z
    sphere: dimensions = (radius,)
    """

    kind: ShapeKind
    dimensions: tuple[float, ...]
    local_pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        kind = ShapeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        dims = tuple(float(d) for d in self.dimensions)
        expected = {ShapeKind.BOX: 3, ShapeKind.CAPSULE: 2, ShapeKind.SPHERE: 1}[kind]
        if len(dims) != expected:
            raise GeometryError(f"{kind.value} needs {expected} dimensions, got {len(dims)}")
        if kind is ShapeKind.CAPSULE:
            # zero segment length degenerates to a sphere, which is allowed
            if dims[0] <= 0.0 or dims[1] < 0.0:
                raise GeometryError(f"capsule dimensions must be positive, got {dims}")
        elif any(d <= 0.0 for d in dims):
            raise GeometryError(f"{kind.value} dimensions must be positive, got {dims}")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class PlacedShape:
    """A primitive placed in the world frame, tagged with its owner."""

    owner: str
    shape: ShapePrimitive
    world_pose: Pose

    def as_capsule(self) -> tuple[np.ndarray, np.ndarray, float] | None:
        """World segment endpoints and radius if this is a capsule or sphere."""
        s = self.shape
        pose = self.world_pose.compose(s.local_pose)
        if s.kind is ShapeKind.SPHERE:
            c = pose.p
            return c, c, s.dimensions[0]
        if s.kind is ShapeKind.CAPSULE:
            r, length = s.dimensions
            half = 0.5 * length * (pose.rot @ np.array([0.0, 0.0, 1.0]))
            return pose.p - half, pose.p + half, r
        return None

    def as_box(self) -> tuple[Pose, np.ndarray] | None:
        """World pose and half extents if this is a box."""
        s = self.shape
        if s.kind is not ShapeKind.BOX:
            return None
        pose = self.world_pose.compose(s.local_pose)
        return pose, 0.5 * np.asarray(s.dimensions, dtype=float)


def aabb(placed: PlacedShape) -> tuple[np.ndarray, np.ndarray]:
    """World axis-aligned bounds; cheap prefilter before exact distances."""
    box = placed.as_box()
    if box is not None:
        pose, half = box
        corners = np.array(
            [
                [sx * half[0], sy * half[1], sz * half[2]]
                for sx in (-1, 1)
                for sy in (-1, 1)
                for sz in (-1, 1)
            ]
        )
        world = np.array([pose.transform_point(c) for c in corners])
        return world.min(axis=0), world.max(axis=0)
    a, b, radius = placed.as_capsule()
    return np.minimum(a, b) - radius, np.maximum(a, b) + radius


def capsule_world(owner: str, a, b, radius: float) -> PlacedShape:
    """Capsule given directly by world endpoints; convenience for tests and body models."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = float(np.linalg.norm(b - a))
    mid = 0.5 * (a + b)
    if L < 1e-12:
        return PlacedShape(owner, ShapePrimitive(ShapeKind.SPHERE, (radius,)), Pose(_as_tuple3(mid)))
    axis = (b - a) / L
    # rotation taking +z to the segment axis
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, axis)
    c = float(np.dot(z, axis))
    if np.linalg.norm(v) < 1e-12:
        quat = IDENTITY_QUAT if c > 0 else quat_from_axis_angle((1.0, 0.0, 0.0), math.pi)
    else:
        quat = quat_from_axis_angle(v, math.atan2(float(np.linalg.norm(v)), c))
    return PlacedShape(
        owner,
        ShapePrimitive(ShapeKind.CAPSULE, (radius, L)),
        Pose(_as_tuple3(mid), quat_normalize(quat)),
    )


# ---------------------------------------------------------------------------
# primitive-primitive signed distances (negative = penetration depth)
# ---------------------------------------------------------------------------

def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between segments [p1,q1] and [p2,q2]."""
    p1 = np.asarray(p1, float)
    q1 = np.asarray(q1, float)
    p2 = np.asarray(p2, float)
    q2 = np.asarray(q2, float)
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-12
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    else:
        c = float(d1 @ r)
        if e <= eps:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(1.0, max(0.0, (b * f - c * e) / denom)) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    closest1 = p1 + s * d1
    closest2 = p2 + t * d2
    return float(np.linalg.norm(closest1 - closest2))


def point_box_signed_distance(point, half_extents) -> float:
    """Signed distance from a point to a box centered at origin (box frame)."""
    p = np.abs(np.asarray(point, dtype=float))
    h = np.asarray(half_extents, dtype=float)
    d = p - h
    outside = np.maximum(d, 0.0)
    dist_out = float(np.linalg.norm(outside))
    if dist_out > 0.0:
        return dist_out
    return float(np.max(d))  # negative: -distance to nearest face


def segment_box_distance(a, b, half_extents) -> float:
    """Signed distance between segment [a,b] and an origin box (box frame).

    Outside distance is exact (the unsigned point-box distance is convex
    along the segment, so a ternary search nails the minimum).  When the
    segment enters the box, the returned value is the most negative sampled
    point distance, i.e. an estimated penetration of the segment axis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.asarray(half_extents, dtype=float)

    def outside_dist(t: float) -> float:
        p = a + t * (b - a)
        d = np.abs(p) - h
        return float(np.linalg.norm(np.maximum(d, 0.0)))

    lo, hi = 0.0, 1.0
    for _ in range(80):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if outside_dist(m1) <= outside_dist(m2):
            hi = m2
        else:
            lo = m1
    t_star = 0.5 * (lo + hi)
    best = outside_dist(t_star)
    if best > 0.0:
        return best
    # segment axis intersects the box: report deepest sampled signed distance
    ts = np.linspace(0.0, 1.0, 65)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    d = np.abs(pts) - h[None, :]
    inside = np.all(d <= 0.0, axis=1)
    if not np.any(inside):
        return 0.0
    return float(np.max(d[inside], axis=1).min())


def _box_axes(pose: Pose) -> np.ndarray:
    return pose.rot


def box_box_signed_distance(pose_a: Pose, half_a, pose_b: Pose, half_b) -> float:
    """SAT on the 15 candidate axes.

    Positive values are the best separation found (a lower bound on the true
    distance); negative values are minus the penetration depth.
    """
    ha = np.asarray(half_a, dtype=float)
    hb = np.asarray(half_b, dtype=float)
    ra = _box_axes(pose_a)
    rb = _box_axes(pose_b)
    t = pose_b.p - pose_a.p

    axes = [ra[:, i] for i in range(3)] + [rb[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            cross = np.cross(ra[:, i], rb[:, j])
            n = np.linalg.norm(cross)
            if n > 1e-9:
                axes.append(cross / n)

    best = -math.inf
    for axis in axes:
        proj_a = float(np.sum(np.abs(axis @ ra) * ha))
        proj_b = float(np.sum(np.abs(axis @ rb) * hb))
        sep = abs(float(axis @ t)) - (proj_a + proj_b)
        if sep > best:
            best = sep
        if best > 0.0:
            return best
    return best


def signed_distance(a: PlacedShape, b: PlacedShape) -> float:
    """Signed distance between two placed primitives; negative = penetration."""
    cap_a = a.as_capsule()
    cap_b = b.as_capsule()
    if cap_a is not None and cap_b is not None:
        pa, qa, ra = cap_a
        pb, qb, rb = cap_b
        return segment_segment_distance(pa, qa, pb, qb) - (ra + rb)
    if cap_a is not None and cap_b is None:
        return _capsule_box_signed(cap_a, b)
    if cap_a is None and cap_b is not None:
        return _capsule_box_signed(cap_b, a)
    pose_a, half_a = a.as_box()
    pose_b, half_b = b.as_box()
    return box_box_signed_distance(pose_a, half_a, pose_b, half_b)


def _capsule_box_signed(cap: tuple[np.ndarray, np.ndarray, float], box: PlacedShape) -> float:
    p, q, r = cap
    pose, half = box.as_box()
    inv = pose.inverse()
    return segment_box_distance(inv.transform_point(p), inv.transform_point(q), half) - r


@dataclass(frozen=True)
class Contact:
    """One intersecting primitive pair, ordered by owner id."""

    owner_a: str
    owner_b: str
    depth: float  # penetration depth, mm

    def pair(self) -> tuple[str, str]:
        return (self.owner_a, self.owner_b)


def contacts_between(shapes_a: list[PlacedShape], shapes_b: list[PlacedShape]) -> list[Contact]:
    """All penetrating pairs between two shape groups."""
    out = []
    for sa in shapes_a:
        for sb in shapes_b:
            d = signed_distance(sa, sb)
            if d < 0.0:
                first, second = sorted((sa.owner, sb.owner))
                out.append(Contact(first, second, -d))
    return out
