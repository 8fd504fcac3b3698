"""Pose algebra and primitive distance checks against analytic cases."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twincell.geometry import (
    GeometryError,
    PlacedShape,
    Pose,
    ShapeKind,
    ShapePrimitive,
    aabb,
    capsule_world,
    contacts_between,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_rotate,
    rotation_angle_between,
    signed_distance,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
unit_component = st.floats(-1.0, 1.0, allow_nan=False)


def sphere(owner: str, center, radius: float) -> PlacedShape:
    return PlacedShape(owner, ShapePrimitive(ShapeKind.SPHERE, (radius,)), Pose(center))


def box(owner: str, center, dims, orientation=(1.0, 0.0, 0.0, 0.0)) -> PlacedShape:
    return PlacedShape(owner, ShapePrimitive(ShapeKind.BOX, tuple(dims)), Pose.make(center, orientation))


class TestQuaternions:
    @given(st.tuples(unit_component, unit_component, unit_component, unit_component))
    def test_normalize_gives_unit_norm(self, q):
        if all(abs(c) < 1e-12 for c in q):
            return
        n = quat_normalize(q)
        assert math.isclose(sum(c * c for c in n), 1.0, abs_tol=1e-12)

    def test_axis_angle_rotates_x_to_y(self):
        q = quat_from_axis_angle((0, 0, 1), math.pi / 2)
        rotated = quat_rotate(q, (1.0, 0.0, 0.0))
        assert np.allclose(rotated, (0.0, 1.0, 0.0), atol=1e-12)

    @given(st.floats(0.01, math.pi - 0.01))
    def test_rotation_angle_recovers_axis_angle(self, angle):
        qa = quat_from_axis_angle((0, 0, 1), 0.0)
        qb = quat_from_axis_angle((0, 0, 1), angle)
        assert math.isclose(rotation_angle_between(qa, qb), angle, abs_tol=1e-9)

    @given(st.floats(0.1, math.pi), st.floats(0.1, math.pi))
    def test_composition_adds_coaxial_angles(self, a, b):
        qa = quat_from_axis_angle((1, 0, 0), a)
        qb = quat_from_axis_angle((1, 0, 0), b)
        combined = quat_mul(qa, qb)
        expected = quat_from_axis_angle((1, 0, 0), a + b)
        # acos near w=1 amplifies rounding to ~1e-6 rad
        assert rotation_angle_between(combined, expected) < 1e-5


class TestPose:
    def test_rejects_unnormalized_quaternion(self):
        with pytest.raises(GeometryError):
            Pose((0, 0, 0), (1.0, 1.0, 0.0, 0.0))

    def test_make_normalizes(self):
        p = Pose.make((1, 2, 3), (2.0, 0.0, 0.0, 0.0))
        assert p.orientation == (1.0, 0.0, 0.0, 0.0)

    @given(
        st.tuples(finite, finite, finite),
        st.tuples(unit_component, unit_component, unit_component, unit_component),
        st.tuples(finite, finite, finite),
    )
    def test_inverse_undoes_transform(self, position, q, point):
        if sum(c * c for c in q) < 1e-6:
            return
        pose = Pose.make(position, q)
        back = pose.inverse().transform_point(pose.transform_point(point))
        assert np.allclose(back, point, atol=1e-6)

    def test_compose_matches_matrix_product(self):
        a = Pose.make((10, 0, 5), quat_from_axis_angle((0, 0, 1), 0.7))
        b = Pose.make((0, -3, 2), quat_from_axis_angle((1, 0, 0), -0.4))
        assert np.allclose(a.compose(b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


class TestShapeValidation:
    def test_dimensions_must_be_positive(self):
        with pytest.raises(GeometryError):
            ShapePrimitive(ShapeKind.BOX, (10.0, -1.0, 10.0))

    def test_sphere_needs_one_dimension(self):
        with pytest.raises(GeometryError):
            ShapePrimitive(ShapeKind.SPHERE, (1.0, 2.0))


class TestSignedDistance:
    @given(st.floats(0.0, 500.0))
    def test_sphere_sphere_matches_center_arithmetic(self, gap):
        a = sphere("a", (0, 0, 0), 50.0)
        b = sphere("b", (100.0 + gap, 0, 0), 50.0)
        assert math.isclose(signed_distance(a, b), gap, abs_tol=1e-9)

    def test_overlapping_spheres_report_penetration(self):
        a = sphere("a", (0, 0, 0), 60.0)
        b = sphere("b", (100, 0, 0), 60.0)
        assert math.isclose(signed_distance(a, b), -20.0, abs_tol=1e-9)

    def test_capsule_axis_offset(self):
        cap = capsule_world("c", (0, 0, -50), (0, 0, 50), 10.0)
        probe = sphere("p", (40, 0, 25), 10.0)
        assert math.isclose(signed_distance(cap, probe), 20.0, abs_tol=1e-9)

    def test_box_face_gap(self):
        a = box("a", (0, 0, 0), (100, 100, 100))
        b = box("b", (130, 0, 0), (100, 100, 100))
        assert math.isclose(signed_distance(a, b), 30.0, abs_tol=1e-6)

    def test_rotated_box_closes_gap(self):
        a = box("a", (0, 0, 0), (100, 100, 100))
        tilted = box("b", (130, 0, 0), (100, 100, 100), quat_from_axis_angle((0, 0, 1), math.pi / 4))
        assert signed_distance(a, tilted) < 30.0

    @given(
        st.sampled_from(["sphere", "box", "capsule"]),
        st.sampled_from(["sphere", "box", "capsule"]),
        st.tuples(st.floats(-200, 200), st.floats(-200, 200), st.floats(-200, 200)),
    )
    @settings(max_examples=60)
    def test_symmetry_in_argument_order(self, kind_a, kind_b, offset):
        def make(owner, kind, center):
            if kind == "sphere":
                return sphere(owner, center, 40.0)
            if kind == "box":
                return box(owner, center, (80, 60, 40))
            c = np.asarray(center, dtype=float)
            return capsule_world(owner, c - (0, 0, 30), c + (0, 0, 30), 20.0)

        a = make("a", kind_a, (0.0, 0.0, 0.0))
        b = make("b", kind_b, offset)
        assert math.isclose(signed_distance(a, b), signed_distance(b, a), abs_tol=1e-9)


class TestAabb:
    @given(
        st.tuples(st.floats(-300, 300), st.floats(-300, 300), st.floats(-300, 300)),
        st.tuples(unit_component, unit_component, unit_component, unit_component),
    )
    @settings(max_examples=40)
    def test_rotated_box_corners_stay_inside(self, center, q):
        if sum(c * c for c in q) < 1e-6:
            return
        placed = box("a", center, (120, 80, 40), quat_normalize(q))
        lo, hi = aabb(placed)
        pose, half = placed.as_box()
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    corner = pose.transform_point(half * (sx, sy, sz))
                    assert np.all(corner >= lo - 1e-9) and np.all(corner <= hi + 1e-9)

    def test_capsule_bounds_include_radius(self):
        cap = capsule_world("c", (0, 0, -50), (0, 0, 50), 25.0)
        lo, hi = aabb(cap)
        assert np.allclose(lo, (-25, -25, -75)) and np.allclose(hi, (25, 25, 75))


class TestContacts:
    def test_only_penetrating_pairs_reported(self):
        group_a = [sphere("a1", (0, 0, 0), 50.0), sphere("a2", (500, 0, 0), 50.0)]
        group_b = [sphere("b", (60, 0, 0), 50.0)]
        contacts = contacts_between(group_a, group_b)
        assert [c.pair() for c in contacts] == [("a1", "b")]
        assert math.isclose(contacts[0].depth, 40.0, abs_tol=1e-9)

    def test_owner_order_is_sorted(self):
        contacts = contacts_between([sphere("z", (0, 0, 0), 50)], [sphere("a", (10, 0, 0), 50)])
        assert contacts[0].pair() == ("a", "z")

    def test_touching_is_not_contact(self):
        a = [sphere("a", (0, 0, 0), 50.0)]
        b = [sphere("b", (100, 0, 0), 50.0)]
        assert contacts_between(a, b) == []
