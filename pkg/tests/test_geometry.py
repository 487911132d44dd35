"""Tests for rotations, frames and the sensor layout."""

import math

import numpy as np
import pytest

from magrasp.errors import GeometryError
from magrasp.geometry import (
    Axes,
    FrameKind,
    FrameTag,
    Rotation,
    as_vec3,
    attitude_error,
    compose,
    hat,
    hexagonal_layout,
    rotate,
    sensor_mount,
    vec3,
    vee,
)


class TestVectors:
    """Tests for vector helpers."""

    def test_vec3_rejects_non_finite(self):
        with pytest.raises(ValueError):
            vec3(0.0, math.nan, 0.0)

    def test_as_vec3_copies(self):
        src = np.array([1.0, 2.0, 3.0])
        v = as_vec3(src)
        v[0] = 9.0
        assert src[0] == 1.0

    def test_hat_is_cross_product(self):
        a = np.array([0.3, -1.2, 2.0])
        b = np.array([1.5, 0.4, -0.7])
        assert np.allclose(hat(a) @ b, np.cross(a, b))

    def test_vee_inverts_hat(self):
        a = np.array([0.3, -1.2, 2.0])
        assert np.allclose(vee(hat(a)), a)


class TestRotation:
    """Tests for the Rotation value type."""

    def test_identity(self):
        assert np.array_equal(Rotation.identity().matrix, np.eye(3))

    def test_matrix_is_read_only(self):
        r = Rotation.rz(0.3)
        with pytest.raises(ValueError):
            r.matrix[0, 0] = 2.0

    def test_small_defect_is_projected(self):
        m = Rotation.rz(0.3).matrix.copy()
        m[0, 0] += 1e-6
        r = Rotation(m)
        assert np.allclose(r.matrix.T @ r.matrix, np.eye(3), atol=1e-12)

    def test_large_defect_is_rejected(self):
        m = np.eye(3)
        m[0, 0] = 1.1
        with pytest.raises(GeometryError):
            Rotation(m)

    def test_reflection_is_rejected(self):
        with pytest.raises(GeometryError):
            Rotation(np.diag([1.0, 1.0, -1.0]))

    def test_wrong_shape(self):
        with pytest.raises(GeometryError):
            Rotation(np.eye(2))

    def test_euler_round_trip(self):
        r = Rotation.from_euler(0.2, -0.3, 0.5)
        roll, pitch, yaw = r.euler()
        assert roll == pytest.approx(0.2)
        assert pitch == pytest.approx(-0.3)
        assert yaw == pytest.approx(0.5)

    def test_transpose_is_inverse(self):
        r = Rotation.from_euler(0.4, 0.1, -1.0)
        assert r.compose(r.transpose()).allclose(Rotation.identity())

    def test_angle_to(self):
        assert Rotation.identity().angle_to(Rotation.rx(0.25)) == pytest.approx(0.25)

    def test_as_list_is_row_major(self):
        r = Rotation.rz(math.pi / 2)
        entries = r.as_list()
        assert entries[1] == pytest.approx(-1.0)
        assert entries[3] == pytest.approx(1.0)

    def test_compose_adds_yaw(self):
        assert compose(Rotation.rz(math.radians(30.0)), Rotation.rz(math.radians(60.0))).allclose(
            Rotation.rz(math.pi / 2)
        )

    def test_compose_inverse_pair(self):
        assert compose(Rotation.rz(math.pi / 2), Rotation.rz(-math.pi / 2)).allclose(Rotation.identity())

    def test_compose_is_associative(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            a, b, c = (Rotation.from_rotvec(rng.normal(size=3)) for _ in range(3))
            assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-12)

    def test_rotate_preserves_norms_and_inner_products(self):
        rng = np.random.default_rng(22)
        for _ in range(200):
            r = Rotation.from_rotvec(rng.normal(size=3))
            u, v = rng.normal(size=3), rng.normal(size=3)
            ru, rv = rotate(r, u), rotate(r, v)
            assert abs(np.linalg.norm(ru) - np.linalg.norm(u)) < 1e-9
            assert abs(ru @ rv - u @ v) < 1e-9

    def test_rotate_quarter_turn(self):
        assert rotate(Rotation.rz(math.pi / 2), np.array([1.0, 0.0, 0.0])) == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)
        half = math.sqrt(2.0) / 2.0
        assert rotate(Rotation.rx(math.pi / 4), np.array([0.0, 1.0, 0.0])) == pytest.approx([0.0, half, half])


class TestAttitudeError:
    """Tests for the attitude error map."""

    def test_zero_at_reference(self):
        r = Rotation.from_euler(0.1, 0.2, 0.3)
        assert np.allclose(attitude_error(r, r), 0.0)

    def test_sign_opposes_roll(self):
        e = attitude_error(Rotation.identity(), Rotation.rx(0.1))
        assert e[0] == pytest.approx(-math.sin(0.1))
        assert e[1] == pytest.approx(0.0)
        assert e[2] == pytest.approx(0.0)

    def test_antisymmetric_in_arguments(self):
        a = Rotation.from_euler(0.1, -0.2, 0.0)
        b = Rotation.from_euler(-0.3, 0.05, 0.4)
        assert np.allclose(attitude_error(a, b), -attitude_error(b, a))

    def test_small_yaw_error(self):
        for eps in (1e-3, 1e-2, -5e-3):
            e = attitude_error(Rotation.identity(), Rotation.rz(eps))
            assert e == pytest.approx([0.0, 0.0, -eps], abs=eps * eps)


class TestFrames:
    """Tests for frame tags and the sensor ring."""

    def test_sensor_tag_requires_index(self):
        with pytest.raises(ValueError):
            FrameTag(FrameKind.SENSOR)

    def test_sensor_index_range(self):
        with pytest.raises(ValueError):
            FrameTag.sensor(7)

    def test_world_takes_no_index(self):
        with pytest.raises(ValueError):
            FrameTag(FrameKind.WORLD, 1)

    def test_str(self):
        assert str(FrameTag.sensor(3)) == "sensor3"
        assert str(FrameTag.reference()) == "reference"

    def test_layout_has_six_sensors(self):
        assert sorted(hexagonal_layout()) == [1, 2, 3, 4, 5, 6]

    def test_sensor_faces_point_outward(self):
        for index, mount in hexagonal_layout().items():
            outward = mount.rotate([0.0, 0.0, 1.0])
            phi = 2 * math.pi * (index - 1) / 6
            assert np.allclose(outward, [math.cos(phi), math.sin(phi), 0.0])

    def test_sensor_x_is_body_up(self):
        assert np.allclose(sensor_mount(4).rotate([1.0, 0.0, 0.0]), [0.0, 0.0, 1.0])

    def test_normals_cancel(self):
        total = sum(m.rotate([0.0, 0.0, 1.0]) for m in hexagonal_layout().values())
        assert np.allclose(total, 0.0)


class TestAxes:
    """Tests for the per-axis parameter triple."""

    def test_uniform(self):
        assert Axes.uniform(2.0).vector().tolist() == [2.0, 2.0, 2.0]

    def test_all_positive(self):
        assert Axes.of([1, 2, 3]).all_positive()
        assert not Axes.of([1, 0, 3]).all_positive()

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Axes(x=math.nan, y=0.0, z=0.0)
