"""Frames, rotations and vector helpers shared by every module."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict
from scipy.spatial.transform import Rotation as _ScipyRotation

from magrasp.constants import ORTHONORMAL_REJECT, ORTHONORMAL_TOLERANCE, SENSOR_COUNT
from magrasp.errors import GeometryError

# Vectors are plain float arrays of shape (3,)
Vec3 = np.ndarray


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Vec3:
    """Build a finite 3-vector."""
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"Vector components must be finite: {v}")
    return v


def as_vec3(values) -> Vec3:
    """Coerce any length-3 sequence into a finite 3-vector."""
    v = np.asarray(values, dtype=float).reshape(3).copy()
    if not np.all(np.isfinite(v)):
        raise ValueError(f"Vector components must be finite: {v}")
    return v


def hat(v: Vec3) -> np.ndarray:
    """Skew-symmetric matrix such that hat(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m: np.ndarray) -> Vec3:
    """Inverse of hat for a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def orthonormal_defect(m: np.ndarray) -> float:
    """Largest deviation of m from a proper rotation."""
    gram = m.T @ m - np.eye(3)
    return float(max(np.max(np.abs(gram)), abs(np.linalg.det(m) - 1.0)))


@dataclass(frozen=True, eq=False)
class Rotation:
    """A proper rotation matrix, immutable once built.

    Matrices within ORTHONORMAL_TOLERANCE are kept as given. Larger defects up to
    ORTHONORMAL_REJECT are projected back with the polar decomposition; beyond that the
    construction fails.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError(f"Rotation must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("Rotation entries must be finite")

        defect = orthonormal_defect(m)
        if defect > ORTHONORMAL_REJECT:
            raise GeometryError(f"Matrix is not a rotation (defect {defect:.3g})")
        if defect > ORTHONORMAL_TOLERANCE:
            m, _ = scipy.linalg.polar(m)

        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float = 0.0) -> "Rotation":
        """Rotation from roll/pitch/yaw in radians (R = Rz(yaw) Ry(pitch) Rx(roll))."""
        return cls(_ScipyRotation.from_euler("xyz", [roll, pitch, yaw]).as_matrix())

    @classmethod
    def from_rotvec(cls, rotvec: Vec3) -> "Rotation":
        """Exponential map of a rotation vector."""
        return cls(_ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix())

    @classmethod
    def rx(cls, angle: float) -> "Rotation":
        return cls.from_rotvec([angle, 0.0, 0.0])

    @classmethod
    def ry(cls, angle: float) -> "Rotation":
        return cls.from_rotvec([0.0, angle, 0.0])

    @classmethod
    def rz(cls, angle: float) -> "Rotation":
        return cls.from_rotvec([0.0, 0.0, angle])

    @classmethod
    def from_columns(cls, x_axis: Vec3, y_axis: Vec3, z_axis: Vec3) -> "Rotation":
        return cls(np.column_stack([x_axis, y_axis, z_axis]))

    def euler(self) -> tuple[float, float, float]:
        """Roll, pitch, yaw in radians."""
        roll, pitch, yaw = _ScipyRotation.from_matrix(self.matrix).as_euler("xyz")
        return float(roll), float(pitch), float(yaw)

    def transpose(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def rotate(self, v: Vec3) -> Vec3:
        return self.matrix @ np.asarray(v, dtype=float)

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle between two rotations in radians."""
        cos_angle = (np.trace(self.matrix.T @ other.matrix) - 1.0) / 2.0
        return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))

    def allclose(self, other: "Rotation", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))

    def as_list(self) -> list[float]:
        """Row-major entries."""
        return [float(x) for x in self.matrix.reshape(9)]

    def __repr__(self) -> str:
        return f"Rotation({self.as_list()})"


def compose(r_ab: Rotation, r_bc: Rotation) -> Rotation:
    """Compose two rotations: frame c to frame a."""
    return r_ab.compose(r_bc)


def rotate(r: Rotation, v: Vec3) -> Vec3:
    """Express v in the target frame of r."""
    return r.rotate(v)


def attitude_error(r_ref: Rotation, r_meas: Rotation) -> Vec3:
    """Body-frame attitude error vee(1/2 (R^T R_d - R_d^T R)).

    The sign is chosen so that a positive gain K_R in omega_d = K_R e drives the
    measured attitude back toward the reference.
    """
    rd, r = r_ref.matrix, r_meas.matrix
    return vee(0.5 * (r.T @ rd - rd.T @ r))


class FrameKind(Enum):
    WORLD = "world"
    BODY = "body"
    SENSOR = "sensor"
    REFERENCE = "reference"


@dataclass(frozen=True)
class FrameTag:
    """Names a coordinate frame; sensor frames carry their 1-based index."""

    kind: FrameKind
    index: Optional[int] = None

    def __post_init__(self):
        if self.kind is FrameKind.SENSOR:
            if self.index is None or not 1 <= self.index <= SENSOR_COUNT:
                raise ValueError(f"Sensor frame index must be in [1, {SENSOR_COUNT}], got {self.index}")
        elif self.index is not None:
            raise ValueError(f"Frame {self.kind.value} takes no index")

    @classmethod
    def world(cls) -> "FrameTag":
        return cls(FrameKind.WORLD)

    @classmethod
    def body(cls) -> "FrameTag":
        return cls(FrameKind.BODY)

    @classmethod
    def sensor(cls, index: int) -> "FrameTag":
        return cls(FrameKind.SENSOR, index)

    @classmethod
    def reference(cls) -> "FrameTag":
        return cls(FrameKind.REFERENCE)

    def __str__(self) -> str:
        if self.kind is FrameKind.SENSOR:
            return f"sensor{self.index}"
        return self.kind.value


def sensor_azimuth(index: int, count: int = SENSOR_COUNT) -> float:
    """Azimuth in radians of sensor `index` (1-based) on a regular ring."""
    return 2.0 * np.pi * (index - 1) / count


def sensor_mount(index: int, count: int = SENSOR_COUNT) -> Rotation:
    """Sensor-to-body rotation for a ring-mounted sensor.

    The sensor z axis points radially outward (the face normal), x points along body up,
    and y completes the right-handed frame.
    """
    phi = sensor_azimuth(index, count)
    z_axis = np.array([np.cos(phi), np.sin(phi), 0.0])
    x_axis = np.array([0.0, 0.0, 1.0])
    return Rotation.from_columns(x_axis, np.cross(z_axis, x_axis), z_axis)


def hexagonal_layout(count: int = SENSOR_COUNT) -> dict[int, Rotation]:
    """Mount rotations keyed by 1-based sensor index."""
    return {i: sensor_mount(i, count) for i in range(1, count + 1)}


class Axes(BaseModel):
    """Per-axis parameter triple, e.g. the diagonal of a gain matrix."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    x: float
    y: float
    z: float

    @classmethod
    def uniform(cls, value: float) -> "Axes":
        return cls(x=value, y=value, z=value)

    @classmethod
    def of(cls, values) -> "Axes":
        x, y, z = (float(v) for v in values)
        return cls(x=x, y=y, z=z)

    def vector(self) -> Vec3:
        return np.array([self.x, self.y, self.z])

    def all_positive(self) -> bool:
        return self.x > 0 and self.y > 0 and self.z > 0
