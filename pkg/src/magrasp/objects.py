"""
Object models held by the gripper and the per-sensor contact forces they produce.

Normal forces come from the penetration of the object into the aperture ring. Tangential
forces carry the object's weight by Coulomb friction, shared in proportion to the normal
load. Once the gripper carries the full weight without slipping the object attaches and
its mass joins the vehicle dynamics.
"""

import logging
from dataclasses import dataclass, field
from typing import Annotated, ClassVar, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from magrasp.constants import GRAVITY, OBJECT_LOST_AFTER, SENSOR_COUNT
from magrasp.errors import ObjectLost
from magrasp.geometry import Vec3, sensor_azimuth
from magrasp.plant import GripperParams, ObjectReaction, QuadrotorState, aperture_radius

logger = logging.getLogger(__name__)

_STRICT = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


# =============================================================================
# MODELS
# =============================================================================


class SupportSchedule(BaseModel):
    """External support (hand, pedestal) that lets go of the object linearly."""

    model_config = _STRICT

    release_start: float = Field(3.0, ge=0)
    release_duration: float = Field(1.0, ge=0)

    def carried_fraction(self, t: float) -> float:
        if t < self.release_start:
            return 0.0
        if self.release_duration == 0:
            return 1.0
        return min(1.0, (t - self.release_start) / self.release_duration)


class _HeldObject(BaseModel):
    model_config = _STRICT

    radius: float = Field(0.06, gt=0)
    contact_stiffness: float = Field(500.0, gt=0)
    friction_mu: float = Field(0.8, gt=0)
    center_offset: tuple[float, float] = (0.0, 0.0)
    support: SupportSchedule = SupportSchedule()

    massless: ClassVar[bool] = False

    def mass_at(self, t: float) -> float:
        raise NotImplementedError

    def normal_force(self, penetration: float) -> float:
        """Total normal force for a uniform penetration of the ring, N."""
        return self.contact_stiffness * penetration


class BalloonModel(_HeldObject):
    """Tethered balloon: massless, soft, bursts above a force threshold."""

    kind: Literal["balloon"] = "balloon"
    radius: float = Field(0.10, gt=0)
    # (deformation m, slope N/m) knots; the slope applies from its knot onward
    stiffness_curve: list[tuple[float, float]] = [(0.0, 100.0)]
    burst_force: float = Field(0.9, gt=0)
    friction_mu: float = Field(0.5, gt=0)

    massless: ClassVar[bool] = True

    @field_validator("stiffness_curve")
    @classmethod
    def _check_curve(cls, curve):
        if not curve or curve[0][0] != 0.0:
            raise ValueError("stiffness curve must start at deformation 0")
        knots = [d for d, _ in curve]
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("stiffness curve knots must be strictly increasing")
        if any(s <= 0 for _, s in curve):
            raise ValueError("stiffness slopes must be positive")
        return curve

    def mass_at(self, t: float) -> float:
        return 0.0

    def normal_force(self, penetration: float) -> float:
        if penetration <= 0:
            return 0.0
        force = 0.0
        for k, (start, slope) in enumerate(self.stiffness_curve):
            end = self.stiffness_curve[k + 1][0] if k + 1 < len(self.stiffness_curve) else np.inf
            if penetration <= start:
                break
            force += slope * (min(penetration, end) - start)
        return force

    def deformation(self, force: float) -> float:
        """Inverse of normal_force."""
        if force <= 0:
            return 0.0
        remaining = force
        for k, (start, slope) in enumerate(self.stiffness_curve):
            end = self.stiffness_curve[k + 1][0] if k + 1 < len(self.stiffness_curve) else np.inf
            segment = slope * (end - start)
            if remaining <= segment:
                return start + remaining / slope
            remaining -= segment
        return float(self.stiffness_curve[-1][0])


class BeadContainerModel(_HeldObject):
    """Container whose mass grows while beads are poured in."""

    kind: Literal["bead_container"] = "bead_container"
    empty_mass: float = Field(0.05, ge=0)
    # (time s, added mass kg), linearly interpolated and held at the ends
    mass_schedule: list[tuple[float, float]] = [(5.0, 0.0), (15.0, 0.18)]

    @field_validator("mass_schedule")
    @classmethod
    def _check_schedule(cls, schedule):
        times = [t for t, _ in schedule]
        masses = [m for _, m in schedule]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("mass schedule must be time-sorted")
        if any(m < 0 for m in masses):
            raise ValueError("masses must be non-negative")
        if any(b < a for a, b in zip(masses, masses[1:])):
            raise ValueError("mass schedule must be non-decreasing")
        return schedule

    def mass_at(self, t: float) -> float:
        if not self.mass_schedule:
            return self.empty_mass
        times, masses = zip(*self.mass_schedule)
        return self.empty_mass + float(np.interp(t, times, masses))


class BottleModel(_HeldObject):
    kind: Literal["bottle"] = "bottle"
    mass: float = Field(0.18, ge=0)

    def mass_at(self, t: float) -> float:
        return self.mass


class RigidBlockModel(_HeldObject):
    kind: Literal["rigid_block"] = "rigid_block"
    mass: float = Field(0.1, ge=0)
    contact_stiffness: float = Field(2000.0, gt=0)
    friction_mu: float = Field(0.6, gt=0)

    def mass_at(self, t: float) -> float:
        return self.mass


ObjectModel = Annotated[
    Union[BalloonModel, BeadContainerModel, BottleModel, RigidBlockModel],
    Field(discriminator="kind"),
]


def balloon_state(balloon: BalloonModel, total_normal: float, burst: bool = False) -> tuple[float, bool]:
    """Deformation under a total normal force and the latched burst flag."""
    burst = burst or total_normal > balloon.burst_force
    return balloon.deformation(total_normal), burst


# =============================================================================
# CONTACT
# =============================================================================


@dataclass(frozen=True, eq=False)
class ContactReport:
    """Per-sensor forces exerted by the object on each sensor face, sensor frame."""

    forces: dict[int, Vec3]
    in_contact: dict[int, bool]
    total_normal: float = 0.0
    carried_load: float = 0.0
    slipping: bool = False
    internal_residual: Vec3 = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def empty(cls, count: int = SENSOR_COUNT) -> "ContactReport":
        return cls({i: np.zeros(3) for i in range(1, count + 1)}, dict.fromkeys(range(1, count + 1), False))


class GraspedObject:
    """Runtime state of an object model: burst, attachment, slip timer and drop."""

    def __init__(
        self,
        model,
        gripper: GripperParams = GripperParams(),
        sensor_count: int = SENSOR_COUNT,
        lost_after: float = OBJECT_LOST_AFTER,
    ):
        self.model = model
        self.gripper = gripper
        self.sensor_count = sensor_count
        self.lost_after = lost_after
        self.burst = False
        self.attached = False
        self.dropped = False
        self.slip_time = 0.0
        self.lost_at: Optional[float] = None
        self._directions = {
            i: np.array([np.cos(sensor_azimuth(i, sensor_count)), np.sin(sensor_azimuth(i, sensor_count)), 0.0])
            for i in range(1, sensor_count + 1)
        }
        self._asymmetric_logged = False

    @property
    def kind(self) -> str:
        return self.model.kind

    def penetrations(self, theta: float) -> dict[int, float]:
        r_ap, _ = aperture_radius(theta, self.gripper)
        offset = np.array([*self.model.center_offset, 0.0])
        return {i: max(0.0, self.model.radius + float(offset @ u) - r_ap) for i, u in self._directions.items()}

    def demanded_load(self, t: float) -> float:
        if self.model.massless:
            return 0.0
        fraction = 1.0 if self.attached else self.model.support.carried_fraction(t)
        return fraction * self.model.mass_at(t) * GRAVITY

    def contact(self, state: QuadrotorState, t: float, dt: float) -> ContactReport:
        """Contact forces for this step; updates burst, attachment and the slip timer.

        Raises:
            ObjectLost: When the carried load exceeded the friction capacity for too long.
        """
        if self.burst or self.dropped:
            return ContactReport.empty(self.sensor_count)

        depth = self.penetrations(state.theta)
        n = self.sensor_count
        normals = {i: self.model.normal_force(d) / n if d > 0 else 0.0 for i, d in depth.items()}
        total_normal = sum(normals.values())

        if isinstance(self.model, BalloonModel):
            _, burst = balloon_state(self.model, total_normal, self.burst)
            if burst:
                self.burst = True
                logger.warning("Balloon burst at t=%.3f s under %.3f N", t, total_normal)
                return ContactReport.empty(n)

        load = self.demanded_load(t)
        capacity = self.model.friction_mu * total_normal
        slipping = load > capacity
        carried = min(load, capacity)

        forces = {}
        for i, normal in normals.items():
            share = carried * normal / total_normal if total_normal > 0 else 0.0
            forces[i] = np.array([-share, 0.0, normal])

        residual = sum(normals[i] * self._directions[i] for i in normals)
        if np.linalg.norm(residual) > 1e-6 and not self._asymmetric_logged:
            logger.info("Asymmetric grip, internal residual %.4f N at t=%.3f s", np.linalg.norm(residual), t)
            self._asymmetric_logged = True

        self._update_grip(load, slipping, t, dt)

        return ContactReport(
            forces=forces,
            in_contact={i: d > 0 for i, d in depth.items()},
            total_normal=total_normal,
            carried_load=carried,
            slipping=slipping,
            internal_residual=residual,
        )

    def _update_grip(self, load: float, slipping: bool, t: float, dt: float) -> None:
        if load <= 0:
            self.slip_time = 0.0
            return

        if slipping:
            if self.attached:
                logger.warning("Object started slipping at t=%.3f s", t)
                self.attached = False
            self.slip_time += dt
            if self.slip_time > self.lost_after:
                self.dropped = True
                self.lost_at = t
                raise ObjectLost(f"{self.kind} slipped out of the grip", t)
            return

        self.slip_time = 0.0
        if not self.attached and self.model.support.carried_fraction(t) >= 1.0:
            self.attached = True
            logger.info("%s attached at t=%.3f s (%.3f kg)", self.kind, t, self.model.mass_at(t))

    def reaction(self, report: ContactReport, state: QuadrotorState, t: float) -> ObjectReaction:
        """Coupling to the vehicle for the step the report was computed for."""
        if self.dropped or self.burst or self.model.massless:
            return ObjectReaction()
        if self.attached:
            return ObjectReaction(attached_mass=self.model.mass_at(t))
        return ObjectReaction(external_force=state.R.rotate(np.array([0.0, 0.0, -report.carried_load])))


def contact_forces(state: QuadrotorState, obj: GraspedObject, t: float = 0.0, dt: float = 0.0) -> ContactReport:
    """Per-sensor contact forces of a held object; see GraspedObject.contact."""
    return obj.contact(state, t, dt)


def build_object(model, gripper: GripperParams = GripperParams()) -> GraspedObject:
    return GraspedObject(model, gripper)
