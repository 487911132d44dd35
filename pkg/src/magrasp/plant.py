"""
Rigid-body quadrotor, servo-driven aperture and simulation clock.

All quantities are SI. The world z axis points up; R maps body to world; omega is in the
body frame.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from magrasp.constants import (
    APERTURE_R_MAX,
    APERTURE_R_MIN,
    DIVERGENCE_POSITION,
    DIVERGENCE_RATE,
    GRAVITY,
    INERTIA_DIAG,
    MASS_BASE,
    MOTOR_TAU,
    SENSOR_PERIOD,
    SERVO_RATE_MAX,
    SERVO_TAU,
    SIM_DT,
    THETA_MAX,
    THETA_MIN,
    THRUST_LIMIT,
)
from magrasp.errors import NumericalDivergence
from magrasp.geometry import Axes, Rotation, Vec3, as_vec3

logger = logging.getLogger(__name__)

GRAVITY_VECTOR = np.array([0.0, 0.0, -GRAVITY])


# =============================================================================
# PARAMETERS
# =============================================================================


class GripperParams(BaseModel):
    """Servo limits and the angle-to-radius map of the deformable frame."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    theta_min: float = THETA_MIN
    theta_max: float = THETA_MAX
    r_max: float = Field(APERTURE_R_MAX, gt=0)
    r_min: float = Field(APERTURE_R_MIN, gt=0)
    servo_rate_max: float = Field(SERVO_RATE_MAX, gt=0)
    servo_tau: float = Field(SERVO_TAU, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.theta_max <= self.theta_min:
            raise ValueError("theta_max must be greater than theta_min")
        if self.r_max <= self.r_min:
            raise ValueError("r_max must be greater than r_min")
        return self


class PlantParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    mass_base: float = Field(MASS_BASE, gt=0)
    inertia: Axes = Axes.of(INERTIA_DIAG)
    motor_tau: float = Field(MOTOR_TAU, ge=0)
    thrust_limit: float = Field(THRUST_LIMIT, gt=0)
    dt: float = Field(SIM_DT, gt=0, le=0.01)
    position_noise: float = Field(0.0, ge=0)
    initial_altitude: float = Field(1.0, ge=0)
    gripper: GripperParams = GripperParams()

    @model_validator(mode="after")
    def _check(self):
        if not self.inertia.all_positive():
            raise ValueError("inertia entries must be positive")
        ratio = SENSOR_PERIOD / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"dt must divide the sensor period {SENSOR_PERIOD} s")
        return self


# =============================================================================
# STATE
# =============================================================================


@dataclass(frozen=True, eq=False)
class QuadrotorState:
    """Immutable snapshot of the vehicle; step functions return new instances."""

    p: Vec3
    v: Vec3
    R: Rotation
    omega: Vec3
    theta: float
    mass_base: float = MASS_BASE
    thrust: float = 0.0  # actual (lagged) collective thrust, N
    torque: Vec3 = field(default_factory=lambda: np.zeros(3))  # actual (lagged) body torque, N m
    grounded: bool = False

    def __post_init__(self):
        if self.mass_base <= 0:
            raise ValueError(f"mass_base must be positive, got {self.mass_base}")

    @classmethod
    def hover(cls, altitude: float = 1.0, mass: float = MASS_BASE, theta: float = THETA_MIN) -> "QuadrotorState":
        """At rest, level, with the actuators already producing hover thrust."""
        return cls(
            p=np.array([0.0, 0.0, altitude]),
            v=np.zeros(3),
            R=Rotation.identity(),
            omega=np.zeros(3),
            theta=theta,
            mass_base=mass,
            thrust=mass * GRAVITY,
        )


@dataclass
class SimClock:
    dt: float = SIM_DT
    step_count: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def t(self) -> float:
        return self.step_count * self.dt

    def tick(self) -> float:
        self.step_count += 1
        return self.t

    def steps_per(self, period: float) -> int:
        return int(round(period / self.dt))


@dataclass(frozen=True, eq=False)
class ObjectReaction:
    """What a held object does to the vehicle: either added mass or an external force."""

    attached_mass: float = 0.0
    external_force: Vec3 = field(default_factory=lambda: np.zeros(3))  # world frame, N


# =============================================================================
# GRIPPER
# =============================================================================


def aperture_radius(theta: float, gripper: GripperParams = GripperParams()) -> tuple[float, bool]:
    """Inner-wall radius for a servo angle.

    Returns:
        (radius in m, saturated). Angles outside the servo range are clamped and flagged.
    """
    clamped = min(max(theta, gripper.theta_min), gripper.theta_max)
    fraction = (clamped - gripper.theta_min) / (gripper.theta_max - gripper.theta_min)
    radius = gripper.r_max - (gripper.r_max - gripper.r_min) * fraction
    return radius, clamped != theta


def step_servo(theta: float, theta_cmd: float, dt: float, gripper: GripperParams = GripperParams()) -> float:
    """First-order tracking of the commanded angle with a rate limit."""
    theta_cmd = min(max(theta_cmd, gripper.theta_min), gripper.theta_max)
    error = theta_cmd - theta
    if gripper.servo_tau > 0:
        rate = error / gripper.servo_tau
    else:
        rate = math.copysign(gripper.servo_rate_max, error) if error else 0.0
    rate = min(max(rate, -gripper.servo_rate_max), gripper.servo_rate_max)

    step = rate * dt
    if abs(step) > abs(error):
        step = error
    return min(max(theta + step, gripper.theta_min), gripper.theta_max)


# =============================================================================
# DYNAMICS
# =============================================================================


def _lag(actual, command, dt: float, tau: float):
    if tau <= 0:
        return command
    return actual + (command - actual) * (1.0 - math.exp(-dt / tau))


def step_dynamics(
    state: QuadrotorState,
    thrust: float,
    torque: Vec3,
    reaction: ObjectReaction,
    dt: float,
    params: PlantParams = PlantParams(),
    t: float = 0.0,
) -> QuadrotorState:
    """Advance the rigid body one step with semi-implicit Euler.

    Args:
        state: Current state.
        thrust: Commanded collective thrust along body z, N.
        torque: Commanded body torque, N m.
        reaction: Held-object coupling for this step.
        dt: Step in seconds, (0, 0.01].
        params: Plant parameters.
        t: Simulation time, used in diagnostics.

    Returns:
        The next state.

    Raises:
        NumericalDivergence: If position or body rate leave the sanity bounds.
    """
    if not 0 < dt <= 0.01:
        raise ValueError(f"dt must be in (0, 0.01], got {dt}")

    thrust_actual = _lag(state.thrust, thrust, dt, params.motor_tau)
    torque_actual = _lag(state.torque, np.asarray(torque, dtype=float), dt, params.motor_tau)

    mass = state.mass_base + reaction.attached_mass
    force = state.R.rotate(np.array([0.0, 0.0, thrust_actual])) + mass * GRAVITY_VECTOR + reaction.external_force
    v = state.v + (force / mass) * dt
    p = state.p + v * dt

    inertia = params.inertia.vector()
    omega = state.omega
    omega_dot = (torque_actual - np.cross(omega, inertia * omega)) / inertia
    omega = omega + omega_dot * dt
    R = state.R.compose(Rotation.from_rotvec(omega * dt))

    grounded = state.grounded
    if p[2] < 0.0:
        if not grounded:
            logger.warning("Ground contact at t=%.3f s", t)
        grounded = True
        p = p.copy()
        p[2] = 0.0
        v = v.copy()
        v[2] = max(v[2], 0.0)

    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(omega))):
        raise NumericalDivergence("State became non-finite", t)
    if np.linalg.norm(p) > DIVERGENCE_POSITION:
        raise NumericalDivergence(f"|p| = {np.linalg.norm(p):.1f} m exceeds {DIVERGENCE_POSITION} m", t)
    if np.linalg.norm(omega) > DIVERGENCE_RATE:
        raise NumericalDivergence(f"|omega| = {np.linalg.norm(omega):.1f} rad/s exceeds {DIVERGENCE_RATE} rad/s", t)

    return replace(
        state,
        p=p,
        v=v,
        R=R,
        omega=omega,
        thrust=float(thrust_actual),
        torque=as_vec3(torque_actual),
        grounded=grounded,
    )
