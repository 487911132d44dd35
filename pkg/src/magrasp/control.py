"""
Force-aware controller stack.

Position: an admittance filter turns the measured external force into a compliant
reference, a PD loop tracks it, and the thrust map converts the commanded acceleration to a
body thrust vector and desired attitude. Attitude: a cascaded PID on body rates. Grasp: a
second admittance on the servo angle regulates the summed normal force.
"""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from magrasp.constants import (
    DERIVATIVE_CUTOFF_HZ,
    GRAVITY,
    INTEGRAL_CLAMP,
    MASS_BASE,
    PAYLOAD_FILTER_HZ,
    SENSOR_PERIOD,
    SIM_DT,
    STALE_PERIODS,
    THETA_MAX,
    THRUST_LIMIT,
)
from magrasp.errors import StaleData
from magrasp.geometry import Axes, Rotation, Vec3, attitude_error
from magrasp.plant import GRAVITY_VECTOR, GripperParams
from magrasp.tactile import SensorCalibration

logger = logging.getLogger(__name__)

_STRICT = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


# =============================================================================
# PARAMETERS
# =============================================================================


class PositionAdmittanceParams(BaseModel):
    """Diagonal virtual inertia, damping and stiffness. D defaults to critical damping."""

    model_config = _STRICT

    M: Axes = Axes.uniform(2.0)
    K: Axes = Axes.uniform(60.0)
    D: Optional[Axes] = None

    @model_validator(mode="after")
    def _positive(self):
        for name in ("M", "K", "D"):
            value = getattr(self, name)
            if value is not None and not value.all_positive():
                raise ValueError(f"{name} entries must be positive")
        return self

    def damping(self) -> Vec3:
        if self.D is not None:
            return self.D.vector()
        return 2.0 * np.sqrt(self.M.vector() * self.K.vector())


class TrackingGains(BaseModel):
    model_config = _STRICT

    K_p: Axes = Axes.uniform(4.0)
    K_v: Axes = Axes.uniform(3.5)
    K_R: Axes = Axes.uniform(5.0)
    K_P_omega: Axes = Axes.uniform(0.05)
    K_I_omega: Axes = Axes.uniform(0.01)
    K_D_omega: Axes = Axes.uniform(0.001)
    integral_clamp: float = Field(INTEGRAL_CLAMP, gt=0)
    derivative_cutoff_hz: float = Field(DERIVATIVE_CUTOFF_HZ, gt=0)

    @model_validator(mode="after")
    def _positive(self):
        for name in ("K_p", "K_v", "K_R", "K_P_omega", "K_I_omega", "K_D_omega"):
            if not getattr(self, name).all_positive():
                raise ValueError(f"{name} entries must be positive")
        return self


class GraspAdmittanceParams(BaseModel):
    model_config = _STRICT

    M: float = Field(0.1, gt=0)
    B: float = Field(2.0, gt=0)
    K: float = Field(0.01, gt=0)
    theta_r: float = 0.2
    f_d: float = Field(0.25, ge=0)
    # Command used when force feedback is switched off
    open_loop_rate: float = Field(0.1, gt=0)
    open_loop_target: float = THETA_MAX


# =============================================================================
# BUILDING BLOCKS
# =============================================================================


class LowPass:
    """First-order low-pass filter y += a (x - y) with a = dt / (dt + 1 / (2 pi fc))."""

    def __init__(self, cutoff_hz: float, dt: float, initial=None):
        self.alpha = dt / (dt + 1.0 / (2.0 * math.pi * cutoff_hz))
        self.value = initial

    def update(self, x):
        if self.value is None:
            self.value = x
        else:
            self.value = self.value + self.alpha * (x - self.value)
        return self.value

    def reset(self, initial=None) -> None:
        self.value = initial


def aggregate_external_force(
    forces: Mapping[int, Vec3],
    calibrations: Mapping[int, SensorCalibration],
    attitude: Rotation,
    ages: Optional[Mapping[int, float]] = None,
    max_age: float = STALE_PERIODS * SENSOR_PERIOD,
) -> Vec3:
    """Sum per-sensor forces in the body frame and express the total in the world frame.

    Args:
        forces: Per-node force estimates, sensor frame.
        calibrations: Per-node calibration, for the mount rotations.
        attitude: Body-to-world rotation.
        ages: Optional per-node estimate age in seconds.
        max_age: Oldest acceptable estimate.

    Raises:
        StaleData: If any estimate is older than max_age.
    """
    if ages:
        stale = sorted(node for node, age in ages.items() if age > max_age + 1e-12)
        if stale:
            raise StaleData(f"Estimates of nodes {stale} are older than {max_age * 1000:.0f} ms", stale)

    body = np.zeros(3)
    for node, f in forces.items():
        body += calibrations[node].mount_rotation.rotate(f)
    return attitude.rotate(body)


def grasp_force(forces: Mapping[int, Vec3], normals: Mapping[int, Vec3]) -> float:
    """Sum of absolute normal projections of the per-sensor forces."""
    return float(sum(abs(float(np.dot(f, normals[node]))) for node, f in forces.items()))


def estimate_payload_mass(f_ext_world: Vec3) -> float:
    """Supported mass implied by the vertical external force."""
    return max(0.0, -float(f_ext_world[2])) / GRAVITY


@dataclass
class AdmittanceState:
    p_d: Vec3
    v_d: Vec3 = field(default_factory=lambda: np.zeros(3))
    a_d: Vec3 = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def at(cls, p: Vec3) -> "AdmittanceState":
        return cls(np.array(p, dtype=float))


@dataclass(frozen=True, eq=False)
class Reference:
    p_r: Vec3
    v_r: Vec3 = field(default_factory=lambda: np.zeros(3))
    a_r: Vec3 = field(default_factory=lambda: np.zeros(3))


def admittance_step(
    params: PositionAdmittanceParams,
    ref: Reference,
    f_ext: Vec3,
    state: AdmittanceState,
    dt: float,
) -> AdmittanceState:
    """One semi-implicit step of M(p̈_d - p̈_r) + D(ṗ_d - ṗ_r) + K(p_d - p_r) = f_ext."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    M, D, K = params.M.vector(), params.damping(), params.K.vector()
    a_d = ref.a_r + (np.asarray(f_ext, dtype=float) - D * (state.v_d - ref.v_r) - K * (state.p_d - ref.p_r)) / M
    v_d = state.v_d + a_d * dt
    p_d = state.p_d + v_d * dt
    return AdmittanceState(p_d, v_d, a_d)


def position_pd(
    a_d: Vec3,
    v_d: Vec3,
    p_d: Vec3,
    p: Vec3,
    v: Vec3,
    gains: TrackingGains,
) -> Vec3:
    return a_d + gains.K_v.vector() * (v_d - v) + gains.K_p.vector() * (p_d - p)


@dataclass(frozen=True, eq=False)
class ThrustCommand:
    """Body thrust vector and its world-frame counterpart after clamping."""

    body: Vec3
    world: Vec3
    saturated: bool = False

    @property
    def collective(self) -> float:
        return float(self.body[2])


def thrust_command(
    a_cmd: Vec3,
    R: Rotation,
    mass: float,
    payload_ff: Optional[Vec3] = None,
    limit: float = THRUST_LIMIT,
) -> ThrustCommand:
    """T_d = R^T (m a_cmd - payload_ff - m g), clamped to the actuator limit.

    payload_ff is the measured external force to cancel, typically (0, 0, f_ext_z).
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    world = mass * np.asarray(a_cmd, dtype=float) - mass * GRAVITY_VECTOR
    if payload_ff is not None:
        world = world - np.asarray(payload_ff, dtype=float)

    saturated = False
    norm = float(np.linalg.norm(world))
    if norm > limit:
        world = world * (limit / norm)
        saturated = True
    return ThrustCommand(R.transpose().rotate(world), world, saturated)


def desired_attitude(force_world: Vec3, yaw: float = 0.0) -> Rotation:
    """Attitude whose body z axis is along the requested force, with the given heading."""
    norm = float(np.linalg.norm(force_world))
    if norm < 1e-9:
        return Rotation.rz(yaw)
    z_b = np.asarray(force_world, dtype=float) / norm
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = np.cross(z_b, heading)
    y_norm = float(np.linalg.norm(y_b))
    if y_norm < 1e-9:
        return Rotation.rz(yaw)
    y_b /= y_norm
    x_b = np.cross(y_b, z_b)
    return Rotation.from_columns(x_b, y_b, z_b)


@dataclass
class AttitudeState:
    integral: Vec3 = field(default_factory=lambda: np.zeros(3))
    prev_error: Optional[Vec3] = None
    derivative: Optional[LowPass] = None


def attitude_step(
    R_ref: Rotation,
    R: Rotation,
    omega: Vec3,
    gains: TrackingGains,
    state: AttitudeState,
    dt: float,
) -> Vec3:
    """Rate PID on omega_e = K_R e_R - omega; updates state in place and returns torque."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega_d = gains.K_R.vector() * attitude_error(R_ref, R)
    omega_e = omega_d - np.asarray(omega, dtype=float)

    state.integral = state.integral + omega_e * dt
    norm = float(np.linalg.norm(state.integral))
    if norm > gains.integral_clamp:
        state.integral = state.integral * (gains.integral_clamp / norm)

    if state.derivative is None:
        state.derivative = LowPass(gains.derivative_cutoff_hz, dt, np.zeros(3))
    raw = np.zeros(3) if state.prev_error is None else (omega_e - state.prev_error) / dt
    derivative = state.derivative.update(raw)
    state.prev_error = omega_e

    return (
        gains.K_P_omega.vector() * omega_e
        + gains.K_I_omega.vector() * state.integral
        + gains.K_D_omega.vector() * derivative
    )


@dataclass
class GraspState:
    dtheta: float = 0.0
    dtheta_dot: float = 0.0


def grasp_admittance_step(
    params: GraspAdmittanceParams,
    f_g: float,
    state: GraspState,
    dt: float,
    gripper: GripperParams = GripperParams(),
    f_d: Optional[float] = None,
) -> tuple[float, bool]:
    """Advance M Δθ̈ + B Δθ̇ + K Δθ = f_d - f_g and return (theta_d, clamped).

    While theta_d is held at a servo limit, Δθ stays at that limit and any rate pushing
    further out is dropped.
    """
    target = params.f_d if f_d is None else f_d
    accel = (target - f_g - params.B * state.dtheta_dot - params.K * state.dtheta) / params.M
    state.dtheta_dot += accel * dt
    state.dtheta += state.dtheta_dot * dt

    theta_d = params.theta_r + state.dtheta
    if theta_d > gripper.theta_max:
        state.dtheta = gripper.theta_max - params.theta_r
        state.dtheta_dot = min(state.dtheta_dot, 0.0)
        return gripper.theta_max, True
    if theta_d < gripper.theta_min:
        state.dtheta = gripper.theta_min - params.theta_r
        state.dtheta_dot = max(state.dtheta_dot, 0.0)
        return gripper.theta_min, True
    return theta_d, False


def open_loop_grasp_command(theta_cmd: float, rate: float, target: float, dt: float) -> float:
    """Move the command monotonically toward target at a fixed rate."""
    step = rate * dt
    if abs(target - theta_cmd) <= step:
        return target
    return theta_cmd + math.copysign(step, target - theta_cmd)


# =============================================================================
# CONTROLLER
# =============================================================================


@dataclass
class ControllerState:
    admittance: AdmittanceState
    attitude: AttitudeState = field(default_factory=AttitudeState)
    grasp: GraspState = field(default_factory=GraspState)


class ForceAwareController:
    """Position, attitude and grasp loops sharing one state.

    slow_update runs at the sensor rate with the latest force snapshot; fast_update runs
    every simulation step and returns the actuator commands.
    """

    def __init__(
        self,
        admittance: PositionAdmittanceParams,
        tracking: TrackingGains,
        grasp: GraspAdmittanceParams,
        p_r: Vec3,
        gripper: GripperParams = GripperParams(),
        mass: float = MASS_BASE,
        thrust_limit: float = THRUST_LIMIT,
        force_feedback: bool = True,
        payload_ff: bool = True,
        slow_dt: float = SENSOR_PERIOD,
        fast_dt: float = SIM_DT,
    ):
        self.admittance = admittance
        self.tracking = tracking
        self.grasp = grasp
        self.gripper = gripper
        self.mass = mass
        self.thrust_limit = thrust_limit
        self.force_feedback = force_feedback
        self.payload_ff = payload_ff
        self.slow_dt = slow_dt
        self.fast_dt = fast_dt

        self.reference = Reference(np.array(p_r, dtype=float))
        self.state = ControllerState(AdmittanceState.at(self.reference.p_r))
        self.payload_filter = LowPass(PAYLOAD_FILTER_HZ, slow_dt, 0.0)

        self.R_ref = Rotation.identity()
        self.force_world = -mass * GRAVITY_VECTOR
        self.theta_cmd = grasp.theta_r
        self.thrust_saturated = False
        self.grasp_clamped = False
        self.thrust_saturations = 0
        self.grasp_clamps = 0

    @property
    def payload_force(self) -> float:
        """Filtered vertical external force fed forward to thrust, N."""
        return float(self.payload_filter.value or 0.0)

    def slow_update(
        self,
        p: Vec3,
        v: Vec3,
        R: Rotation,
        f_ext: Vec3,
        f_g: float,
        f_d: float,
        forces_ready: bool = True,
        t: float = 0.0,
    ) -> None:
        """Position and grasp loops at the sensor rate.

        Args:
            p: Measured position.
            v: Measured velocity.
            R: Measured attitude.
            f_ext: External force estimate, world frame.
            f_g: Grasp force estimate.
            f_d: Grasp force setpoint.
            forces_ready: False while the force pipeline is not yet zeroed; force inputs are ignored.
            t: Simulation time, for logging.
        """
        use_forces = self.force_feedback and forces_ready
        f_in = np.asarray(f_ext, dtype=float) if use_forces else np.zeros(3)

        adm = admittance_step(self.admittance, self.reference, f_in, self.state.admittance, self.slow_dt)
        self.state.admittance = adm
        a_cmd = position_pd(adm.a_d, adm.v_d, adm.p_d, p, v, self.tracking)

        ff = None
        if self.payload_ff and use_forces:
            ff = np.array([0.0, 0.0, self.payload_filter.update(float(f_in[2]))])
        command = thrust_command(a_cmd, R, self.mass, ff, self.thrust_limit)
        self.force_world = command.world
        self.R_ref = desired_attitude(command.world)
        self.thrust_saturated = command.saturated
        if command.saturated:
            self.thrust_saturations += 1
            logger.warning("Thrust saturated at t=%.3f s", t)

        if not forces_ready:
            self.theta_cmd = self.grasp.theta_r
            self.grasp_clamped = False
        elif self.force_feedback:
            self.theta_cmd, self.grasp_clamped = grasp_admittance_step(
                self.grasp, f_g, self.state.grasp, self.slow_dt, self.gripper, f_d
            )
            if self.grasp_clamped:
                self.grasp_clamps += 1
        else:
            self.theta_cmd = open_loop_grasp_command(
                self.theta_cmd, self.grasp.open_loop_rate, self.grasp.open_loop_target, self.slow_dt
            )
            self.grasp_clamped = False

    def fast_update(self, R: Rotation, omega: Vec3) -> tuple[float, Vec3]:
        """Attitude loop; returns (collective thrust, body torque)."""
        torque = attitude_step(self.R_ref, R, omega, self.tracking, self.state.attitude, self.fast_dt)
        thrust = float(R.transpose().rotate(self.force_world)[2])
        return max(thrust, 0.0), torque
