"""Tests for the admittance, attitude, thrust and grasp loops."""

import math

import numpy as np
import pytest

from magrasp.constants import GRAVITY, MASS_BASE
from magrasp.control import (
    AdmittanceState,
    AttitudeState,
    ForceAwareController,
    GraspAdmittanceParams,
    GraspState,
    LowPass,
    PositionAdmittanceParams,
    Reference,
    TrackingGains,
    admittance_step,
    aggregate_external_force,
    attitude_step,
    desired_attitude,
    estimate_payload_mass,
    grasp_admittance_step,
    grasp_force,
    open_loop_grasp_command,
    position_pd,
    thrust_command,
)
from magrasp.errors import StaleData
from magrasp.geometry import Axes, Rotation, hexagonal_layout
from magrasp.plant import ObjectReaction, PlantParams, QuadrotorState, step_dynamics


def _controller(**kwargs) -> ForceAwareController:
    return ForceAwareController(
        PositionAdmittanceParams(),
        TrackingGains(),
        GraspAdmittanceParams(),
        p_r=np.array([0.0, 0.0, 1.0]),
        **kwargs,
    )


class TestParams:
    """Tests for gain validation."""

    def test_critical_damping_default(self):
        params = PositionAdmittanceParams(M=Axes.uniform(1.0), K=Axes.uniform(16.0))
        assert params.damping() == pytest.approx([8.0, 8.0, 8.0])

    def test_explicit_damping(self):
        params = PositionAdmittanceParams(D=Axes.uniform(3.0))
        assert params.damping() == pytest.approx([3.0, 3.0, 3.0])

    def test_positive_entries(self):
        with pytest.raises(ValueError):
            PositionAdmittanceParams(K=Axes(x=1.0, y=0.0, z=1.0))
        with pytest.raises(ValueError):
            TrackingGains(K_R=Axes(x=-1.0, y=1.0, z=1.0))

    def test_grasp_force_non_negative(self):
        with pytest.raises(ValueError):
            GraspAdmittanceParams(f_d=-0.1)


class TestAdmittance:
    """Tests for the position admittance filter."""

    def test_statics(self):
        params = PositionAdmittanceParams(M=Axes.uniform(1.0), K=Axes.uniform(10.0))
        ref = Reference(np.array([0.0, 0.0, 1.0]))
        state = AdmittanceState.at(ref.p_r)
        # 10 time constants of the slowest mode
        tau = 1.0 / math.sqrt(10.0)
        for _ in range(int(round(10 * tau / 0.001))):
            state = admittance_step(params, ref, np.array([0.0, 0.0, -1.0]), state, 0.001)
        offset = state.p_d - ref.p_r
        assert offset == pytest.approx([0.0, 0.0, -0.1], rel=1e-3, abs=1e-9)

    def test_no_force_stays_at_reference(self):
        ref = Reference(np.array([1.0, 2.0, 3.0]))
        state = AdmittanceState.at(ref.p_r)
        for _ in range(50):
            state = admittance_step(PositionAdmittanceParams(), ref, np.zeros(3), state, 0.02)
        assert state.p_d == pytest.approx([1.0, 2.0, 3.0])

    def test_critically_damped_step_does_not_overshoot(self):
        params = PositionAdmittanceParams(M=Axes.uniform(1.0), K=Axes.uniform(10.0))
        ref = Reference(np.zeros(3))
        state = AdmittanceState.at(ref.p_r)
        lowest = 0.0
        for _ in range(2000):
            state = admittance_step(params, ref, np.array([0.0, 0.0, -1.0]), state, 0.02)
            lowest = min(lowest, float(state.p_d[2]))
        assert lowest >= -0.1 - 1e-6
        assert state.p_d[2] == pytest.approx(-0.1, abs=1e-9)

    def test_dt_positive(self):
        with pytest.raises(ValueError):
            admittance_step(PositionAdmittanceParams(), Reference(np.zeros(3)), np.zeros(3),
                            AdmittanceState.at(np.zeros(3)), 0.0)


class TestForces:
    """Tests for external and grasp force aggregation."""

    def _calibrations(self, film, coefficients):
        return {
            node: film.true_calibration(coefficients, node_id=node, mount_rotation=mount)
            for node, mount in hexagonal_layout().items()
        }

    def test_external_force_world(self, film, coefficients):
        cals = self._calibrations(film, coefficients)
        forces = {node: np.array([-0.1, 0.0, 0.2]) for node in cals}
        f_ext = aggregate_external_force(forces, cals, Rotation.identity())
        assert f_ext == pytest.approx([0.0, 0.0, -0.6], abs=1e-12)

    def test_external_force_rotates_with_attitude(self, film, coefficients):
        cals = self._calibrations(film, coefficients)
        forces = {node: np.array([-0.1, 0.0, 0.0]) for node in cals}
        f_ext = aggregate_external_force(forces, cals, Rotation.ry(math.pi / 2))
        assert f_ext == pytest.approx([-0.6, 0.0, 0.0], abs=1e-12)

    def test_stale_estimate(self, film, coefficients):
        cals = self._calibrations(film, coefficients)
        forces = {node: np.zeros(3) for node in cals}
        ages = dict.fromkeys(cals, 0.01)
        ages[4] = 0.1
        with pytest.raises(StaleData) as exc_info:
            aggregate_external_force(forces, cals, Rotation.identity(), ages)
        assert exc_info.value.nodes == [4]

    def test_grasp_force_sums_absolute_normals(self):
        normal = np.array([0.0, 0.0, 1.0])
        forces = {1: np.array([0.3, 0.0, 0.2]), 2: np.array([0.0, 0.1, -0.3])}
        assert grasp_force(forces, {1: normal, 2: normal}) == pytest.approx(0.5)

    def test_payload_mass(self):
        assert estimate_payload_mass(np.array([0.0, 0.0, -GRAVITY * 0.2])) == pytest.approx(0.2)
        assert estimate_payload_mass(np.array([0.0, 0.0, 1.0])) == 0.0


class TestPositionPD:
    """Tests for the position tracking law."""

    def test_exact_tracking_passes_feedforward(self):
        a_d = np.array([0.1, -0.2, 0.3])
        p = np.array([1.0, 2.0, 3.0])
        assert position_pd(a_d, np.zeros(3), p, p, np.zeros(3), TrackingGains()) == pytest.approx(a_d)

    def test_position_error(self):
        a_cmd = position_pd(np.zeros(3), np.zeros(3), np.array([0.1, 0.0, 0.0]), np.zeros(3), np.zeros(3),
                            TrackingGains(K_p=Axes.uniform(4.0)))
        assert a_cmd == pytest.approx([0.4, 0.0, 0.0])

    def test_superposition(self):
        gains = TrackingGains(K_p=Axes.uniform(4.0), K_v=Axes.uniform(2.0))
        a_cmd = position_pd(np.zeros(3), np.array([0.0, 0.5, 0.0]), np.array([0.1, 0.0, 0.0]), np.zeros(3),
                            np.zeros(3), gains)
        assert a_cmd == pytest.approx([0.4, 1.0, 0.0])


class TestThrust:
    """Tests for the thrust map and desired attitude."""

    def test_hover(self):
        command = thrust_command(np.zeros(3), Rotation.identity(), MASS_BASE)
        assert command.collective == pytest.approx(MASS_BASE * GRAVITY)
        assert not command.saturated

    def test_payload_feedforward(self):
        command = thrust_command(np.zeros(3), Rotation.identity(), MASS_BASE, np.array([0.0, 0.0, -1.0]))
        assert command.collective == pytest.approx(MASS_BASE * GRAVITY + 1.0)

    def test_saturation(self):
        command = thrust_command(np.array([0.0, 0.0, 30.0]), Rotation.identity(), MASS_BASE, limit=12.0)
        assert command.saturated
        assert np.linalg.norm(command.world) == pytest.approx(12.0)

    def test_mass_positive(self):
        with pytest.raises(ValueError):
            thrust_command(np.zeros(3), Rotation.identity(), 0.0)

    def test_desired_attitude_aligns_z(self):
        force = np.array([1.0, 0.0, 5.0])
        R = desired_attitude(force)
        assert R.rotate([0.0, 0.0, 1.0]) == pytest.approx(force / np.linalg.norm(force))

    def test_desired_attitude_zero_force(self):
        assert desired_attitude(np.zeros(3)).allclose(Rotation.identity())


class TestAttitude:
    """Tests for the cascaded attitude loop."""

    def test_integral_clamp(self):
        gains = TrackingGains(integral_clamp=0.01)
        state = AttitudeState()
        for _ in range(1000):
            attitude_step(Rotation.identity(), Rotation.rx(0.5), np.zeros(3), gains, state, 0.001)
        assert np.linalg.norm(state.integral) == pytest.approx(0.01)

    def test_recovers_from_tilt(self):
        gains = TrackingGains()
        att = AttitudeState()
        state = QuadrotorState.hover(50.0)
        state = QuadrotorState(state.p, state.v, Rotation.from_euler(0.2, -0.1, 0.0), state.omega, 0.0,
                               thrust=state.thrust)
        for _ in range(5000):
            torque = attitude_step(Rotation.identity(), state.R, state.omega, gains, att, 0.001)
            state = step_dynamics(state, MASS_BASE * GRAVITY, torque, ObjectReaction(), 0.001)
        assert state.R.angle_to(Rotation.identity()) < 0.02

    def test_linearized_loop_is_stable(self):
        # single-axis small-angle loop, state (angle, rate, rate-error integral)
        gains = TrackingGains()
        for axis, inertia in enumerate(PlantParams().inertia.vector()):
            k_r = gains.K_R.vector()[axis]
            k_p = gains.K_P_omega.vector()[axis]
            k_i = gains.K_I_omega.vector()[axis]
            k_d = gains.K_D_omega.vector()[axis]
            a = inertia + k_d
            system = np.array([
                [0.0, 1.0, 0.0],
                [-k_p * k_r / a, -(k_p + k_d * k_r) / a, k_i / a],
                [-k_r, -1.0, 0.0],
            ])
            assert np.all(np.linalg.eigvals(system).real < 0.0)

    def test_small_tilt_decays(self):
        gains = TrackingGains()
        att = AttitudeState()
        state = QuadrotorState.hover(50.0)
        state = QuadrotorState(state.p, state.v, Rotation.rx(0.05), state.omega, 0.0, thrust=state.thrust)
        angles = []
        for k in range(3000):
            torque = attitude_step(Rotation.identity(), state.R, state.omega, gains, att, 0.001)
            state = step_dynamics(state, MASS_BASE * GRAVITY, torque, ObjectReaction(), 0.001)
            if k % 1000 == 999:
                angles.append(state.R.angle_to(Rotation.identity()))
        assert angles[0] < 0.005
        assert angles[2] < 0.001


class TestGrasp:
    """Tests for the grasp admittance and the open-loop command."""

    def test_closes_when_force_is_low(self):
        params = GraspAdmittanceParams()
        theta, clamped = grasp_admittance_step(params, 0.0, GraspState(), 0.02)
        assert theta > params.theta_r
        assert not clamped

    def test_opens_when_force_is_high(self):
        params = GraspAdmittanceParams()
        theta, _ = grasp_admittance_step(params, 2.0, GraspState(), 0.02)
        assert theta < params.theta_r

    def test_setpoint_override(self):
        params = GraspAdmittanceParams(f_d=0.25)
        theta, _ = grasp_admittance_step(params, 0.25, GraspState(), 0.02, f_d=0.25)
        assert theta == pytest.approx(params.theta_r)

    def test_clamp(self):
        params = GraspAdmittanceParams(theta_r=1.59)
        state = GraspState()
        for _ in range(200):
            theta, clamped = grasp_admittance_step(params, 0.0, state, 0.02)
        assert theta == 1.6
        assert clamped

    def test_clamp_does_not_wind_up(self):
        params = GraspAdmittanceParams(theta_r=1.59)
        state = GraspState()
        for _ in range(200):
            grasp_admittance_step(params, 0.0, state, 0.02)
        assert state.dtheta == pytest.approx(0.01)
        assert state.dtheta_dot >= 0.0
        theta, clamped = grasp_admittance_step(params, 2.0, state, 0.02)
        assert theta < 1.6
        assert not clamped

    def test_steady_state_offset(self):
        params = GraspAdmittanceParams(M=0.1, B=2.0, K=1.0, theta_r=0.2, f_d=0.25)
        state = GraspState()
        for _ in range(3000):
            theta, _ = grasp_admittance_step(params, 0.15, state, 0.02)
        assert state.dtheta == pytest.approx(0.1 / params.K, abs=1e-9)
        assert theta == pytest.approx(0.3, abs=1e-9)

    def test_critically_damped_step_does_not_overshoot(self):
        params = GraspAdmittanceParams(M=0.1, B=2.0 * math.sqrt(0.1 * 1.0), K=1.0, theta_r=0.2, f_d=0.25)
        state = GraspState()
        highest = 0.0
        for _ in range(2000):
            grasp_admittance_step(params, 0.05, state, 0.02)
            highest = max(highest, state.dtheta)
        assert highest <= 0.2 + 1e-6
        assert state.dtheta == pytest.approx(0.2, abs=1e-9)

    def test_open_loop_is_monotone(self):
        theta = 0.2
        values = []
        for _ in range(100):
            theta = open_loop_grasp_command(theta, 0.1, 1.6, 0.02)
            values.append(theta)
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(0.4)

    def test_open_loop_stops_at_target(self):
        assert open_loop_grasp_command(1.599, 0.1, 1.6, 0.02) == 1.6


class TestLowPass:
    """Tests for the first-order filter."""

    def test_first_value_passes(self):
        lp = LowPass(2.0, 0.02)
        assert lp.update(3.0) == 3.0

    def test_converges(self):
        lp = LowPass(2.0, 0.02, 0.0)
        for _ in range(500):
            lp.update(1.0)
        assert lp.value == pytest.approx(1.0)


class TestController:
    """Tests for the combined controller."""

    def test_hover_command(self):
        ctrl = _controller()
        ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(), np.zeros(3), 0.0, 0.25)
        thrust, torque = ctrl.fast_update(Rotation.identity(), np.zeros(3))
        assert thrust == pytest.approx(MASS_BASE * GRAVITY)
        assert torque == pytest.approx([0.0, 0.0, 0.0])

    def test_forces_ignored_until_ready(self):
        ctrl = _controller()
        ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(),
                         np.array([0.0, 0.0, -2.0]), 0.0, 0.25, forces_ready=False)
        assert ctrl.theta_cmd == ctrl.grasp.theta_r
        assert ctrl.payload_force == 0.0
        assert ctrl.state.admittance.p_d == pytest.approx([0.0, 0.0, 1.0])

    def test_payload_feedforward_raises_thrust(self):
        ctrl = _controller()
        for _ in range(200):
            ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(),
                             np.array([0.0, 0.0, -1.0]), 0.25, 0.25)
        assert ctrl.payload_force == pytest.approx(-1.0, abs=1e-3)
        assert ctrl.force_world[2] > MASS_BASE * GRAVITY + 0.9

    def test_without_force_feedback_closes_open_loop(self):
        ctrl = _controller(force_feedback=False)
        ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(), np.zeros(3), 5.0, 0.25)
        assert ctrl.theta_cmd == pytest.approx(ctrl.grasp.theta_r + ctrl.grasp.open_loop_rate * 0.02)

    def test_without_payload_ff(self):
        ctrl = _controller(payload_ff=False)
        for _ in range(50):
            ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(),
                             np.array([0.0, 0.0, -1.0]), 0.25, 0.25)
        assert ctrl.payload_force == 0.0

    def test_saturation_counter(self):
        ctrl = _controller(thrust_limit=1.0)
        ctrl.slow_update(np.array([0.0, 0.0, 1.0]), np.zeros(3), Rotation.identity(), np.zeros(3), 0.0, 0.0)
        assert ctrl.thrust_saturated
        assert ctrl.thrust_saturations == 1
