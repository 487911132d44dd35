"""
Deterministic closed-loop experiment runner.

Each simulation step:
    contact -> bus emission -> (sensor tick: perception -> position and grasp loops)
            -> attitude loop -> servo -> rigid-body step

All randomness flows from the scenario seed through independent child streams.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from magrasp.bus import BusEmulator, BusSample, FramingError, SequenceClock, StreamDecoder, WireFrame, default_schedule
from magrasp.config import ScenarioConfig
from magrasp.constants import REFERENCE_NODE
from magrasp.control import ForceAwareController, estimate_payload_mass
from magrasp.errors import NoSolution, NumericalDivergence, ObjectLost
from magrasp.geomag import SweepReport, attitude_sweep_report, earth_in_sensor, mounting_graph_from_layout, sweep_grid
from magrasp.geometry import Rotation, Vec3, hexagonal_layout
from magrasp.metrics import RunEvents, RunMetrics, TickRecord, compute_run_metrics
from magrasp.objects import ContactReport, GraspedObject
from magrasp.perception import ForceSnapshot, PerceptionConfig, PerceptionPipeline
from magrasp.plant import ObjectReaction, QuadrotorState, SimClock, step_dynamics, step_servo
from magrasp.tactile import CalibrationFit, FilmSpec, SensorCalibration, calibrate, evaluate_fit, force_to_flux

logger = logging.getLogger(__name__)

FLAG_THRUST = "thrust_saturated"
FLAG_GRASP_CLAMP = "grasp_clamped"


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for flux noise, position noise and calibration draws."""
    noise, position, calibration = np.random.SeedSequence(seed).spawn(3)
    return {
        "noise": np.random.default_rng(noise),
        "position": np.random.default_rng(position),
        "calibration": np.random.default_rng(calibration),
    }


# =============================================================================
# SYNTHETIC SENSOR FIELD
# =============================================================================


class SensorField:
    """Flux sources for the bus: film response to the contact force plus the Earth field.

    The runner updates `forces` and `attitude` every step; the bus emulator samples the
    sources at each node's emission time. The force behind every emission is kept in
    `emitted` so estimates can be scored against the truth they came from.
    """

    def __init__(
        self,
        film: FilmSpec,
        calibrations: dict[int, SensorCalibration],
        config: ScenarioConfig,
        reference_mount: Rotation,
    ):
        sensing = config.sensing
        self.film = film
        self.calibrations = calibrations
        self.coefficients = sensing.coefficients.build()
        self.scale = sensing.flux_scale
        self.earth = sensing.earth_field.vector()
        self.reference_mount = reference_mount
        self.forces: dict[int, Vec3] = {node: np.zeros(3) for node in calibrations}
        self.attitude = Rotation.identity()
        self.emitted: dict[int, Vec3] = {node: np.zeros(3) for node in calibrations}
        self._rest = film.rest_flux()
        self._warm: dict[int, Vec3] = {}
        self.solver_failures = 0

    def _film_flux(self, node: int, f: Vec3) -> Vec3:
        if not np.any(f):
            return self._rest
        try:
            sample = force_to_flux(
                f, self.calibrations[node], self.coefficients, self.film.gauge, self.scale,
                initial_guess=self._warm.get(node),
            )
        except NoSolution as e:
            self.solver_failures += 1
            logger.warning("Node %d: no flux for force %s (%s); holding previous flux", node, f, e)
            return self._warm.get(node, self._rest)
        self._warm[node] = sample.b
        return sample.b

    def tactile_flux(self, node: int) -> Vec3:
        f = self.forces[node]
        self.emitted[node] = f.copy()
        mount = self.calibrations[node].mount_rotation
        return self._film_flux(node, f) + earth_in_sensor(self.earth, self.attitude, mount)

    def reference_flux(self) -> Vec3:
        return earth_in_sensor(self.earth, self.attitude, self.reference_mount)

    def sources(self, reference_node: int) -> dict:
        out = {node: (lambda t, node=node: self.tactile_flux(node)) for node in self.calibrations}
        out[reference_node] = lambda t: self.reference_flux()
        return out


# =============================================================================
# CLOSED-LOOP RUN
# =============================================================================


@dataclass
class RunResult:
    config: ScenarioConfig
    ticks: list[TickRecord] = field(default_factory=list)
    snapshots: list[ForceSnapshot] = field(default_factory=list)
    events: RunEvents = field(default_factory=RunEvents)
    metrics: RunMetrics = field(default_factory=RunMetrics)
    stream: bytes = b""
    bus_log: list[BusSample] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.events.diverged_at is not None


def build_perception(
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[PerceptionPipeline, FilmSpec, dict[int, SensorCalibration], Rotation]:
    """Pipeline, synthetic film, true calibrations and reference mount for a scenario."""
    sensing = config.sensing
    film = sensing.film()
    c = sensing.coefficients.build()
    layout = hexagonal_layout()
    reference_mount = Rotation.identity()
    calibrations = {
        node: film.true_calibration(c, node_id=node, mount_rotation=mount, scale=sensing.flux_scale)
        for node, mount in layout.items()
    }
    pipeline_config = PerceptionConfig(
        calibrations=calibrations,
        coefficients=c,
        mounting=mounting_graph_from_layout(layout, reference_mount),
        schedule=default_schedule(),
        staleness=sensing.staleness,
        noise_sigma=sensing.noise_sigma,
        scale=sensing.flux_scale,
        geomag_comp=config.ablation.geomag_comp,
    )
    return PerceptionPipeline(pipeline_config, rng), film, calibrations, reference_mount


def _initial_state(config: ScenarioConfig) -> QuadrotorState:
    plant = config.plant
    state = QuadrotorState.hover(plant.initial_altitude, plant.mass_base, config.control.grasp.theta_r)
    sp = config.setpoint.position
    return replace(state, p=np.array([sp.x, sp.y, plant.initial_altitude]))


def _tick_record(
    t: float,
    state: QuadrotorState,
    snapshot: ForceSnapshot,
    f_d: float,
    thrust: float,
    obj: Optional[GraspedObject],
    flags: list[str],
    forces_ready: bool,
) -> TickRecord:
    return TickRecord(
        t=t,
        p=tuple(float(x) for x in state.p),
        v=tuple(float(x) for x in state.v),
        euler=state.R.euler(),
        theta=float(state.theta),
        f_g=snapshot.f_g,
        f_d=f_d,
        f_ext=tuple(float(x) for x in snapshot.f_ext),
        thrust_z=thrust,
        payload_mass=estimate_payload_mass(snapshot.f_ext),
        burst=bool(obj and obj.burst),
        dropped=bool(obj and obj.dropped),
        flags="|".join(flags),
        attached=bool(obj and obj.attached),
        forces_ready=forces_ready,
    )


def run_scenario(config: ScenarioConfig) -> RunResult:
    """Run the closed loop for config.duration seconds.

    Returns:
        RunResult with tick log, snapshots, events and metrics. A numerical divergence ends
        the run early; the partial logs are kept and the event is recorded.
    """
    plant = config.plant
    streams = seed_streams(config.seed)
    pipeline, film, calibrations, reference_mount = build_perception(config, streams["noise"])
    schedule = pipeline.config.schedule
    sensor_field = SensorField(film, calibrations, config, reference_mount)

    emulator = BusEmulator(schedule, [REFERENCE_NODE, *calibrations])
    sources = sensor_field.sources(REFERENCE_NODE)

    obj = GraspedObject(config.object, plant.gripper) if config.object is not None else None
    controller = ForceAwareController(
        config.control.admittance,
        config.control.tracking,
        config.control.grasp,
        p_r=config.setpoint.position.vector(),
        gripper=plant.gripper,
        mass=plant.mass_base,
        thrust_limit=plant.thrust_limit,
        force_feedback=config.ablation.force_feedback,
        payload_ff=config.ablation.payload_ff,
        slow_dt=schedule.period_ms / 1000.0,
        fast_dt=plant.dt,
    )

    clock = SimClock(plant.dt)
    period_steps = clock.steps_per(schedule.period_ms / 1000.0)
    tick_phase = clock.steps_per(max(schedule.offsets_ms.values()) / 1000.0) % period_steps
    total_steps = int(round(config.duration / plant.dt))

    state = _initial_state(config)
    result = RunResult(config)
    events = result.events
    forces_ready = False
    pipeline.start_baseline()
    sq_error = 0.0
    sq_count = 0
    stream = bytearray()

    logger.info("Running %s for %.1f s (seed %d)", config.scenario, config.duration, config.seed)
    for step in range(total_steps):
        t = clock.t

        report = ContactReport.empty()
        if obj is not None:
            try:
                report = obj.contact(state, t, plant.dt)
            except ObjectLost as e:
                events.dropped_at = e.time
                logger.warning("Object lost at t=%.3f s: %s", e.time, e)
            if obj.burst and events.burst_at is None:
                events.burst_at = t
            if obj.attached and events.attached_at is None:
                events.attached_at = t

        sensor_field.forces = report.forces
        sensor_field.attitude = state.R
        emulator.advance(t, sources)

        ticked = step % period_steps == tick_phase
        if ticked:
            data = emulator.drain()
            stream.extend(data)
            snapshot = pipeline.tick(data, state.R, t)
            result.snapshots.append(snapshot)
            if forces_ready:
                for node, estimate in snapshot.estimates.items():
                    sq_error += float(np.sum((estimate.f - sensor_field.emitted[node]) ** 2))
                    sq_count += 3

            f_d = config.grasp_setpoint(t)
            p_meas = state.p + plant.position_noise * streams["position"].standard_normal(3)
            controller.slow_update(p_meas, state.v, state.R, snapshot.f_ext, snapshot.f_g, f_d, forces_ready, t)

            if not forces_ready and t >= config.sensing.baseline_duration:
                pipeline.finish_baseline()
                forces_ready = True

        thrust, torque = controller.fast_update(state.R, state.omega)

        if ticked:
            flags = list(snapshot.flags)
            if controller.thrust_saturated:
                flags.append(FLAG_THRUST)
            if controller.grasp_clamped:
                flags.append(FLAG_GRASP_CLAMP)
            result.ticks.append(_tick_record(t, state, snapshot, f_d, thrust, obj, flags, forces_ready))

        theta = step_servo(state.theta, controller.theta_cmd, plant.dt, plant.gripper)
        reaction = obj.reaction(report, state, t) if obj is not None else None
        try:
            state = step_dynamics(
                replace(state, theta=theta), thrust, torque, reaction or ObjectReaction(), plant.dt, plant, t
            )
        except NumericalDivergence as e:
            events.diverged_at = e.time
            events.diverged_reason = str(e)
            logger.error("Run diverged at t=%.3f s: %s", e.time, e)
            break
        if state.grounded and events.ground_at is None:
            events.ground_at = t
        clock.tick()

    stream.extend(emulator.drain())
    result.stream = bytes(stream)
    result.bus_log = emulator.log
    result.metrics = compute_run_metrics(
        result.ticks,
        events,
        config.segments(),
        altitude_ref=config.setpoint.position.z,
        scenario=config.scenario,
        seed=config.seed,
        sensing_rms=math.sqrt(sq_error / sq_count) if sq_count else 0.0,
        counters={
            "framing_errors": pipeline.framing_errors,
            "stale_ticks": pipeline.stale_ticks,
            "thrust_saturations": controller.thrust_saturations,
            "grasp_clamps": controller.grasp_clamps,
        },
    )
    return result


# =============================================================================
# EXPERIMENTS
# =============================================================================


@dataclass
class AblationResult:
    baseline: RunResult
    ablated: RunResult
    toggled: list[str]

    def comparison(self) -> list[tuple[str, object, object]]:
        """(metric, baseline value, ablated value) in summary order."""
        base = self.baseline.metrics.summary()
        other = self.ablated.metrics.summary()
        keys = list(base) + [k for k in other if k not in base]
        return [(key, base.get(key), other.get(key)) for key in keys]


def run_ablation_pair(config: ScenarioConfig) -> AblationResult:
    """Run the scenario as configured and again with the `ablation.toggle` flags switched off."""
    toggled = list(config.ablation.toggle)
    ablated_config = config.with_flags(**dict.fromkeys(toggled, False))
    logger.info("Ablation pair for %s, toggling %s", config.scenario, ", ".join(toggled))
    return AblationResult(run_scenario(config), run_scenario(ablated_config), toggled)


def run_sweep(config: ScenarioConfig) -> SweepReport:
    """No-load attitude sweep comparing compensated and raw force estimates."""
    sensing = config.sensing
    return attitude_sweep_report(
        sweep_grid(config.sweep.limit_deg, config.sweep.step_deg),
        earth_field=sensing.earth_field.vector(),
        node_id=config.sweep.node,
        film=sensing.film(),
        c=sensing.coefficients.build(),
        scale=sensing.flux_scale,
    )


@dataclass
class CalibrationResult:
    node: int
    fit: CalibrationFit
    true_calibration: SensorCalibration
    holdout_rms: Vec3
    samples: int
    holdout: int

    @property
    def gain_error(self) -> Vec3:
        return np.abs(self.fit.a - self.true_calibration.a)

    def summary(self) -> dict:
        return {
            "node": self.node,
            "samples": self.samples,
            "holdout": self.holdout,
            "fit_rms_N": self.fit.rms,
            "holdout_rms_x_N": float(self.holdout_rms[0]),
            "holdout_rms_y_N": float(self.holdout_rms[1]),
            "holdout_rms_z_N": float(self.holdout_rms[2]),
            "max_gain_error": float(np.max(self.gain_error)),
        }


def calibration_pairs(
    config: ScenarioConfig,
    cal: SensorCalibration,
    count: int,
    rng: np.random.Generator,
) -> list[tuple[Vec3, Vec3]]:
    """Noisy (flux, reference force) pairs from the synthetic film across the working range."""
    params = config.calibration
    sensing = config.sensing
    c = sensing.coefficients.build()
    gauge = sensing.film().gauge
    lateral = rng.uniform(-params.lateral_range, params.lateral_range, size=(count, 2))
    normal = rng.uniform(0.0, params.normal_range, size=(count, 1))
    forces = np.hstack([lateral, normal])
    noise = rng.standard_normal((count, 3)) * params.noise_sigma

    pairs = []
    warm = None
    for f, n in zip(forces, noise):
        b = force_to_flux(f, cal, c, gauge, sensing.flux_scale, initial_guess=warm).b
        warm = b
        pairs.append((b + n, f))
    return pairs


def run_calibration(config: ScenarioConfig) -> CalibrationResult:
    """Fit gains and offsets of one sensor from synthetic load-cell pairs and score them on held-out pairs.

    Raises:
        RankDeficient: If the drawn pairs do not excite every axis.
    """
    params = config.calibration
    sensing = config.sensing
    c = sensing.coefficients.build()
    rng = seed_streams(config.seed)["calibration"]
    true_cal = sensing.film().true_calibration(c, node_id=params.node, scale=sensing.flux_scale)

    fit = calibrate(calibration_pairs(config, true_cal, params.samples, rng), c, sensing.flux_scale)
    holdout = calibration_pairs(config, true_cal, params.holdout, rng)
    rms = evaluate_fit(fit, holdout, c, sensing.flux_scale)
    logger.info("Node %d calibrated: fit rms %.4f N, held-out rms %s N", params.node, fit.rms, np.round(rms, 4))
    return CalibrationResult(params.node, fit, true_cal, rms, params.samples, params.holdout)


# =============================================================================
# REPLAY
# =============================================================================


@dataclass
class ReplayResult:
    frames: list[tuple[float, WireFrame]] = field(default_factory=list)
    errors: list[FramingError] = field(default_factory=list)
    total_bytes: int = 0

    @property
    def nodes(self) -> list[int]:
        return sorted({frame.node_id for _, frame in self.frames})

    def summary(self) -> dict:
        return {
            "bytes": self.total_bytes,
            "frames": len(self.frames),
            "framing_errors": len(self.errors),
            "nodes": self.nodes,
            "duration_s": max((t for t, _ in self.frames), default=0.0),
        }


def replay(data: bytes, chunk: int = 4096) -> ReplayResult:
    """Decode a recorded bus stream and reconstruct frame timestamps from the default schedule."""
    decoder = StreamDecoder()
    clock = SequenceClock(default_schedule())
    result = ReplayResult(total_bytes=len(data))

    def collect(items) -> None:
        for item in items:
            if isinstance(item, FramingError):
                result.errors.append(item)
            else:
                result.frames.append((clock.timestamp(item), item))

    for offset in range(0, len(data), chunk):
        collect(decoder.feed(data[offset : offset + chunk]))
    collect(decoder.finish())
    if result.errors:
        logger.warning("Replay found %d framing errors in %d bytes", len(result.errors), len(data))
    return result
