"""
Per-tick force perception: bus bytes in, calibrated and compensated force snapshot out.

    decode -> timestamp -> noise -> pair with reference -> compensate -> flux to force
           -> external force (world) and grasp force
"""

import logging
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from magrasp.bus import BusSchedule, FramingError, SequenceClock, StreamDecoder, WireFrame
from magrasp.constants import (
    BASELINE_MIN_DURATION,
    CONTAMINATION_FACTOR,
    CONTAMINATION_FLOOR,
    FLUX_REFERENCE_SCALE,
    REFERENCE_NODE,
    REFERENCE_STALENESS,
    SENSOR_COUNT,
    STALE_PERIODS,
)
from magrasp.control import aggregate_external_force, grasp_force
from magrasp.errors import ContaminatedBaseline, DegenerateFlux, StaleData
from magrasp.geomag import MountingGraph, ReferenceFieldSample, compensate_flux, pair_reference
from magrasp.geometry import Rotation, Vec3
from magrasp.tactile import (
    CompensationCoefficients,
    FluxSample,
    ForceEstimate,
    SensorCalibration,
    flux_to_force,
    zero_offset,
)

logger = logging.getLogger(__name__)

# Quality flags
FLAG_FRAMING = "framing_error"
FLAG_STALE_REFERENCE = "stale_reference"
FLAG_STALE_SENSOR = "stale_sensor"
FLAG_STALE_DATA = "stale_data"
FLAG_ENVELOPE = "out_of_envelope"
FLAG_DEGENERATE = "degenerate_flux"
FLAG_UNCALIBRATED = "uncalibrated"
FLAG_SATURATED = "flux_saturated"


@dataclass(frozen=True)
class PerceptionConfig:
    calibrations: Mapping[int, SensorCalibration]
    coefficients: CompensationCoefficients
    mounting: MountingGraph
    schedule: BusSchedule
    staleness: float = REFERENCE_STALENESS  # s
    noise_sigma: float = 0.0  # µT
    scale: float = FLUX_REFERENCE_SCALE
    geomag_comp: bool = True

    def __post_init__(self):
        nodes = sorted(self.calibrations)
        if len(nodes) != SENSOR_COUNT or REFERENCE_NODE in nodes:
            raise ValueError(f"Expected {SENSOR_COUNT} tactile calibrations, got nodes {nodes}")
        missing = [n for n in nodes if n not in self.mounting.rotations]
        if missing:
            raise ValueError(f"Nodes {missing} have no mounting entry")
        if self.noise_sigma < 0 or self.staleness <= 0:
            raise ValueError("noise_sigma must be >= 0 and staleness > 0")

    @property
    def tactile_nodes(self) -> list[int]:
        return sorted(self.calibrations)


@dataclass(frozen=True, eq=False)
class ForceSnapshot:
    timestamp: float
    estimates: dict[int, ForceEstimate]
    f_ext: Vec3
    f_g: float
    flags: tuple[str, ...] = ()
    framing_errors: int = 0
    saturated: int = 0

    def flag_text(self) -> str:
        return "|".join(self.flags)


@dataclass
class _NodeEstimate:
    estimate: ForceEstimate
    timestamp: float


def check_baseline(samples: list[FluxSample], noise_sigma: float) -> None:
    """Raise ContaminatedBaseline if the samples vary more than noise would explain."""
    if len(samples) < 2:
        return
    flux = np.array([s.b for s in samples])
    spread = flux.std(axis=0)
    limit = CONTAMINATION_FACTOR * max(noise_sigma, CONTAMINATION_FLOOR)
    if np.any(spread > limit):
        node = samples[0].node_id
        raise ContaminatedBaseline(f"Node {node} baseline spread {spread.max():.3f} µT exceeds {limit:.3f} µT")


def initialize_offsets(
    samples: Mapping[int, list[FluxSample]],
    config: PerceptionConfig,
) -> dict[int, SensorCalibration]:
    """Zero every tactile sensor from a contact-free quiet period.

    Args:
        samples: Compensated no-load flux samples per node.
        config: Pipeline configuration holding the current calibrations.

    Returns:
        Calibrations with updated offsets.

    Raises:
        ContaminatedBaseline: If a node's samples vary beyond the configured noise.
        ValueError: If the quiet period is shorter than required.
    """
    updated = {}
    for node, cal in config.calibrations.items():
        node_samples = samples.get(node, [])
        if not node_samples:
            raise ValueError(f"No baseline samples for node {node}")
        times = [s.timestamp for s in node_samples]
        covered = max(times) - min(times) + config.schedule.period_ms / 1000.0
        if covered < BASELINE_MIN_DURATION - 1e-9:
            raise ValueError(f"Node {node} baseline covers {covered:.3f} s, need {BASELINE_MIN_DURATION} s")
        check_baseline(node_samples, config.noise_sigma)
        updated[node] = cal.with_offset(zero_offset(node_samples, cal, config.coefficients, config.scale))
    return updated


class PerceptionPipeline:
    """Single-consumer incremental processor owning decoder, clock and estimate history."""

    def __init__(self, config: PerceptionConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng or np.random.default_rng(0)
        self.decoder = StreamDecoder()
        self.clock = SequenceClock(config.schedule)
        self.references: deque[ReferenceFieldSample] = deque(maxlen=16)
        self.latest: dict[int, _NodeEstimate] = {}
        self.baseline: Optional[dict[int, list[FluxSample]]] = None
        self.calibrated = False
        self.last_f_ext = np.zeros(3)
        self.last_timestamp = -np.inf
        self.framing_errors = 0
        self.stale_ticks = 0

    # -- baseline ---------------------------------------------------------------

    def start_baseline(self) -> None:
        self.baseline = {node: [] for node in self.config.tactile_nodes}

    def finish_baseline(self) -> None:
        """Re-zero offsets from the recorded quiet period."""
        if self.baseline is None:
            raise ValueError("No baseline recording in progress")
        calibrations = initialize_offsets(self.baseline, self.config)
        self.config = replace(self.config, calibrations=calibrations)
        self.baseline = None
        self.calibrated = True
        self.latest.clear()
        logger.info("Offsets initialized for %d sensors", len(calibrations))

    # -- per tick ---------------------------------------------------------------

    def decode(self, data: bytes) -> tuple[list[FluxSample], int, int]:
        """Decode bytes into timestamped samples with noise applied to tactile flux.

        Returns:
            Samples, framing error count, and the number of frames dropped as saturated.
        """
        samples = []
        errors = 0
        saturated = 0
        for item in self.decoder.feed(data):
            if isinstance(item, FramingError):
                errors += 1
                logger.warning("Framing error over bytes %d-%d (%s)", item.start, item.end, item.reason)
                continue
            sample = self._sample(item)
            if sample is None:
                saturated += 1
                continue
            samples.append(sample)
        return samples, errors, saturated

    def _sample(self, frame: WireFrame) -> Optional[FluxSample]:
        t = self.clock.timestamp(frame)
        flux = frame.flux
        if frame.node_id != REFERENCE_NODE:
            flux = flux + self.config.noise_sigma * self.rng.standard_normal(3)
        try:
            return FluxSample(flux, frame.node_id, t)
        except ValueError as e:
            logger.warning("Node %d at t=%.3f s: %s", frame.node_id, t, e)
            return None

    def tick(self, data: bytes, attitude: Rotation, t: float) -> ForceSnapshot:
        """Process bus bytes received since the last tick. Data problems become flags."""
        samples, errors, saturated = self.decode(data)
        self.framing_errors += errors
        return self.process_samples(samples, attitude, t, framing_errors=errors, saturated=saturated)

    def process_samples(
        self,
        samples: list[FluxSample],
        attitude: Rotation,
        t: float,
        framing_errors: int = 0,
        saturated: int = 0,
    ) -> ForceSnapshot:
        """Turn decoded samples into a snapshot at time t.

        Args:
            samples: Reference and tactile samples in arrival order.
            attitude: Body-to-world rotation used for the external force.
            t: Snapshot timestamp.
            framing_errors: Errors seen while decoding these samples.
            saturated: Frames dropped while decoding because their flux saturated.

        Raises:
            ValueError: If t is earlier than the previous snapshot. No state changes in that case.
        """
        if t < self.last_timestamp:
            raise ValueError(f"Snapshot time went backwards ({t} < {self.last_timestamp})")
        self.last_timestamp = t

        cfg = self.config
        flags: set[str] = set()
        if framing_errors:
            flags.add(FLAG_FRAMING)
        if saturated:
            flags.add(FLAG_SATURATED)
        if not self.calibrated:
            flags.add(FLAG_UNCALIBRATED)

        for s in samples:
            if s.node_id == REFERENCE_NODE:
                self.references.append(ReferenceFieldSample(s.b, s.timestamp))

        for s in samples:
            if s.node_id == REFERENCE_NODE:
                continue
            if s.node_id not in cfg.calibrations:
                logger.debug("Ignoring frame from unknown node %d", s.node_id)
                continue
            compensated = s
            if cfg.geomag_comp:
                ref, stale = pair_reference(s.timestamp, list(self.references), cfg.staleness)
                if stale:
                    flags.add(FLAG_STALE_REFERENCE)
                if ref is not None:
                    try:
                        compensated = compensate_flux(s, ref, cfg.mounting)
                    except ValueError as e:
                        flags.add(FLAG_SATURATED)
                        saturated += 1
                        logger.warning("Node %d: %s", s.node_id, e)
                        continue
            if self.baseline is not None:
                self.baseline[s.node_id].append(compensated)
            try:
                estimate = flux_to_force(compensated, cfg.calibrations[s.node_id], cfg.coefficients, cfg.scale)
            except DegenerateFlux as e:
                flags.add(FLAG_DEGENERATE)
                logger.warning("Node %d: %s", s.node_id, e)
                continue
            if not estimate.valid:
                flags.add(FLAG_ENVELOPE)
            self.latest[s.node_id] = _NodeEstimate(estimate, s.timestamp)

        estimates = {}
        forces = {}
        ages = {}
        for node in cfg.tactile_nodes:
            held = self.latest.get(node)
            if held is None:
                estimates[node] = ForceEstimate.zero()
                ages[node] = np.inf
            else:
                estimates[node] = held.estimate
                ages[node] = t - held.timestamp
            forces[node] = estimates[node].f
            if ages[node] > cfg.staleness + 1e-12:
                flags.add(FLAG_STALE_SENSOR)

        try:
            f_ext = aggregate_external_force(
                forces, cfg.calibrations, attitude, ages, STALE_PERIODS * cfg.schedule.period_ms / 1000.0
            )
            self.last_f_ext = f_ext
        except StaleData as e:
            flags.add(FLAG_STALE_DATA)
            self.stale_ticks += 1
            logger.warning("t=%.3f s: %s; holding last external force", t, e)
            f_ext = self.last_f_ext

        normals = {node: cfg.calibrations[node].contact_normal for node in cfg.tactile_nodes}
        f_g = grasp_force(forces, normals)

        return ForceSnapshot(
            timestamp=t,
            estimates=estimates,
            f_ext=f_ext,
            f_g=f_g,
            flags=tuple(sorted(flags)),
            framing_errors=framing_errors,
            saturated=saturated,
        )
