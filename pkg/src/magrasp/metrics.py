"""Per-tick records and the aggregate metrics of a closed-loop run."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from magrasp.constants import GRAVITY, SETTLE_BAND, STEADY_STATE_FRACTION

# Seconds averaged for the sensed-weight readings after attachment and at the end of a run
WEIGHT_WINDOW: float = 0.5


@dataclass(frozen=True)
class TickRecord:
    """One row of the tick log, taken at the control rate."""

    t: float
    p: tuple[float, float, float]
    v: tuple[float, float, float]
    euler: tuple[float, float, float]  # roll, pitch, yaw in rad
    theta: float
    f_g: float
    f_d: float
    f_ext: tuple[float, float, float]
    thrust_z: float
    payload_mass: float
    burst: bool
    dropped: bool
    flags: str = ""
    attached: bool = False
    forces_ready: bool = True


@dataclass
class RunEvents:
    """Times (s) at which discrete events first happened, None if they never did."""

    burst_at: Optional[float] = None
    dropped_at: Optional[float] = None
    ground_at: Optional[float] = None
    attached_at: Optional[float] = None
    diverged_at: Optional[float] = None
    diverged_reason: str = ""


@dataclass
class SegmentMetrics:
    """Grasp-force tracking over one setpoint segment.

    tracking_rms and steady_error cover the last STEADY_STATE_FRACTION of the segment;
    settle_time is the time from segment start after which |f_g - f_d| stays within
    SETTLE_BAND, None if it never does.
    """

    start: float
    end: float
    f_d: float
    tracking_rms: float = math.nan
    steady_error: float = math.nan
    settle_time: Optional[float] = None


@dataclass
class RunMetrics:
    """Aggregate metrics for one closed-loop run."""

    scenario: str = "custom"
    seed: int = 0
    simulated: float = 0.0
    completed: bool = True

    segments: list[SegmentMetrics] = field(default_factory=list)

    max_altitude_deviation: float = 0.0
    max_altitude_drop: float = 0.0
    max_grasp_force: float = 0.0
    ground_contact: bool = False
    burst: bool = False
    dropped: bool = False

    weight_sensed_start: Optional[float] = None
    weight_sensed_end: Optional[float] = None
    estimated_payload_mass: Optional[float] = None

    sensing_rms: float = 0.0
    framing_errors: int = 0
    stale_ticks: int = 0
    thrust_saturations: int = 0
    grasp_clamps: int = 0

    @property
    def worst_steady_error(self) -> float:
        values = [s.steady_error for s in self.segments if not math.isnan(s.steady_error)]
        return max(values, default=math.nan)

    def summary(self) -> dict:
        """Flat, stably ordered mapping for the metrics file and reports."""
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "simulated_s": self.simulated,
            "completed": self.completed,
            "burst": self.burst,
            "dropped": self.dropped,
            "ground_contact": self.ground_contact,
            "max_altitude_deviation_m": self.max_altitude_deviation,
            "max_altitude_drop_m": self.max_altitude_drop,
            "max_grasp_force_N": self.max_grasp_force,
            "weight_sensed_start_N": self.weight_sensed_start,
            "weight_sensed_end_N": self.weight_sensed_end,
            "estimated_payload_mass_kg": self.estimated_payload_mass,
            "sensing_rms_N": self.sensing_rms,
            "framing_errors": self.framing_errors,
            "stale_ticks": self.stale_ticks,
            "thrust_saturations": self.thrust_saturations,
            "grasp_clamps": self.grasp_clamps,
        }
        for k, seg in enumerate(self.segments, start=1):
            out[f"segment.{k}.start_s"] = seg.start
            out[f"segment.{k}.end_s"] = seg.end
            out[f"segment.{k}.f_d_N"] = seg.f_d
            out[f"segment.{k}.tracking_rms_N"] = seg.tracking_rms
            out[f"segment.{k}.steady_error_N"] = seg.steady_error
            out[f"segment.{k}.settle_time_s"] = seg.settle_time
        return out


def segment_metrics(ticks: list[TickRecord], start: float, end: float, f_d: float) -> SegmentMetrics:
    """Tracking metrics of one setpoint segment [start, end)."""
    seg = SegmentMetrics(start, end, f_d)
    inside = [r for r in ticks if start <= r.t < end]
    if not inside:
        return seg

    window_start = end - STEADY_STATE_FRACTION * (end - start)
    steady = np.array([r.f_g - r.f_d for r in inside if r.t >= window_start])
    if steady.size:
        seg.tracking_rms = float(np.sqrt(np.mean(steady**2)))
        seg.steady_error = float(abs(np.mean(steady)))

    errors = np.abs([r.f_g - r.f_d for r in inside])
    outside = np.nonzero(errors > SETTLE_BAND)[0]
    if outside.size == 0:
        seg.settle_time = 0.0
    elif outside[-1] + 1 < len(inside):
        seg.settle_time = inside[outside[-1] + 1].t - start
    return seg


def _mean_weight(ticks: list[TickRecord], start: float, end: float) -> Optional[float]:
    values = [-r.f_ext[2] for r in ticks if start <= r.t < end]
    return float(np.mean(values)) if values else None


def compute_run_metrics(
    ticks: list[TickRecord],
    events: RunEvents,
    segments: list[tuple[float, float, float]],
    altitude_ref: float,
    scenario: str = "custom",
    seed: int = 0,
    sensing_rms: float = 0.0,
    counters: Optional[dict[str, int]] = None,
) -> RunMetrics:
    """
    Aggregate a tick log into RunMetrics.

    Args:
        ticks: Tick log in time order
        events: Discrete events of the run
        segments: (start, end, f_d) setpoint segments
        altitude_ref: Reference altitude the deviation is measured from
        scenario: Scenario id, copied into the metrics
        seed: Seed, copied into the metrics
        sensing_rms: Per-axis force estimation RMS error over the run
        counters: framing_errors, stale_ticks, thrust_saturations, grasp_clamps

    Returns:
        RunMetrics; an empty log gives zeros and no segments
    """
    counters = counters or {}
    metrics = RunMetrics(
        scenario=scenario,
        seed=seed,
        completed=events.diverged_at is None,
        burst=events.burst_at is not None,
        dropped=events.dropped_at is not None,
        ground_contact=events.ground_at is not None,
        sensing_rms=sensing_rms,
        framing_errors=counters.get("framing_errors", 0),
        stale_ticks=counters.get("stale_ticks", 0),
        thrust_saturations=counters.get("thrust_saturations", 0),
        grasp_clamps=counters.get("grasp_clamps", 0),
    )
    if not ticks:
        return metrics

    end = ticks[-1].t
    metrics.simulated = end
    altitude = np.array([r.p[2] for r in ticks])
    metrics.max_altitude_deviation = float(np.max(np.abs(altitude - altitude_ref)))
    metrics.max_altitude_drop = float(max(0.0, np.max(altitude_ref - altitude)))
    metrics.max_grasp_force = float(max(r.f_g for r in ticks))

    metrics.segments = [segment_metrics(ticks, s, min(e, end + 1e-9), f_d) for s, e, f_d in segments if s <= end]

    if events.attached_at is not None:
        metrics.weight_sensed_start = _mean_weight(ticks, events.attached_at, events.attached_at + WEIGHT_WINDOW)
    if not (metrics.dropped or metrics.burst):
        metrics.weight_sensed_end = _mean_weight(ticks, end - WEIGHT_WINDOW, end + 1e-9)
        if metrics.weight_sensed_end is not None:
            metrics.estimated_payload_mass = max(0.0, metrics.weight_sensed_end) / GRAVITY
    return metrics
