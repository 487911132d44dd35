"""Geomagnetic interference compensation with a contact-free reference Hall sensor."""

import bisect
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from magrasp.constants import DEG, EARTH_FIELD_DEFAULT, FLUX_REFERENCE_SCALE, REFERENCE_STALENESS
from magrasp.errors import UnknownNode
from magrasp.geometry import FrameTag, Rotation, Vec3, as_vec3, hexagonal_layout
from magrasp.tactile import (
    CompensationCoefficients,
    FilmSpec,
    FluxSample,
    ForceEstimate,
    SensorCalibration,
    flux_to_force,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReferenceFieldSample:
    """Reading of the reference sensor, in its own frame."""

    b_ref: Vec3
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "b_ref", as_vec3(self.b_ref))


@dataclass(frozen=True, eq=False)
class MountingGraph:
    """Rotations from the reference-sensor frame into each tactile sensor frame."""

    rotations: dict[int, Rotation]
    source: FrameTag = field(default_factory=FrameTag.reference)

    def rotation(self, node_id: int) -> Rotation:
        try:
            return self.rotations[node_id]
        except KeyError:
            raise UnknownNode(f"Node {node_id} has no mounting entry") from None

    def target(self, node_id: int) -> FrameTag:
        self.rotation(node_id)
        return FrameTag.sensor(node_id)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.rotations)


def mounting_graph_from_layout(layout: dict[int, Rotation], reference_mount: Rotation) -> MountingGraph:
    """Build the graph from sensor-to-body mounts and the reference sensor's own mount."""
    return MountingGraph({i: mount.transpose().compose(reference_mount) for i, mount in layout.items()})


def earth_in_sensor(earth_world: Vec3, attitude: Rotation, mount: Rotation) -> Vec3:
    """Earth field as seen by a sensor mounted at `mount` on a body at `attitude`."""
    return mount.transpose().rotate(attitude.transpose().rotate(earth_world))


def compensate_flux(b_i: FluxSample, b_ref: ReferenceFieldSample, g: MountingGraph) -> FluxSample:
    """Subtract the reference field, rotated into sensor i, from the sensor reading.

    Raises:
        UnknownNode: If the sample's node is not in the graph.
    """
    return b_i.with_flux(b_i.b - g.rotation(b_i.node_id).rotate(b_ref.b_ref))


def compensated_force(
    b_i: FluxSample,
    b_ref: ReferenceFieldSample,
    g: MountingGraph,
    cal: SensorCalibration,
    c: CompensationCoefficients,
    scale: float = FLUX_REFERENCE_SCALE,
) -> ForceEstimate:
    return flux_to_force(compensate_flux(b_i, b_ref, g), cal, c, scale)


def pair_reference(
    t: float,
    history: Sequence[ReferenceFieldSample],
    staleness: float = REFERENCE_STALENESS,
) -> tuple[Optional[ReferenceFieldSample], bool]:
    """Pick the reference sample nearest in time to t.

    Args:
        t: Timestamp of the tactile sample.
        history: Reference samples sorted by timestamp.
        staleness: Largest acceptable gap in seconds.

    Returns:
        (sample, stale). sample is None when the history is empty; stale is True when
        the nearest sample is further than `staleness` away.
    """
    if not history:
        return None, True

    times = [s.timestamp for s in history]
    idx = bisect.bisect_left(times, t)
    candidates = [i for i in (idx - 1, idx) if 0 <= i < len(history)]
    best = min(candidates, key=lambda i: abs(times[i] - t))
    gap = abs(times[best] - t)
    stale = gap > staleness
    if stale:
        logger.warning("Reference sample is %.1f ms from tactile sample at t=%.3f s", gap * 1000.0, t)
    return history[best], stale


# =============================================================================
# ATTITUDE SWEEP
# =============================================================================


@dataclass(frozen=True, eq=False)
class SweepRow:
    roll_deg: float
    pitch_deg: float
    b_raw: Vec3
    b_comp: Vec3
    f_err_raw: float
    f_err_comp: float


@dataclass
class SweepReport:
    """Per-attitude flux and force deviation with and without compensation."""

    node_id: int
    earth_field: Vec3
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def max_raw_deviation(self) -> float:
        return max((r.f_err_raw for r in self.rows), default=0.0)

    @property
    def max_comp_deviation(self) -> float:
        return max((r.f_err_comp for r in self.rows), default=0.0)

    @property
    def improvement(self) -> float:
        """Ratio of raw to compensated deviation (inf when compensation is exact)."""
        if self.max_comp_deviation == 0.0:
            return math.inf if self.max_raw_deviation > 0.0 else 1.0
        return self.max_raw_deviation / self.max_comp_deviation

    def summary(self) -> dict:
        return {
            "node": self.node_id,
            "attitudes": len(self.rows),
            "earth_field_uT": float(np.linalg.norm(self.earth_field)),
            "max_deviation_raw_N": self.max_raw_deviation,
            "max_deviation_comp_N": self.max_comp_deviation,
            "improvement": self.improvement,
        }


def sweep_grid(limit_deg: float = 30.0, step_deg: float = 10.0) -> list[tuple[float, float]]:
    """Square roll/pitch grid in degrees, inclusive of both limits."""
    n = int(round(2 * limit_deg / step_deg))
    values = [-limit_deg + k * step_deg for k in range(n + 1)]
    return [(roll, pitch) for roll in values for pitch in values]


def attitude_sweep_report(
    roll_pitch_grid: list[tuple[float, float]],
    earth_field: Vec3 = EARTH_FIELD_DEFAULT,
    node_id: int = 1,
    film: Optional[FilmSpec] = None,
    c: Optional[CompensationCoefficients] = None,
    layout: Optional[dict[int, Rotation]] = None,
    reference_mount: Optional[Rotation] = None,
    scale: float = FLUX_REFERENCE_SCALE,
) -> SweepReport:
    """Sweep a no-load sensor through attitudes and compare compensated and raw estimates.

    Deviation is measured against the same pipeline at identity attitude, where the sensor was
    zeroed.

    Args:
        roll_pitch_grid: (roll, pitch) pairs in degrees; yaw is zero.
        earth_field: World-frame Earth field in µT.
        node_id: Tactile node to sweep.
        film: Synthetic film; defaults to FilmSpec().
        c: Compensation coefficients.
        layout: Sensor mounts; defaults to the hexagonal ring.
        reference_mount: Reference sensor mount; defaults to identity.
        scale: µT per model unit.

    Returns:
        SweepReport with one row per attitude.
    """
    if not roll_pitch_grid:
        raise ValueError("Attitude grid must not be empty")

    film = film or FilmSpec()
    c = c or CompensationCoefficients()
    layout = layout or hexagonal_layout()
    reference_mount = reference_mount or Rotation.identity()
    graph = mounting_graph_from_layout(layout, reference_mount)
    if node_id not in layout:
        raise UnknownNode(f"Node {node_id} is not in the sensor layout")
    mount = layout[node_id]
    cal = film.true_calibration(c, node_id=node_id, mount_rotation=mount, scale=scale)
    earth = as_vec3(earth_field)

    def measure(attitude: Rotation) -> tuple[Vec3, Vec3, Vec3, Vec3]:
        raw = FluxSample(film.rest_flux() + earth_in_sensor(earth, attitude, mount), node_id)
        ref = ReferenceFieldSample(earth_in_sensor(earth, attitude, reference_mount))
        comp = compensate_flux(raw, ref, graph)
        return raw.b, comp.b, flux_to_force(raw, cal, c, scale).f, flux_to_force(comp, cal, c, scale).f

    _, _, f_raw0, f_comp0 = measure(Rotation.identity())
    report = SweepReport(node_id=node_id, earth_field=earth)
    for roll_deg, pitch_deg in roll_pitch_grid:
        b_raw, b_comp, f_raw, f_comp = measure(Rotation.from_euler(roll_deg * DEG, pitch_deg * DEG))
        report.rows.append(
            SweepRow(
                roll_deg=float(roll_deg),
                pitch_deg=float(pitch_deg),
                b_raw=b_raw,
                b_comp=b_comp,
                f_err_raw=float(np.linalg.norm(f_raw - f_raw0)),
                f_err_comp=float(np.linalg.norm(f_comp - f_comp0)),
            )
        )

    logger.info(
        "Attitude sweep over %d attitudes: raw %.4f N, compensated %.2e N",
        len(report.rows),
        report.max_raw_deviation,
        report.max_comp_deviation,
    )
    return report
