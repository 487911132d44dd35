"""CSV log generation for runs, sweeps and replays."""

import csv
import io
from collections.abc import Iterable

from magrasp.bus import FramingError, WireFrame
from magrasp.geomag import SweepReport
from magrasp.metrics import TickRecord
from magrasp.perception import ForceSnapshot

TICK_COLUMNS = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "theta",
    "f_g", "f_d", "fext_x", "fext_y", "fext_z", "thrust_z", "payload_mass", "burst", "dropped", "flags",
]
SNAPSHOT_COLUMNS = ["t", "node", "fx", "fy", "fz", "fext_x", "fext_y", "fext_z", "f_g", "flags"]
SWEEP_COLUMNS = [
    "roll_deg", "pitch_deg", "bx_raw", "by_raw", "bz_raw", "bx_comp", "by_comp", "bz_comp",
    "f_err_raw_N", "f_err_comp_N",
]
FRAME_COLUMNS = ["t", "node", "seq", "bx", "by", "bz"]
FRAMING_ERROR_COLUMNS = ["start", "end", "reason"]


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render(columns: list[str], rows: Iterable[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def generate_tick_csv(ticks: list[TickRecord]) -> str:
    """One row per control tick; floats are written with repr so equal runs give equal bytes."""
    return _render(
        TICK_COLUMNS,
        (
            [r.t, *r.p, *r.v, *r.euler, r.theta, r.f_g, r.f_d, *r.f_ext, r.thrust_z, r.payload_mass,
             r.burst, r.dropped, r.flags]
            for r in ticks
        ),
    )


def generate_snapshot_csv(snapshots: list[ForceSnapshot]) -> str:
    """One row per node per snapshot, with the aggregate fields repeated."""
    rows = []
    for snap in snapshots:
        f_ext = [float(x) for x in snap.f_ext]
        for node, estimate in sorted(snap.estimates.items()):
            rows.append([snap.timestamp, node, *(float(x) for x in estimate.f), *f_ext, snap.f_g, snap.flag_text()])
    return _render(SNAPSHOT_COLUMNS, rows)


def generate_sweep_csv(report: SweepReport) -> str:
    return _render(
        SWEEP_COLUMNS,
        (
            [r.roll_deg, r.pitch_deg, *(float(x) for x in r.b_raw), *(float(x) for x in r.b_comp),
             r.f_err_raw, r.f_err_comp]
            for r in report.rows
        ),
    )


def generate_frames_csv(frames: list[tuple[float, WireFrame]]) -> str:
    return _render(
        FRAME_COLUMNS,
        ([t, frame.node_id, frame.seq, *(float(x) for x in frame.flux)] for t, frame in frames),
    )


def generate_framing_errors_csv(errors: list[FramingError]) -> str:
    return _render(FRAMING_ERROR_COLUMNS, ([e.start, e.end, e.reason] for e in errors))
