"""Tests for the metrics module."""

import math

import pytest

from magrasp.constants import GRAVITY
from magrasp.metrics import (
    RunEvents,
    RunMetrics,
    SegmentMetrics,
    TickRecord,
    compute_run_metrics,
    segment_metrics,
)


def _tick(k: int, f_g: float = 0.25, f_d: float = 0.25, z: float = 1.0, f_ext_z: float = 0.0) -> TickRecord:
    return TickRecord(
        t=0.02 * k,
        p=(0.0, 0.0, z),
        v=(0.0, 0.0, 0.0),
        euler=(0.0, 0.0, 0.0),
        theta=0.4,
        f_g=f_g,
        f_d=f_d,
        f_ext=(0.0, 0.0, f_ext_z),
        thrust_z=5.0,
        payload_mass=0.0,
        burst=False,
        dropped=False,
    )


class TestSegmentMetrics:
    """Tests for per-segment tracking metrics."""

    def test_settle_and_steady_error(self):
        ticks = [_tick(k, f_g=0.45 if k < 15 else 0.26) for k in range(50)]
        seg = segment_metrics(ticks, 0.0, 1.0, 0.25)
        assert seg.steady_error == pytest.approx(0.01)
        assert seg.tracking_rms == pytest.approx(0.01)
        assert seg.settle_time == pytest.approx(0.3)

    def test_always_within_band(self):
        ticks = [_tick(k, f_g=0.27) for k in range(50)]
        assert segment_metrics(ticks, 0.0, 1.0, 0.25).settle_time == 0.0

    def test_never_settles(self):
        ticks = [_tick(k, f_g=0.25 if k < 49 else 0.5) for k in range(50)]
        assert segment_metrics(ticks, 0.0, 1.0, 0.25).settle_time is None

    def test_empty_segment(self):
        seg = segment_metrics([_tick(0)], 5.0, 6.0, 0.25)
        assert math.isnan(seg.steady_error)
        assert math.isnan(seg.tracking_rms)
        assert seg.settle_time is None

    def test_steady_window_is_tail(self):
        # the large early error stays outside the last 30% of the segment
        ticks = [_tick(k, f_g=1.0 if k < 30 else 0.25) for k in range(50)]
        seg = segment_metrics(ticks, 0.0, 1.0, 0.25)
        assert seg.steady_error == pytest.approx(0.0)


class TestComputeRunMetrics:
    """Tests for run aggregation."""

    def test_altitude_and_grasp(self):
        ticks = [_tick(k, z=0.9 if k == 10 else 1.05 if k == 20 else 1.0, f_g=0.3 if k == 5 else 0.25)
                 for k in range(50)]
        metrics = compute_run_metrics(ticks, RunEvents(), [(0.0, 1.0, 0.25)], altitude_ref=1.0)
        assert metrics.max_altitude_deviation == pytest.approx(0.1)
        assert metrics.max_altitude_drop == pytest.approx(0.1)
        assert metrics.max_grasp_force == pytest.approx(0.3)
        assert metrics.simulated == pytest.approx(0.98)
        assert len(metrics.segments) == 1
        assert metrics.completed

    def test_sensed_weight(self):
        ticks = [_tick(k, f_ext_z=-1.0 if k < 30 else -2.0) for k in range(100)]
        metrics = compute_run_metrics(ticks, RunEvents(attached_at=0.0), [], altitude_ref=1.0)
        assert metrics.weight_sensed_start == pytest.approx(1.0)
        assert metrics.weight_sensed_end == pytest.approx(2.0)
        assert metrics.estimated_payload_mass == pytest.approx(2.0 / GRAVITY)

    def test_drop_has_no_end_weight(self):
        ticks = [_tick(k, f_ext_z=-1.0) for k in range(50)]
        metrics = compute_run_metrics(ticks, RunEvents(dropped_at=0.5), [], altitude_ref=1.0)
        assert metrics.dropped
        assert metrics.weight_sensed_end is None
        assert metrics.estimated_payload_mass is None

    def test_events_and_counters(self):
        events = RunEvents(burst_at=0.3, ground_at=0.6, diverged_at=0.9, diverged_reason="altitude")
        metrics = compute_run_metrics([_tick(0)], events, [], 1.0, counters={"framing_errors": 2, "grasp_clamps": 1})
        assert metrics.burst
        assert metrics.ground_contact
        assert not metrics.completed
        assert metrics.framing_errors == 2
        assert metrics.grasp_clamps == 1
        assert metrics.stale_ticks == 0

    def test_empty_log(self):
        metrics = compute_run_metrics([], RunEvents(), [(0.0, 1.0, 0.25)], 1.0, scenario="balloon", seed=7)
        assert metrics.simulated == 0.0
        assert metrics.segments == []
        assert metrics.seed == 7

    def test_segments_after_end_are_dropped(self):
        ticks = [_tick(k) for k in range(50)]
        metrics = compute_run_metrics(ticks, RunEvents(), [(0.0, 0.5, 0.25), (2.0, 3.0, 0.6)], 1.0)
        assert [s.start for s in metrics.segments] == [0.0]


class TestRunMetricsSummary:
    """Tests for the flat summary mapping."""

    def test_summary_keys(self):
        metrics = RunMetrics(scenario="balloon", seed=7, segments=[SegmentMetrics(0.0, 10.0, 0.25)])
        summary = metrics.summary()
        keys = list(summary)
        assert keys[:4] == ["scenario", "seed", "simulated_s", "completed"]
        assert "max_altitude_deviation_m" in summary
        assert "estimated_payload_mass_kg" in summary
        assert keys[-6:] == [
            "segment.1.start_s",
            "segment.1.end_s",
            "segment.1.f_d_N",
            "segment.1.tracking_rms_N",
            "segment.1.steady_error_N",
            "segment.1.settle_time_s",
        ]
        assert summary["scenario"] == "balloon"

    def test_worst_steady_error(self):
        metrics = RunMetrics(segments=[
            SegmentMetrics(0.0, 1.0, 0.2, steady_error=0.01),
            SegmentMetrics(1.0, 2.0, 0.3, steady_error=0.03),
            SegmentMetrics(2.0, 3.0, 0.3),
        ])
        assert metrics.worst_steady_error == pytest.approx(0.03)
        assert math.isnan(RunMetrics().worst_steady_error)
