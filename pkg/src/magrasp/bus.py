"""
Wire codec and emulator for the daisy-chained sensor bus.

Frame layout (11 bytes):
    AA | node | seq | fx fy fz (int16 LE, 0.1 µT) | CRC-16/CCITT-FALSE over bytes 0..8 (BE)

Every node publishes on a fixed period with its own phase offset, and the host sees a single
merged byte stream.
"""

import logging
import struct
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import crcmod.predefined
import numpy as np

from magrasp.constants import (
    BUS_PERIOD_MS,
    BUS_PHASE_STEP_MS,
    FLUX_LSB,
    FLUX_WIRE_LIMIT,
    FRAME_LENGTH,
    REFERENCE_NODE,
    SYNC_BYTE,
    TACTILE_NODES,
)
from magrasp.errors import RangeError
from magrasp.geometry import Vec3

logger = logging.getLogger(__name__)

_crc16 = crcmod.predefined.mkCrcFun("crc-ccitt-false")

_HEADER = struct.Struct("<BBB3h")
_CRC = struct.Struct(">H")

BAD_CRC = "bad_crc"
NO_SYNC = "no_sync"
TRUNCATED = "truncated"

FluxSource = Callable[[float], Vec3]


def crc16_ccitt(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final xor)."""
    return _crc16(bytes(data))


# =============================================================================
# CODEC
# =============================================================================


@dataclass(frozen=True)
class WireFrame:
    """A decoded frame; flux is kept as the exact integer counts from the wire."""

    node_id: int
    seq: int
    counts: tuple[int, int, int]

    @property
    def flux(self) -> Vec3:
        return np.array(self.counts, dtype=float) * FLUX_LSB

    def to_bytes(self) -> bytes:
        body = _HEADER.pack(SYNC_BYTE, self.node_id, self.seq, *self.counts)
        return body + _CRC.pack(crc16_ccitt(body))


@dataclass(frozen=True)
class FramingError:
    """A span of stream bytes [start, end) that did not form a valid frame."""

    start: int
    end: int
    reason: str

    @property
    def length(self) -> int:
        return self.end - self.start


DecodedItem = Union[WireFrame, FramingError]


def quantize_flux(flux: Vec3) -> tuple[int, int, int]:
    """Fixed-point counts for a flux vector.

    Raises:
        RangeError: If any component is beyond ±3276.7 µT.
    """
    values = [float(x) for x in flux]
    for v in values:
        if not abs(v) <= FLUX_WIRE_LIMIT:
            raise RangeError(f"Flux component {v} µT is outside ±{FLUX_WIRE_LIMIT} µT")
    return tuple(int(round(v / FLUX_LSB)) for v in values)


def encode_frame(node_id: int, seq: int, flux: Vec3) -> bytes:
    """Encode one frame.

    Args:
        node_id: 0 for the reference sensor, 1-6 for tactile nodes.
        seq: Wrapping sequence counter (0-255).
        flux: Flux in µT.

    Returns:
        The 11-byte frame.

    Raises:
        RangeError: If the flux or the header fields do not fit the frame.
    """
    if not 0 <= node_id <= 0xFF or not 0 <= seq <= 0xFF:
        raise RangeError(f"node_id and seq must fit one byte, got node_id={node_id}, seq={seq}")
    return WireFrame(node_id, seq, quantize_flux(flux)).to_bytes()


def _parse_frame(raw: bytes) -> Optional[WireFrame]:
    (expected,) = _CRC.unpack_from(raw, FRAME_LENGTH - 2)
    if crc16_ccitt(raw[: FRAME_LENGTH - 2]) != expected:
        return None
    _, node_id, seq, fx, fy, fz = _HEADER.unpack_from(raw, 0)
    return WireFrame(node_id, seq, (fx, fy, fz))


class StreamDecoder:
    """Incremental decoder: feed arbitrary chunks, get frames and framing errors back.

    Bytes that cannot start a valid frame are skipped one at a time until the next sync byte;
    contiguous skipped bytes are reported as a single FramingError.
    """

    def __init__(self):
        self._buffer = bytearray()
        self._offset = 0  # absolute stream offset of _buffer[0]
        self._pending: Optional[FramingError] = None
        self.frames_decoded = 0
        self.errors_reported = 0

    def _skip(self, count: int, reason: str, out: list[DecodedItem]) -> None:
        start = self._offset
        end = start + count
        del self._buffer[:count]
        self._offset = end

        if self._pending is not None and self._pending.end == start:
            merged_reason = BAD_CRC if BAD_CRC in (self._pending.reason, reason) else reason
            self._pending = FramingError(self._pending.start, end, merged_reason)
        else:
            self._flush(out)
            self._pending = FramingError(start, end, reason)

    def _flush(self, out: list[DecodedItem]) -> None:
        if self._pending is not None:
            out.append(self._pending)
            self.errors_reported += 1
            span = self._pending
            logger.debug("Framing error at bytes %d-%d (%s)", span.start, span.end, span.reason)
            self._pending = None

    def feed(self, data: bytes) -> list[DecodedItem]:
        out: list[DecodedItem] = []
        self._buffer.extend(data)

        while self._buffer:
            if self._buffer[0] != SYNC_BYTE:
                idx = self._buffer.find(SYNC_BYTE)
                self._skip(len(self._buffer) if idx < 0 else idx, NO_SYNC, out)
                continue
            if len(self._buffer) < FRAME_LENGTH:
                break
            frame = _parse_frame(bytes(self._buffer[:FRAME_LENGTH]))
            if frame is None:
                self._skip(1, BAD_CRC, out)
                continue
            self._flush(out)
            out.append(frame)
            self.frames_decoded += 1
            del self._buffer[:FRAME_LENGTH]
            self._offset += FRAME_LENGTH

        return out

    def finish(self) -> list[DecodedItem]:
        """Report whatever is left at end of stream as a truncated tail."""
        out: list[DecodedItem] = []
        self._flush(out)
        if self._buffer:
            out.append(FramingError(self._offset, self._offset + len(self._buffer), TRUNCATED))
            self.errors_reported += 1
            self._offset += len(self._buffer)
            self._buffer.clear()
        return out


def decode_stream(data: bytes) -> list[DecodedItem]:
    """Decode a complete byte stream into frames and framing errors, in stream order."""
    decoder = StreamDecoder()
    return decoder.feed(data) + decoder.finish()


# =============================================================================
# SCHEDULE AND TIMESTAMPS
# =============================================================================


def _to_us(seconds: float) -> int:
    return int(round(seconds * 1_000_000))


@dataclass(frozen=True)
class BusSchedule:
    """Publish period and per-node phase offsets, both in milliseconds."""

    period_ms: float = BUS_PERIOD_MS
    offsets_ms: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.period_ms <= 0:
            raise ValueError(f"Bus period must be positive, got {self.period_ms} ms")
        for node, offset in self.offsets_ms.items():
            if not 0 <= offset < self.period_ms:
                raise ValueError(f"Phase offset of node {node} must be in [0, {self.period_ms}) ms, got {offset}")

    @classmethod
    def staggered(cls, nodes: Iterable[int], period_ms: float = BUS_PERIOD_MS, step_ms: float = BUS_PHASE_STEP_MS):
        """Offsets k * step_ms in node order."""
        return cls(period_ms, {node: k * step_ms for k, node in enumerate(sorted(nodes))})

    @property
    def period_us(self) -> int:
        return int(round(self.period_ms * 1000))

    def offset_us(self, node_id: int) -> int:
        return int(round(self.offsets_ms.get(node_id, 0.0) * 1000))

    def emission_us(self, node_id: int, k: int) -> int:
        return self.offset_us(node_id) + k * self.period_us

    def emission_time(self, node_id: int, k: int) -> float:
        return self.emission_us(node_id, k) / 1_000_000


def default_schedule() -> BusSchedule:
    return BusSchedule.staggered((REFERENCE_NODE, *TACTILE_NODES))


class SequenceClock:
    """Host-side timestamp reconstruction from the schedule and the wrapping seq counter."""

    def __init__(self, schedule: BusSchedule):
        self.schedule = schedule
        self._last_seq: dict[int, int] = {}
        self._wraps: dict[int, int] = {}

    def timestamp(self, frame: WireFrame) -> float:
        node = frame.node_id
        last = self._last_seq.get(node)
        if last is not None and frame.seq <= last:
            self._wraps[node] = self._wraps.get(node, 0) + 1
        self._last_seq[node] = frame.seq
        k = self._wraps.get(node, 0) * 256 + frame.seq
        return self.schedule.emission_time(node, k)


# =============================================================================
# EMULATOR
# =============================================================================


@dataclass(frozen=True)
class BusSample:
    """What a node put on the wire, for comparison with the decoded stream."""

    node_id: int
    seq: int
    timestamp: float
    counts: tuple[int, int, int]

    @property
    def flux(self) -> Vec3:
        return np.array(self.counts, dtype=float) * FLUX_LSB


class BusEmulator:
    """Deterministic event loop that turns flux sources into a merged frame stream."""

    def __init__(self, schedule: BusSchedule, nodes: Iterable[int]):
        self.schedule = schedule
        self.nodes = sorted(nodes)
        if not self.nodes:
            raise ValueError("Bus emulator needs at least one node")
        self._next_k = dict.fromkeys(self.nodes, 0)
        self._stream = bytearray()
        self.log: list[BusSample] = []
        self.clipped = 0

    def _emit(self, node: int, source: FluxSource) -> None:
        k = self._next_k[node]
        t = self.schedule.emission_time(node, k)
        flux = np.asarray(source(t), dtype=float)
        if np.any(np.abs(flux) > FLUX_WIRE_LIMIT):
            self.clipped += 1
            logger.warning("Node %d flux %s clipped to the wire range at t=%.3f s", node, flux, t)
            flux = np.clip(flux, -FLUX_WIRE_LIMIT, FLUX_WIRE_LIMIT)
        frame = WireFrame(node, k % 256, quantize_flux(flux))
        self._stream.extend(frame.to_bytes())
        self.log.append(BusSample(node, frame.seq, t, frame.counts))
        self._next_k[node] = k + 1

    def _emit_until(self, limit_us: int, sources: Mapping[int, FluxSource], inclusive: bool) -> int:
        emitted = 0
        while True:
            due = [
                (self.schedule.emission_us(node, self._next_k[node]), node)
                for node in self.nodes
            ]
            t_us, node = min(due)
            if t_us > limit_us or (t_us == limit_us and not inclusive):
                return emitted
            self._emit(node, sources[node])
            emitted += 1

    def advance(self, t: float, sources: Mapping[int, FluxSource]) -> int:
        """Emit every frame scheduled at or before t; returns the number emitted."""
        return self._emit_until(_to_us(t), sources, inclusive=True)

    def drain(self) -> bytes:
        """Bytes written since the last drain."""
        data = bytes(self._stream)
        self._stream.clear()
        return data


def run_emulated_bus(
    sources: Mapping[int, FluxSource],
    schedule: BusSchedule,
    duration: float,
) -> tuple[bytes, list[BusSample]]:
    """Run the bus over [0, duration) and return the stream with its sample log."""
    emulator = BusEmulator(schedule, sources.keys())
    emulator._emit_until(_to_us(duration), sources, inclusive=False)
    return emulator.drain(), emulator.log


def save_stream(path: Union[str, Path], data: bytes) -> None:
    Path(path).write_bytes(data)


def load_stream(path: Union[str, Path]) -> bytes:
    return Path(path).read_bytes()


# =============================================================================
# FUZZING
# =============================================================================


@dataclass
class FuzzResult:
    trials: int = 0
    detected: int = 0
    false_accepts: int = 0

    @property
    def bound(self) -> float:
        """Expected number of false accepts for a 16-bit CRC."""
        return self.trials * 2.0**-16

    def within_bound(self) -> bool:
        # Poisson 99.9% upper tail for small means
        return self.false_accepts <= max(5.0, 3.0 * self.bound)


def fuzz_single_byte(stream: bytes, trials: int, rng: np.random.Generator) -> FuzzResult:
    """Corrupt one random byte per trial and check the decoder never accepts a forged frame.

    A false accept is a decoded frame that is not one of the frames in the clean stream.
    """
    original = {item for item in decode_stream(stream) if isinstance(item, WireFrame)}
    result = FuzzResult()
    positions = rng.integers(0, len(stream), size=trials)
    masks = rng.integers(1, 256, size=trials)
    buf = bytearray(stream)
    for pos, mask in zip(positions, masks):
        buf[pos] ^= int(mask)
        items = decode_stream(bytes(buf))
        buf[pos] ^= int(mask)

        result.trials += 1
        if any(isinstance(item, FramingError) for item in items):
            result.detected += 1
        forged = [item for item in items if isinstance(item, WireFrame) and item not in original]
        if forged:
            result.false_accepts += 1
            logger.warning("Corruption at byte %d was accepted as frame %s", pos, forged[0])

    if result.false_accepts:
        logger.info("False accepts %d vs expected %.3f", result.false_accepts, result.bound)
    return result
