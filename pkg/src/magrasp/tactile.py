"""
Force model of one magnetic soft tactile sensor.

The inverse direction (flux to force) is the closed-form decoupling model with the two B_z
compensation factors. The forward direction (force to flux) has no closed form and is solved
numerically; it stands in for the physical magnetized film when generating synthetic readings.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.linalg

from magrasp.constants import (
    C1,
    C2,
    CALIBRATION_MIN_PAIRS,
    DEGENERATE_EPSILON,
    ENVELOPE_XY_LIMIT,
    ENVELOPE_Z_CENTER,
    ENVELOPE_Z_HALFWIDTH,
    FILM_GAIN,
    FILM_REST_BZ,
    FILM_WAVENUMBER,
    FLUX_REFERENCE_SCALE,
    FLUX_SATURATION,
    K1,
    K2,
    NEWTON_FD_STEP,
    NEWTON_MAX_ITERATIONS,
    NEWTON_TOLERANCE,
    ZERO_OFFSET_MIN_SAMPLES,
)
from magrasp.errors import DegenerateFlux, NoSolution, RankDeficient
from magrasp.geometry import Rotation, Vec3, as_vec3

logger = logging.getLogger(__name__)


# =============================================================================
# TYPES
# =============================================================================


@dataclass(frozen=True, eq=False)
class FluxSample:
    """A three-axis flux reading in µT from one node."""

    b: Vec3
    node_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        b = as_vec3(self.b)
        if float(np.linalg.norm(b)) >= FLUX_SATURATION:
            raise ValueError(f"Flux magnitude {np.linalg.norm(b):.1f} µT exceeds saturation {FLUX_SATURATION} µT")
        object.__setattr__(self, "b", b)

    def with_flux(self, b: Vec3) -> "FluxSample":
        return FluxSample(b, self.node_id, self.timestamp)


@dataclass(frozen=True)
class CompensationCoefficients:
    """Affine corrections applied to B_z before decoupling."""

    k1: float = K1
    c1: float = C1
    k2: float = K2
    c2: float = C2

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError(f"k1 and k2 must be positive, got k1={self.k1}, k2={self.k2}")
        for name in ("k1", "c1", "k2", "c2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class WorkingEnvelope:
    """Film displacement region (mm) where the decoupling model is trusted."""

    xy_limit: float = ENVELOPE_XY_LIMIT
    z_center: float = ENVELOPE_Z_CENTER
    z_halfwidth: float = ENVELOPE_Z_HALFWIDTH
    wavenumber: float = FILM_WAVENUMBER  # rad/mm

    def __post_init__(self):
        if self.xy_limit <= 0 or self.z_halfwidth <= 0 or self.wavenumber <= 0:
            raise ValueError("Envelope limits and wavenumber must be positive")

    def contains(self, displacement: Vec3) -> bool:
        d = displacement
        return bool(
            abs(d[0]) <= self.xy_limit
            and abs(d[1]) <= self.xy_limit
            and abs(d[2] - self.z_center) <= self.z_halfwidth
        )


@dataclass(frozen=True, eq=False)
class SensorCalibration:
    """Everything needed to turn one sensor's flux into a force in the body frame."""

    a: Vec3
    b_off: Vec3
    mount_rotation: Rotation = field(default_factory=Rotation.identity)
    contact_normal: Vec3 = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    envelope: WorkingEnvelope = field(default_factory=WorkingEnvelope)
    node_id: int = 1

    def __post_init__(self):
        a = as_vec3(self.a)
        if np.any(a == 0.0):
            raise ValueError(f"Calibration gains must be nonzero, got {a}")
        normal = as_vec3(self.contact_normal)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError(f"Contact normal must be a unit vector, got {normal}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b_off", as_vec3(self.b_off))
        object.__setattr__(self, "contact_normal", normal)

    def with_gains(self, a: Vec3, b_off: Vec3) -> "SensorCalibration":
        return replace(self, a=as_vec3(a), b_off=as_vec3(b_off))

    def with_offset(self, b_off: Vec3) -> "SensorCalibration":
        return replace(self, b_off=as_vec3(b_off))

    def implied_displacement(self, f: Vec3) -> Vec3:
        """Film displacement in mm that a force corresponds to under the linear film model."""
        d = (np.asarray(f, dtype=float) / self.a) / self.envelope.wavenumber
        d[2] += self.envelope.z_center
        return d


@dataclass(frozen=True, eq=False)
class ForceEstimate:
    """Force in the sensor frame; valid is False outside the working envelope."""

    f: Vec3
    valid: bool = True

    @classmethod
    def zero(cls) -> "ForceEstimate":
        return cls(np.zeros(3), True)


@dataclass(frozen=True)
class ForwardGauge:
    """Selects the branch of the force-to-flux inverse; polarity is the film's magnet orientation."""

    polarity: int = 1

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError(f"Gauge polarity must be +1 or -1, got {self.polarity}")

    def initial_guess(self, s_target: Vec3, c: CompensationCoefficients, scale: float) -> Vec3:
        """Closed-form flux for the target S with the lateral coupling ignored."""
        inner = self.polarity * math.exp(s_target[2])
        bz_dprime = inner + 0.5
        bz = (bz_dprime - c.c2) / c.k2
        bz_prime = c.k1 * bz + c.c1
        bx = 0.5 * bz_prime * math.tan(s_target[0])
        by = 0.5 * bz_prime * math.tan(s_target[1])
        return np.array([bx, by, bz]) * scale


FluxLike = Union[FluxSample, Vec3]


def _components(b: FluxLike) -> Vec3:
    return b.b if isinstance(b, FluxSample) else np.asarray(b, dtype=float)


# =============================================================================
# DECOUPLING MODEL
# =============================================================================


def compensate_bz(b: FluxLike, c: CompensationCoefficients, scale: float = FLUX_REFERENCE_SCALE) -> tuple[float, float]:
    """Return the two compensated B_z values (B_z', B_z'').

    Args:
        b: Flux sample or raw flux vector in µT.
        c: Compensation coefficients.
        scale: µT per model unit.
    """
    bz = float(_components(b)[2]) / scale
    return c.k1 * bz + c.c1, c.k2 * bz + c.c2


def _s_components(bx: float, by: float, bz: float, c: CompensationCoefficients) -> tuple[float, float, float]:
    bz_p = c.k1 * bz + c.c1
    bz_pp = c.k2 * bz + c.c2
    if abs(bz_p) < DEGENERATE_EPSILON or abs(bz_pp) < DEGENERATE_EPSILON:
        raise DegenerateFlux(f"Compensated B_z vanishes (B_z'={bz_p:.3g}, B_z''={bz_pp:.3g})")

    lateral = by * by - bx * bx
    den_x = bz_p - (bz_p * bz_p - lateral) / (2.0 * bz_p)
    den_y = bz_p - (bz_p * bz_p + lateral) / (2.0 * bz_p)
    if abs(den_x) < DEGENERATE_EPSILON or abs(den_y) < DEGENERATE_EPSILON:
        raise DegenerateFlux(f"Lateral denominator vanishes for B=({bx:.6g}, {by:.6g}, {bz:.6g})")

    inner = bz_pp - (bz_pp + lateral) / (2.0 * bz_pp)
    log_arg = math.sqrt(inner * inner + by * by)
    if log_arg <= 0.0:
        raise DegenerateFlux(f"Logarithm argument is not positive for B=({bx:.6g}, {by:.6g}, {bz:.6g})")

    return math.atan(bx / den_x), math.atan(by / den_y), math.log(log_arg)


def decouple_s(b: FluxLike, c: CompensationCoefficients, scale: float = FLUX_REFERENCE_SCALE) -> Vec3:
    """Map flux to the decoupled deformation vector S(B).

    Args:
        b: Flux sample or raw flux vector in µT.
        c: Compensation coefficients.
        scale: µT per model unit; flux is divided by it before evaluation.

    Returns:
        S as a 3-vector.

    Raises:
        DegenerateFlux: If a denominator is below 1e-12 or the log argument is not positive.
    """
    bx, by, bz = (float(x) / scale for x in _components(b))
    return np.array(_s_components(bx, by, bz, c))


def flux_to_force(
    b: FluxLike,
    cal: SensorCalibration,
    c: CompensationCoefficients,
    scale: float = FLUX_REFERENCE_SCALE,
) -> ForceEstimate:
    """Apply f = a ⊙ S(B) + b_off and flag envelope membership."""
    f = cal.a * decouple_s(b, c, scale) + cal.b_off
    return ForceEstimate(f, cal.envelope.contains(cal.implied_displacement(f)))


# =============================================================================
# FORWARD MODEL
# =============================================================================


def _residual(b: Vec3, target: Vec3, c: CompensationCoefficients, scale: float) -> Vec3:
    return decouple_s(b, c, scale) - target


def _jacobian(b: Vec3, c: CompensationCoefficients, scale: float) -> np.ndarray:
    jac = np.empty((3, 3))
    for j in range(3):
        h = NEWTON_FD_STEP * max(1.0, abs(b[j]))
        plus = b.copy()
        minus = b.copy()
        plus[j] += h
        minus[j] -= h
        jac[:, j] = (decouple_s(plus, c, scale) - decouple_s(minus, c, scale)) / (2.0 * h)
    return jac


def solve_flux_for_s(
    s_target: Vec3,
    c: CompensationCoefficients,
    gauge: ForwardGauge = ForwardGauge(),
    scale: float = FLUX_REFERENCE_SCALE,
    initial_guess: Optional[Vec3] = None,
) -> Vec3:
    """Find B with S(B) = s_target by damped Newton iteration.

    Raises:
        NoSolution: If the target is outside the model's image or the iteration stalls.
    """
    s_target = np.asarray(s_target, dtype=float)
    if abs(s_target[0]) >= math.pi / 2 or abs(s_target[1]) >= math.pi / 2:
        raise NoSolution(f"Lateral target {s_target[:2]} is outside the arctan range")

    b = np.array(initial_guess, dtype=float) if initial_guess is not None else gauge.initial_guess(s_target, c, scale)
    try:
        r = _residual(b, s_target, c, scale)
    except DegenerateFlux as e:
        raise NoSolution(f"Initial guess is degenerate: {e}") from e
    norm = float(np.max(np.abs(r)))

    for _ in range(NEWTON_MAX_ITERATIONS):
        if norm < NEWTON_TOLERANCE:
            return b
        try:
            step = scipy.linalg.solve(_jacobian(b, c, scale), -r)
        except (DegenerateFlux, scipy.linalg.LinAlgError, ValueError) as e:
            raise NoSolution(f"Newton step failed: {e}") from e

        lam = 1.0
        while lam > 1e-8:
            candidate = b + lam * step
            try:
                r_new = _residual(candidate, s_target, c, scale)
            except DegenerateFlux:
                lam *= 0.5
                continue
            norm_new = float(np.max(np.abs(r_new)))
            if norm_new < norm:
                b, r, norm = candidate, r_new, norm_new
                break
            lam *= 0.5
        else:
            # No descent left; accept only if we are already at round-off level
            if norm < NEWTON_TOLERANCE * 100:
                return b
            raise NoSolution(f"Line search stalled at residual {norm:.3g}")

    if norm < NEWTON_TOLERANCE * 100:
        return b
    raise NoSolution(f"Newton did not converge in {NEWTON_MAX_ITERATIONS} iterations (residual {norm:.3g})")


def force_to_flux(
    f: Vec3,
    cal: SensorCalibration,
    c: CompensationCoefficients,
    gauge: ForwardGauge = ForwardGauge(),
    scale: float = FLUX_REFERENCE_SCALE,
    timestamp: float = 0.0,
    initial_guess: Optional[Vec3] = None,
) -> FluxSample:
    """Synthesize the flux that decodes to force f under cal.

    Args:
        f: Force in N, sensor frame.
        cal: Calibration whose gains and offset define the target S.
        c: Compensation coefficients.
        gauge: Branch selection for the inverse.
        scale: µT per model unit.
        timestamp: Copied into the returned sample.
        initial_guess: Optional warm start in µT (e.g. the previous solution).

    Returns:
        FluxSample tagged with the calibration's node id.

    Raises:
        NoSolution: If no flux reproduces f.
    """
    s_target = (as_vec3(f) - cal.b_off) / cal.a
    b = solve_flux_for_s(s_target, c, gauge, scale, initial_guess)
    try:
        return FluxSample(b, cal.node_id, timestamp)
    except ValueError as e:
        raise NoSolution(str(e)) from e


@dataclass(frozen=True)
class FilmSpec:
    """The synthetic physical film: what the simulator treats as ground truth."""

    rest_bz: float = FILM_REST_BZ
    gain: tuple[float, float, float] = FILM_GAIN
    gauge: ForwardGauge = ForwardGauge()

    def rest_flux(self) -> Vec3:
        return np.array([0.0, 0.0, self.gauge.polarity * self.rest_bz])

    def true_offset(self, c: CompensationCoefficients, scale: float = FLUX_REFERENCE_SCALE) -> Vec3:
        """Offset that makes the unloaded film read exactly zero force."""
        return -np.asarray(self.gain) * decouple_s(self.rest_flux(), c, scale)

    def true_calibration(
        self,
        c: CompensationCoefficients,
        node_id: int = 1,
        mount_rotation: Optional[Rotation] = None,
        envelope: Optional[WorkingEnvelope] = None,
        scale: float = FLUX_REFERENCE_SCALE,
    ) -> SensorCalibration:
        return SensorCalibration(
            a=np.asarray(self.gain, dtype=float),
            b_off=self.true_offset(c, scale),
            mount_rotation=mount_rotation or Rotation.identity(),
            envelope=envelope or WorkingEnvelope(),
            node_id=node_id,
        )


# =============================================================================
# CALIBRATION
# =============================================================================


@dataclass(frozen=True, eq=False)
class CalibrationFit:
    """Per-axis least-squares gains and offsets with their residuals (N)."""

    a: Vec3
    b: Vec3
    rms: float
    residual_rms: Vec3

    def apply(self, cal: SensorCalibration) -> SensorCalibration:
        return cal.with_gains(self.a, self.b)


def calibrate(
    pairs: list[tuple[FluxLike, Vec3]],
    c: CompensationCoefficients,
    scale: float = FLUX_REFERENCE_SCALE,
) -> CalibrationFit:
    """Fit a and b per axis from (flux, reference force) pairs.

    Args:
        pairs: Flux samples with the force measured by a reference load cell.
        c: Compensation coefficients.
        scale: µT per model unit.

    Returns:
        CalibrationFit with the residual RMS over all axes.

    Raises:
        RankDeficient: If there are too few pairs or an axis was never excited.
        DegenerateFlux: If any sample cannot be decoupled.
    """
    if len(pairs) < CALIBRATION_MIN_PAIRS:
        raise RankDeficient(f"Need at least {CALIBRATION_MIN_PAIRS} calibration pairs, got {len(pairs)}")

    s = np.array([decouple_s(b, c, scale) for b, _ in pairs])
    f = np.array([as_vec3(force) for _, force in pairs])

    a = np.empty(3)
    b_off = np.empty(3)
    residual = np.empty(3)
    for axis, name in enumerate("xyz"):
        column = s[:, axis]
        if np.unique(column).size < 2:
            raise RankDeficient(f"Axis {name} has fewer than 2 distinct S values")
        design = np.column_stack([column, np.ones_like(column)])
        (a[axis], b_off[axis]), *_ = scipy.linalg.lstsq(design, f[:, axis])
        err = design @ np.array([a[axis], b_off[axis]]) - f[:, axis]
        residual[axis] = math.sqrt(float(np.mean(err**2)))

    if np.any(a == 0.0):
        raise RankDeficient(f"Fitted gain is zero on some axis: {a}")

    rms = math.sqrt(float(np.mean(residual**2)))
    logger.debug("Calibration fit a=%s b=%s rms=%.4g N", a, b_off, rms)
    return CalibrationFit(a, b_off, rms, residual)


def evaluate_fit(
    fit: CalibrationFit,
    pairs: list[tuple[FluxLike, Vec3]],
    c: CompensationCoefficients,
    scale: float = FLUX_REFERENCE_SCALE,
) -> Vec3:
    """Per-axis force RMS error of a fit on held-out pairs."""
    s = np.array([decouple_s(b, c, scale) for b, _ in pairs])
    f = np.array([as_vec3(force) for _, force in pairs])
    err = fit.a * s + fit.b - f
    return np.sqrt(np.mean(err**2, axis=0))


def zero_offset(
    samples: list[FluxLike],
    cal: SensorCalibration,
    c: CompensationCoefficients,
    scale: float = FLUX_REFERENCE_SCALE,
) -> Vec3:
    """Offset that makes the mean no-load force estimate exactly zero."""
    if len(samples) < ZERO_OFFSET_MIN_SAMPLES:
        raise ValueError(f"Zero-offset needs at least {ZERO_OFFSET_MIN_SAMPLES} samples, got {len(samples)}")
    mean_s = np.mean([decouple_s(b, c, scale) for b in samples], axis=0)
    return -cal.a * mean_s
