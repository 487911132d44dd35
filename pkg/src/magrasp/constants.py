"""Constants and defaults for the magrasp simulation suite."""

import math

# =============================================================================
# PHYSICS
# =============================================================================

GRAVITY: float = 9.81  # m/s^2, magnitude; the world z axis points up

# Vehicle weight from the hardware description
MASS_BASE: float = 0.556  # kg
INERTIA_DIAG: tuple[float, float, float] = (4e-3, 4e-3, 7e-3)  # kg m^2

# Ideal actuation with a first-order lag on thrust and torque
MOTOR_TAU: float = 0.03  # s
THRUST_LIMIT: float = 12.0  # N

# Sanity bounds; beyond these the integrator is considered diverged
DIVERGENCE_POSITION: float = 100.0  # m
DIVERGENCE_RATE: float = 100.0  # rad/s

# =============================================================================
# ROTATIONS
# =============================================================================

ORTHONORMAL_TOLERANCE: float = 1e-9
ORTHONORMAL_REJECT: float = 1e-3

# =============================================================================
# TACTILE SENSOR MODEL
# =============================================================================

# Compensation factors for B_z, fitted over the working envelope
K1: float = 2.27851
C1: float = 0.0010535
K2: float = 0.878725
C2: float = -0.0000785667

# Flux values entering the decoupling model are divided by this scale
FLUX_REFERENCE_SCALE: float = 1.0  # µT per model unit

# Guards for the decoupling model
DEGENERATE_EPSILON: float = 1e-12
FLUX_SATURATION: float = 5000.0  # µT, |B| bound of a realistic Hall device

# Working envelope of the film displacement
ENVELOPE_XY_LIMIT: float = 3.0  # mm
ENVELOPE_Z_CENTER: float = -10.0  # mm
ENVELOPE_Z_HALFWIDTH: float = 2.0  # mm
FILM_WAVENUMBER: float = 0.25  # rad/mm

# Synthetic film used to generate flux in simulation
FILM_REST_BZ: float = 200.0  # µT
FILM_GAIN: tuple[float, float, float] = (4.0, 4.0, 4.0)  # N per unit of S

# Forward-model Newton solver
NEWTON_MAX_ITERATIONS: int = 100
NEWTON_TOLERANCE: float = 1e-13
NEWTON_FD_STEP: float = 1e-6

# Calibration
CALIBRATION_MIN_PAIRS: int = 4
ZERO_OFFSET_MIN_SAMPLES: int = 10

# =============================================================================
# GEOMAGNETIC COMPENSATION
# =============================================================================

EARTH_FIELD_MIN: float = 20.0  # µT
EARTH_FIELD_MAX: float = 70.0  # µT
REFERENCE_STALENESS: float = 0.040  # s, two sensor periods
EARTH_FIELD_DEFAULT: tuple[float, float, float] = (0.0, 20.0, -45.8258)  # µT, world frame, about 50 µT

# =============================================================================
# SENSOR BUS
# =============================================================================

SYNC_BYTE: int = 0xAA
FRAME_LENGTH: int = 11
FLUX_LSB: float = 0.1  # µT per count
FLUX_WIRE_LIMIT: float = 3276.7  # µT
REFERENCE_NODE: int = 0
TACTILE_NODES: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
BUS_PERIOD_MS: float = 20.0  # 50 Hz
BUS_PHASE_STEP_MS: float = 2.0

# =============================================================================
# GRIPPER AND CONTACT
# =============================================================================

THETA_MIN: float = 0.0  # rad
THETA_MAX: float = 1.6  # rad
APERTURE_R_MAX: float = 0.12  # m, at THETA_MIN
APERTURE_R_MIN: float = 0.04  # m, at THETA_MAX
SERVO_RATE_MAX: float = 2.0  # rad/s
SERVO_TAU: float = 0.05  # s
SENSOR_COUNT: int = 6
OBJECT_LOST_AFTER: float = 0.5  # s of insufficient support

# =============================================================================
# CONTROL
# =============================================================================

SENSOR_PERIOD: float = 0.02  # s
SIM_DT: float = 0.001  # s
STALE_PERIODS: int = 3
INTEGRAL_CLAMP: float = 0.5  # N m s
DERIVATIVE_CUTOFF_HZ: float = 20.0
PAYLOAD_FILTER_HZ: float = 2.0

# =============================================================================
# PERCEPTION
# =============================================================================

BASELINE_MIN_DURATION: float = 0.5  # s of no-contact samples
CONTAMINATION_FACTOR: float = 5.0
# Variance floor used when the configured noise level is zero
CONTAMINATION_FLOOR: float = 0.05  # µT

# =============================================================================
# HARNESS
# =============================================================================

STEADY_STATE_FRACTION: float = 0.3
SETTLE_BAND: float = 0.05  # N
DEG: float = math.pi / 180.0

EXIT_OK: int = 0
EXIT_INVALID: int = 1
EXIT_DIVERGED: int = 2
EXIT_INTERRUPTED: int = 130
