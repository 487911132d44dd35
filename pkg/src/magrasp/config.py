"""
Scenario configuration: a flat dotted-key text format validated by pydantic models.

    # balloon.cfg
    scenario = balloon
    duration = 30.0
    control.admittance.K.z = 60.0
    setpoint.grasp_force = [[0.0, 0.25], [10.0, 0.65], [20.0, 0.25]]

Values are JSON scalars or lists; bare words are read as strings. Unknown keys, duplicate
keys and out-of-range values are rejected with their dotted field path.
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from magrasp.constants import (
    BASELINE_MIN_DURATION,
    C1,
    C2,
    EARTH_FIELD_DEFAULT,
    EARTH_FIELD_MAX,
    EARTH_FIELD_MIN,
    FILM_GAIN,
    FILM_REST_BZ,
    FLUX_REFERENCE_SCALE,
    K1,
    K2,
    REFERENCE_STALENESS,
)
from magrasp.control import GraspAdmittanceParams, PositionAdmittanceParams, TrackingGains
from magrasp.errors import ConfigError
from magrasp.geometry import Axes, Rotation
from magrasp.objects import BalloonModel, ObjectModel
from magrasp.plant import PlantParams
from magrasp.tactile import CompensationCoefficients, FilmSpec, ForwardGauge, SensorCalibration, WorkingEnvelope

logger = logging.getLogger(__name__)

_STRICT = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

ABLATION_FLAGS = ("force_feedback", "geomag_comp", "payload_ff")


# =============================================================================
# MODELS
# =============================================================================


class CoefficientParams(BaseModel):
    model_config = _STRICT

    k1: float = Field(K1, gt=0)
    c1: float = C1
    k2: float = Field(K2, gt=0)
    c2: float = C2

    def build(self) -> CompensationCoefficients:
        return CompensationCoefficients(self.k1, self.c1, self.k2, self.c2)


class SensingParams(BaseModel):
    model_config = _STRICT

    noise_sigma: float = Field(0.0, ge=0)  # µT, on decoded tactile flux
    staleness: float = Field(REFERENCE_STALENESS, gt=0)  # s
    flux_scale: float = Field(FLUX_REFERENCE_SCALE, gt=0)
    earth_field: Axes = Axes.of(EARTH_FIELD_DEFAULT)  # µT, world frame
    coefficients: CoefficientParams = CoefficientParams()
    film_rest_bz: float = Field(FILM_REST_BZ, gt=0)
    film_gain: Axes = Axes.of(FILM_GAIN)
    film_polarity: Literal[1, -1] = 1
    baseline_duration: float = Field(0.6, ge=BASELINE_MIN_DURATION)

    @field_validator("earth_field")
    @classmethod
    def _plausible_earth(cls, value: Axes) -> Axes:
        magnitude = float((value.x**2 + value.y**2 + value.z**2) ** 0.5)
        if magnitude and not EARTH_FIELD_MIN <= magnitude <= EARTH_FIELD_MAX:
            logger.warning("Earth field %.1f µT is outside [%g, %g] µT", magnitude, EARTH_FIELD_MIN, EARTH_FIELD_MAX)
        return value

    def film(self) -> FilmSpec:
        return FilmSpec(self.film_rest_bz, (self.film_gain.x, self.film_gain.y, self.film_gain.z),
                        ForwardGauge(self.film_polarity))


class ControlParams(BaseModel):
    model_config = _STRICT

    admittance: PositionAdmittanceParams = PositionAdmittanceParams()
    tracking: TrackingGains = TrackingGains()
    grasp: GraspAdmittanceParams = GraspAdmittanceParams()


class SetpointParams(BaseModel):
    model_config = _STRICT

    position: Axes = Axes(x=0.0, y=0.0, z=1.0)
    # (start time s, desired grasp force N); empty means the grasp f_d applies throughout
    grasp_force: list[tuple[float, float]] = []

    @field_validator("grasp_force")
    @classmethod
    def _sorted(cls, schedule):
        times = [t for t, _ in schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("setpoint schedule must be strictly time-sorted")
        if any(f < 0 for _, f in schedule):
            raise ValueError("desired grasp force must be non-negative")
        return schedule


class AblationParams(BaseModel):
    model_config = _STRICT

    force_feedback: bool = True
    geomag_comp: bool = True
    payload_ff: bool = True
    # Flags switched off for the comparison run of `ablate`
    toggle: list[str] = ["force_feedback", "payload_ff"]

    @field_validator("toggle")
    @classmethod
    def _known_flags(cls, names):
        unknown = [n for n in names if n not in ABLATION_FLAGS]
        if unknown:
            raise ValueError(f"unknown ablation flags {unknown}; expected a subset of {list(ABLATION_FLAGS)}")
        if not names:
            raise ValueError("toggle must name at least one flag")
        return names


class SweepParams(BaseModel):
    model_config = _STRICT

    limit_deg: float = Field(30.0, gt=0, le=90)
    step_deg: float = Field(10.0, gt=0)
    node: int = Field(1, ge=1, le=6)


class CalibrationParams(BaseModel):
    model_config = _STRICT

    node: int = Field(1, ge=1, le=6)
    samples: int = Field(200, ge=4)
    holdout: int = Field(1000, ge=1)
    noise_sigma: float = Field(0.5, ge=0)
    lateral_range: float = Field(1.0, gt=0)  # ±N
    normal_range: float = Field(2.0, gt=0)  # 0..N


class ScenarioConfig(BaseModel):
    model_config = _STRICT

    scenario: Literal["balloon", "dynamic_load", "bottle", "sweep", "calibrate", "custom"] = "custom"
    duration: float = Field(10.0, gt=0)
    seed: int = Field(0, ge=0)
    plant: PlantParams = PlantParams()
    control: ControlParams = ControlParams()
    object: Optional[ObjectModel] = BalloonModel()
    setpoint: SetpointParams = SetpointParams()
    ablation: AblationParams = AblationParams()
    sensing: SensingParams = SensingParams()
    sweep: SweepParams = SweepParams()
    calibration: CalibrationParams = CalibrationParams()

    @model_validator(mode="after")
    def _check(self):
        if self.sensing.baseline_duration >= self.duration and self.scenario not in ("sweep", "calibrate"):
            raise ValueError("duration must exceed sensing.baseline_duration")
        return self

    def grasp_setpoint(self, t: float) -> float:
        """Desired grasp force at time t."""
        f_d = self.control.grasp.f_d
        for start, value in self.setpoint.grasp_force:
            if t >= start:
                f_d = value
        return f_d

    def segments(self) -> list[tuple[float, float, float]]:
        """(start, end, f_d) for each setpoint segment within the run."""
        schedule = list(self.setpoint.grasp_force) or [(0.0, self.control.grasp.f_d)]
        out = []
        for k, (start, value) in enumerate(schedule):
            end = schedule[k + 1][0] if k + 1 < len(schedule) else self.duration
            end = min(end, self.duration)
            if end > start:
                out.append((start, end, value))
        return out

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return self.model_copy(update={"seed": seed})

    def with_flags(self, **flags: bool) -> "ScenarioConfig":
        ablation = self.ablation.model_copy(update=flags)
        return self.model_copy(update={"ablation": ablation})


# =============================================================================
# DOTTED TEXT FORMAT
# =============================================================================


def _strip_comment(line: str) -> str:
    in_string = False
    escaped = False
    for i, ch in enumerate(line):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "#":
            return line[:i]
    return line


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if raw and all(ch.isalnum() or ch in "_-." for ch in raw):
            return raw
        raise


def parse_dotted(text: str, source: Optional[str] = None) -> dict:
    """Parse dotted-key text into a nested dict.

    Raises:
        ConfigError: On malformed lines, duplicate keys or conflicting key paths.
    """
    problems = []
    flat: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        if key in flat:
            problems.append(f"line {lineno}: duplicate key '{key}'")
            continue
        try:
            flat[key] = _parse_value(raw)
        except json.JSONDecodeError:
            problems.append(f"line {lineno}: cannot parse value for '{key}': {raw!r}")

    nested: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                problems.append(f"{key}: conflicts with a value set at '{part}'")
                break
            node = child
        else:
            if isinstance(node.get(parts[-1]), dict):
                problems.append(f"{key}: conflicts with nested keys below it")
            else:
                node[parts[-1]] = value

    if problems:
        raise ConfigError(problems, source)
    return nested


def _format_value(value: Any) -> str:
    if isinstance(value, str) and value.isidentifier():
        return value
    return json.dumps(value)


def _flatten(prefix: str, value: Any, out: list[str]) -> None:
    if isinstance(value, dict) and value:
        for key, child in value.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), child, out)
    else:
        out.append(f"{prefix} = {_format_value(value)}")


def format_dotted(data: dict) -> str:
    """Write a nested dict as dotted-key lines in insertion order."""
    lines: list[str] = []
    _flatten("", data, lines)
    return "\n".join(lines) + "\n"


def field_problems(error: ValidationError) -> list[str]:
    """Turn pydantic errors into 'dotted.path: message' lines."""
    problems = []
    for err in error.errors():
        path = ".".join(str(part) for part in err["loc"]) or "<root>"
        problems.append(f"{path}: {err['msg']}")
    return problems


def _merge_defaults(defaults: Any, data: Any) -> Any:
    """Overlay parsed keys on the default tree so partial overrides (`control.tracking.K_p.z`) work.

    A subtree whose `kind` differs from the default is taken as given.
    """
    if not (isinstance(defaults, dict) and isinstance(data, dict)):
        return data
    if "kind" in data and data["kind"] != defaults.get("kind"):
        return data
    merged = dict(defaults)
    for key, value in data.items():
        merged[key] = _merge_defaults(defaults[key], value) if key in defaults else value
    return merged


def validate_config(data: dict, source: Optional[str] = None) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(_merge_defaults(ScenarioConfig().model_dump(mode="json"), data))
    except ValidationError as e:
        raise ConfigError(field_problems(e), source) from None


def parse_config(text: str, source: Optional[str] = None) -> ScenarioConfig:
    return validate_config(parse_dotted(text, source), source)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises:
        ConfigError: With one 'field.path: message' entry per problem.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read file: {e.strerror or e}"], str(path)) from None
    return parse_config(text, str(path))


def serialize_config(config: ScenarioConfig) -> str:
    """Canonical text form; parse_config(serialize_config(c)) == c."""
    return format_dotted(config.model_dump(mode="json"))


# =============================================================================
# CALIBRATION BUNDLE
# =============================================================================


class _EnvelopeEntry(BaseModel):
    model_config = _STRICT

    xy_limit: float = Field(gt=0)
    z_center: float
    z_halfwidth: float = Field(gt=0)
    wavenumber: float = Field(gt=0)


class _SensorEntry(BaseModel):
    model_config = _STRICT

    a: tuple[float, float, float]
    b_off: tuple[float, float, float]
    mount_rotation: list[float] = Field(min_length=9, max_length=9)
    contact_normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    envelope: _EnvelopeEntry


class _Bundle(BaseModel):
    model_config = _STRICT

    coefficients: CoefficientParams = CoefficientParams()
    sensor: dict[int, _SensorEntry]


def write_calibration_bundle(
    path: Union[str, Path],
    calibrations: dict[int, SensorCalibration],
    coefficients: CompensationCoefficients,
) -> None:
    """Write per-sensor calibrations as dotted keys (`sensor.3.a = [...]`); floats are exact."""
    data = {
        "coefficients": {"k1": coefficients.k1, "c1": coefficients.c1, "k2": coefficients.k2, "c2": coefficients.c2},
        "sensor": {},
    }
    for node in sorted(calibrations):
        cal = calibrations[node]
        env = cal.envelope
        data["sensor"][str(node)] = {
            "a": [float(x) for x in cal.a],
            "b_off": [float(x) for x in cal.b_off],
            "mount_rotation": cal.mount_rotation.as_list(),
            "contact_normal": [float(x) for x in cal.contact_normal],
            "envelope": {
                "xy_limit": env.xy_limit,
                "z_center": env.z_center,
                "z_halfwidth": env.z_halfwidth,
                "wavenumber": env.wavenumber,
            },
        }
    Path(path).write_text(format_dotted(data), encoding="utf-8")


def read_calibration_bundle(
    path: Union[str, Path],
) -> tuple[dict[int, SensorCalibration], CompensationCoefficients]:
    """Read a bundle written by write_calibration_bundle.

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read file: {e.strerror or e}"], str(path)) from None
    try:
        bundle = _Bundle.model_validate(parse_dotted(text, str(path)))
    except ValidationError as e:
        raise ConfigError(field_problems(e), str(path)) from None

    calibrations = {}
    problems = []
    for node, entry in sorted(bundle.sensor.items()):
        try:
            calibrations[node] = SensorCalibration(
                a=np.array(entry.a),
                b_off=np.array(entry.b_off),
                mount_rotation=Rotation(np.array(entry.mount_rotation).reshape(3, 3)),
                contact_normal=np.array(entry.contact_normal),
                envelope=WorkingEnvelope(**entry.envelope.model_dump()),
                node_id=node,
            )
        except ValueError as e:
            problems.append(f"sensor.{node}: {e}")
    if problems:
        raise ConfigError(problems, str(path))
    return calibrations, bundle.coefficients.build()
