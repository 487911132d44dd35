"""Pytest configuration and fixtures for magrasp tests."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from magrasp.config import ScenarioConfig, parse_config
from magrasp.tactile import CompensationCoefficients, FilmSpec

SCENARIOS_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def scenarios_dir() -> Path:
    """The shipped scenario files."""
    return SCENARIOS_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def coefficients() -> CompensationCoefficients:
    return CompensationCoefficients()


@pytest.fixture
def film() -> FilmSpec:
    return FilmSpec()


@pytest.fixture
def calibration(film, coefficients):
    """True calibration of the synthetic film, node 1, identity mount."""
    return film.true_calibration(coefficients, node_id=1)


@pytest.fixture
def short_balloon_config() -> ScenarioConfig:
    """A balloon run just long enough to get past the baseline and touch the balloon."""
    return parse_config(
        """
        scenario = balloon
        duration = 2.0
        seed = 3
        control.grasp.theta_r = 0.35
        control.grasp.f_d = 0.25
        """
    )


@pytest.fixture
def write_config(temp_dir):
    """Write scenario text to a file in temp_dir and return its path."""

    def _write(text: str, name: str = "scenario.cfg") -> Path:
        path = temp_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
