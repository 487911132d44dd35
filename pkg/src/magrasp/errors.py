"""Exception types raised across magrasp."""

from typing import Optional


class MagraspError(Exception):
    """Base class for all magrasp errors."""


class GeometryError(MagraspError, ValueError):
    """A matrix is too far from a rotation to be projected back."""


class DegenerateFlux(MagraspError, ValueError):
    """Flux lies outside the valid branch of the decoupling model."""


class NoSolution(MagraspError, ValueError):
    """The forward model could not find a flux for the requested force."""


class RankDeficient(MagraspError, ValueError):
    """Calibration data does not excite every axis."""


class UnknownNode(MagraspError, KeyError):
    """A sensor node id has no mounting entry."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown node"


class RangeError(MagraspError, ValueError):
    """A value cannot be represented on the wire."""


class StaleData(MagraspError):
    """A force estimate is older than the allowed number of sensor periods."""

    def __init__(self, message: str, nodes: Optional[list[int]] = None):
        super().__init__(message)
        self.nodes = nodes or []


class ContaminatedBaseline(MagraspError):
    """No-load samples vary too much to be a contact-free baseline."""


class ObjectLost(MagraspError):
    """A gripped object was not supported for long enough to stay in the grip."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class NumericalDivergence(MagraspError):
    """The simulated state left its sanity bounds."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class ConfigError(MagraspError, ValueError):
    """A scenario or calibration file failed validation."""

    def __init__(self, problems: list[str], source: Optional[str] = None):
        self.problems = problems
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + "; ".join(problems))
