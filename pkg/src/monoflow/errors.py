"""Exception types raised across the package."""

from __future__ import annotations


class MonoflowError(Exception):
    """Base class for package errors."""


class ConfigurationError(MonoflowError, ValueError):
    """Invalid grid, energy, sampler or run configuration."""


class CapacityError(MonoflowError):
    """A discrete measure exceeds the exact solver's support limit."""


class SimulationError(MonoflowError, RuntimeError):
    """Runtime failure of the time stepper.

    Parameters
    ----------
    message : str
        Human readable reason.
    t : float, optional
        Simulation time at which the failure was detected.
    """

    def __init__(self, message: str, t: float | None = None):
        if t is not None:
            message = f"{message} (t={t:.6g})"
        super().__init__(message)
        self.t = t


class CFLViolationError(SimulationError):
    """Density dropped below the positivity guard after a step."""


class BoundaryMassError(SimulationError):
    """Too much mass reached the outermost cells of the computational box."""
