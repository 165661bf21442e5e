"""
Exception hierarchy for the bosonic control services.

Input and configuration problems subclass ValueError, failures of a numerical
procedure subclass RuntimeError, so command handlers can map them onto exit codes.
"""
from typing import Any, Optional


class ConfigError(ValueError):
    """Run configuration is missing, malformed or fails schema validation."""


class InvalidArgumentError(ValueError):
    """An argument is outside its admissible domain (non-finite, negative rate, ...)."""


class CutoffTooSmallError(ValueError):
    """Fock truncation is too small for the requested state."""


class OutOfRegimeError(ValueError):
    """Parameters leave the dispersive regime the model relies on."""


class MissingParameterError(ValueError):
    """An optional physical parameter is required by the requested quantity."""


class UseMonteCarloError(ValueError):
    """Hilbert space too large for a dense superoperator."""


class NotRobustError(ValueError):
    """Pulse is not robust across the detuning range, so its phase is ill-defined."""


class CorrectionRefusedError(ValueError):
    """A first-order phase correction was requested for a non-robust pulse."""


class OptimizationError(RuntimeError):
    """An optimization did not reach its target."""


class CompilationError(OptimizationError):
    """Circuit compilation exhausted the block budget."""

    def __init__(self, message: str, best: Optional[Any] = None, infidelity: Optional[float] = None):
        super().__init__(message)
        self.best = best
        self.infidelity = infidelity


class SynthesisError(OptimizationError):
    """No ECD pulse realizes the requested conditional displacement."""


class SimulationError(RuntimeError):
    """A time evolution failed."""


class IntegrationError(SimulationError):
    """Trajectory integration is unstable at the requested step."""
