"""
Detuning dependence of the global phase of a robust rotation.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from services.errors import NotRobustError
from services.grape.base import TransmonControl
from services.grape.envelopes import ComplexEnvelope
from services.grape.optimizer import DetuningGrid
from services.model import hz

logger = logging.getLogger(__name__)

DEFAULT_STEP = hz(10e3)
ROBUSTNESS_THRESHOLD = 1e-2


@dataclass(frozen=True)
class LinearPhase:
    """theta(delta) ~ offset + slope * delta near delta = 0."""
    slope: float
    offset: float
    max_infidelity: float

    def cavity_phase(self, chi: float) -> float:
        """Virtual phase per photon that cancels e^{i slope chi n} on a coupled cavity."""
        return chi * self.slope


def phase_of(u: np.ndarray, target: np.ndarray, projector: np.ndarray) -> float:
    """arg Tr[P U_target^dag U]."""
    return float(np.angle(np.trace(projector @ target.conj().T @ u)))


def linear_phase_from_propagators(propagator: Callable[[float], np.ndarray], target: np.ndarray,
                                  projector: np.ndarray, step: float = DEFAULT_STEP) -> float:
    """Central-difference slope of arg Tr[P U_target^dag U(delta)] at delta = 0."""
    plus = phase_of(propagator(step), target, projector)
    minus = phase_of(propagator(-step), target, projector)
    return float(np.angle(np.exp(1j * (plus - minus))) / (2 * step))


def phase_profile(env: ComplexEnvelope, deltas: Sequence[float], theta: float, control: TransmonControl) -> np.ndarray:
    """Unwrapped theta(delta) over sorted detunings."""
    target = control.target(theta)
    order = np.argsort(deltas)
    us = control.propagators(env.samples, env.dt, np.asarray(deltas)[order])
    phases = np.unwrap([phase_of(u, target, control.projector) for u in us])
    out = np.empty_like(phases)
    out[order] = phases
    return out


def extract_linear_phase(env: ComplexEnvelope, theta: float, control: TransmonControl,
                         grid: Optional[DetuningGrid] = None, step: float = DEFAULT_STEP,
                         threshold: float = ROBUSTNESS_THRESHOLD, force: bool = False) -> LinearPhase:
    """
    Slope of the global phase with respect to ancilla detuning.

    Args:
        env: Rotation pulse
        theta: Target rotation angle
        control: Transmon model
        grid: Robustness range checked before fitting (standard grid by default)
        step: Finite-difference step (rad/s)
        threshold: Largest closed infidelity over the range for which the phase is meaningful
        force: Fit even if the pulse is not robust

    Returns:
        LinearPhase with slope in seconds

    Raises:
        NotRobustError: If the infidelity over the range exceeds threshold and force is False
    """
    grid = grid or DetuningGrid.standard()
    worst = float(np.max(control.infidelities(env, grid.deltas, theta)))
    if worst > threshold and not force:
        raise NotRobustError(f"closed infidelity reaches {worst:.3e} over the detuning range (> {threshold:.1e})")
    target = control.target(theta)
    slope = linear_phase_from_propagators(lambda d: control.propagator(env, d), target, control.projector, step)
    offset = phase_of(control.propagator(env, 0.0), target, control.projector)
    logger.debug("linear phase slope %.4e s (offset %.4f rad, worst infidelity %.2e)", slope, offset, worst)
    return LinearPhase(slope=slope, offset=offset, max_infidelity=worst)


__all__ = ['LinearPhase', 'extract_linear_phase', 'linear_phase_from_propagators', 'phase_profile', 'phase_of']
