"""
Short-time composition identities for synthesizing new generators from two available ones.
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from services.hilbert import destroy

DEFAULT_STEPS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class IdentityErrors:
    """Operator-norm residuals of both identities at one step size."""
    dt: float
    commutator: float
    average: float


def group_commutator_error(a: np.ndarray, b: np.ndarray, dt: float) -> float:
    """
    || e^{-iA dt} e^{-iB dt} e^{iA dt} e^{iB dt} - e^{[A, B] dt^2} ||_2

    The four evolutions are applied in the written order (e^{-iA dt} first), so the
    matrix product runs right to left.
    """
    lhs = expm(1j * b * dt) @ expm(1j * a * dt) @ expm(-1j * b * dt) @ expm(-1j * a * dt)
    rhs = expm((a @ b - b @ a) * dt ** 2)
    return float(np.linalg.norm(lhs - rhs, 2))


def symmetric_average_error(a: np.ndarray, b: np.ndarray, dt: float) -> float:
    """|| e^{iA dt/2} e^{iB dt/2} e^{iB dt/2} e^{iA dt/2} - e^{i(A + B) dt} ||_2"""
    half_a = expm(0.5j * a * dt)
    half_b = expm(0.5j * b * dt)
    lhs = half_a @ half_b @ half_b @ half_a
    return float(np.linalg.norm(lhs - expm(1j * (a + b) * dt), 2))


def verify_commutator_identities(a: np.ndarray, b: np.ndarray,
                                 steps: Sequence[float] = DEFAULT_STEPS) -> Tuple[IdentityErrors, ...]:
    """Residuals of both identities for each step size."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return tuple(IdentityErrors(dt, group_commutator_error(a, b, dt), symmetric_average_error(a, b, dt))
                 for dt in steps)


def error_slopes(errors: Sequence[IdentityErrors]) -> Dict[str, float]:
    """Least-squares log-log slope of each residual against dt (nan when a residual vanishes)."""
    log_dt = np.log([e.dt for e in errors])
    out = {}
    for name in ('commutator', 'average'):
        values = np.array([getattr(e, name) for e in errors])
        out[name] = float(np.polyfit(log_dt, np.log(values), 1)[0]) if np.all(values > 0) else float('nan')
    return out


def position_momentum_pair(dim: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """A = x sigma_y and B = p sigma_z on a dim-level mode times a qubit."""
    a = destroy(dim)
    x = (a + a.conj().T) / np.sqrt(2)
    p = 1j * (a.conj().T - a) / np.sqrt(2)
    sigma_y = np.array([[0, -1j], [1j, 0]])
    sigma_z = np.diag([1.0, -1.0]).astype(complex)
    return np.kron(x, sigma_y), np.kron(p, sigma_z)


__all__ = [
    'IdentityErrors', 'verify_commutator_identities', 'group_commutator_error', 'symmetric_average_error',
    'error_slopes', 'position_momentum_pair',
]
