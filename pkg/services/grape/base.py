"""
Driven-transmon model shared by the pulse optimizer, pulse selection and scheduling.
"""

import os
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from services.dynamics import CollapseSet, Jump, TimeGrid, gate_infidelity_closed, gate_infidelity_open, \
    propagate_superoperator, qubit_projector
from services.errors import InvalidArgumentError
from services.hilbert import destroy
from services.model import DecoherenceRates, hz


class TransmonControl:
    """
    Isolated transmon ancilla driven in both quadratures.

    H(t) = K_q/2 q^dag^2 q^2 + delta q^dag q + eps_I(t) (q^dag + q) + i eps_Q(t) (q^dag - q)

    Holds the ladder operators and control Hamiltonians, and computes
    piecewise-constant propagators over a batch of detunings together with the
    closed and open gate infidelities against X_theta.
    """

    # Default values from environment variables
    DEFAULT_DT = float(os.getenv('BOSONIC_CTRL_DT_NS', '0.5')) * 1e-9
    DEFAULT_LEVELS = int(os.getenv('BOSONIC_CTRL_TRANSMON_LEVELS', '4'))
    DEFAULT_MAX_AMPLITUDE = hz(100e6)

    def __init__(self, K_q: float, levels: Optional[int] = None, dt: Optional[float] = None):
        """
        Initialize the transmon model.

        Args:
            K_q: Anharmonicity (rad/s, negative for a transmon)
            levels: Transmon truncation (defaults to BOSONIC_CTRL_TRANSMON_LEVELS)
            dt: Envelope sample spacing in seconds (defaults to BOSONIC_CTRL_DT_NS)

        Raises:
            InvalidArgumentError: If K_q is zero or non-finite, or levels < 2
        """
        if not np.isfinite(K_q) or K_q == 0:
            raise InvalidArgumentError(f"anharmonicity must be finite and non-zero, got {K_q}")
        self.K_q = float(K_q)
        self.levels = levels or self.DEFAULT_LEVELS
        self.dt = dt or self.DEFAULT_DT
        if self.levels < 2:
            raise InvalidArgumentError(f"transmon needs at least 2 levels, got {self.levels}")

        q = destroy(self.levels)
        qd = q.conj().T
        self.q = q
        self.n = qd @ q
        self.drive_i = qd + q
        self.drive_q = 1j * (qd - q)
        self.static = 0.5 * self.K_q * (qd @ qd @ q @ q)
        self.projector = qubit_projector(self.levels)

    @classmethod
    def from_config(cls, pulse: Mapping[str, Any], K_q: float) -> "TransmonControl":
        dt_ns = pulse.get('dt_ns')
        return cls(K_q, levels=pulse.get('transmon_levels'), dt=dt_ns * 1e-9 if dt_ns else None)

    def with_levels(self, levels: int) -> "TransmonControl":
        return TransmonControl(self.K_q, levels=levels, dt=self.dt)

    def target(self, theta: float) -> np.ndarray:
        """X_theta on the qubit levels, identity above."""
        u = np.eye(self.levels, dtype=complex)
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        u[:2, :2] = [[c, -1j * s], [-1j * s, c]]
        return u

    def hamiltonians(self, samples: np.ndarray, deltas: Sequence[float]) -> np.ndarray:
        """Stack of segment Hamiltonians with shape (n_deltas, n_samples, levels, levels)."""
        samples = np.asarray(samples, dtype=complex)
        deltas = np.asarray(deltas, dtype=float)
        drive = (samples.real[:, None, None] * self.drive_i[None]
                 + samples.imag[:, None, None] * self.drive_q[None])
        detuning = deltas[:, None, None] * self.n[None]
        return self.static[None, None] + detuning[:, None] + drive[None]

    def segment_eigensystems(self, samples: np.ndarray, deltas: Sequence[float]):
        """Batched eigendecomposition of every segment Hamiltonian."""
        return np.linalg.eigh(self.hamiltonians(samples, deltas))

    def propagators(self, samples: np.ndarray, dt: float, deltas: Sequence[float]) -> np.ndarray:
        """Full propagators U(t_g) for each detuning, shape (n_deltas, levels, levels)."""
        lam, vec = self.segment_eigensystems(samples, deltas)
        steps = (vec * np.exp(-1j * dt * lam)[..., None, :]) @ np.swapaxes(vec.conj(), -1, -2)
        total = np.broadcast_to(np.eye(self.levels, dtype=complex), (len(deltas), self.levels, self.levels)).copy()
        for k in range(steps.shape[1]):
            total = steps[:, k] @ total
        return total

    def propagator(self, env, delta: float = 0.0) -> np.ndarray:
        return self.propagators(env.samples, env.dt, [delta])[0]

    def infidelities(self, env, deltas: Sequence[float], theta: float) -> np.ndarray:
        """Closed-system gate infidelity at each detuning."""
        target = self.target(theta)
        return np.array([
            gate_infidelity_closed(u, target, self.projector)
            for u in self.propagators(env.samples, env.dt, deltas)
        ])

    def infidelity(self, env, delta: float, theta: float) -> float:
        return float(self.infidelities(env, [delta], theta)[0])

    def hamiltonian(self, env, delta: float):
        """H(t) builder for the generic propagators."""
        base = self.static + delta * self.n

        def build(t: float) -> np.ndarray:
            k = int(np.floor(t / env.dt + 1e-9))
            eps = env.samples[k] if 0 <= k < env.n_samples else 0j
            return base + eps.real * self.drive_i + eps.imag * self.drive_q

        return build

    def collapse(self, rates: DecoherenceRates) -> CollapseSet:
        """sqrt(gamma) q and sqrt(2 gamma_phi) q^dag q."""
        return CollapseSet((
            Jump(rates.gamma, operator=self.q, label='ancilla-decay'),
            Jump(2 * rates.gamma_phi, operator=self.n, label='ancilla-dephasing'),
        ))

    def superoperator(self, env, delta: float, rates: DecoherenceRates) -> np.ndarray:
        grid = TimeGrid(env.dt, env.n_samples)
        return propagate_superoperator(self.hamiltonian(env, delta), self.collapse(rates), self.levels, grid)

    def open_infidelities(self, env, deltas: Sequence[float], theta: float, rates: DecoherenceRates) -> np.ndarray:
        """Open-system gate infidelity at each detuning."""
        target = self.target(theta)
        return np.array([
            gate_infidelity_open(self.superoperator(env, d, rates), target, self.projector) for d in deltas
        ])
