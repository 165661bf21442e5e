"""
ECD circuits: ideal gates, rotation decomposition and circuit-level compilation.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from services.dynamics import default_workers, state_transfer_infidelity
from services.errors import CompilationError, InvalidArgumentError
from services.hilbert import QuantumState, displacement_operator

logger = logging.getLogger(__name__)

CIRCUIT_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 1e-3
DEFAULT_MAX_BLOCKS = 12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class ECDBlock:
    """One unit block: ECD on mode 1, rotation, ECD on mode 2, rotation."""
    beta1: complex = 0j
    beta2: complex = 0j
    phi1: float = 0.0
    phi2: float = 0.0
    theta1: float = 0.0
    theta2: float = 0.0

    def __post_init__(self):
        values = [self.beta1.real, self.beta1.imag, self.beta2.real, self.beta2.imag,
                  self.phi1, self.phi2, self.theta1, self.theta2]
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError(f"circuit parameters must be finite, got {values}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'beta1': [self.beta1.real, self.beta1.imag],
            'beta2': [self.beta2.real, self.beta2.imag],
            'phi1': self.phi1, 'phi2': self.phi2,
            'theta1': self.theta1, 'theta2': self.theta2,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ECDBlock":
        return cls(
            beta1=complex(*data['beta1']), beta2=complex(*data['beta2']),
            phi1=float(data['phi1']), phi2=float(data['phi2']),
            theta1=float(data['theta1']), theta2=float(data['theta2']),
        )


@dataclass(frozen=True)
class ECDCircuit:
    """Sequence of N >= 1 unit blocks."""
    blocks: Tuple[ECDBlock, ...]
    infidelity: Optional[float] = None

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise InvalidArgumentError("a circuit needs at least one block")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def betas(self, mode: int) -> List[complex]:
        return [b.beta1 if mode == 0 else b.beta2 for b in self.blocks]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format_version': CIRCUIT_FORMAT_VERSION,
            'n_blocks': self.n_blocks,
            'infidelity': self.infidelity,
            'blocks': [b.to_dict() for b in self.blocks],
        }

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ECDCircuit":
        version = data.get('format_version')
        if version != CIRCUIT_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported circuit format_version {version!r}")
        return cls(tuple(ECDBlock.from_dict(b) for b in data['blocks']), data.get('infidelity'))

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ECDCircuit":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ecd_unitary(beta: complex, dim: int) -> np.ndarray:
    """D(beta/2) x |e><g| + D(-beta/2) x |g><e| on ancilla (2 levels) x mode."""
    e_g = np.array([[0, 0], [1, 0]], dtype=complex)
    return np.kron(e_g, displacement_operator(beta / 2, dim)) + np.kron(e_g.T, displacement_operator(-beta / 2, dim))


def rotation_matrix(theta: float, phi: float) -> np.ndarray:
    """R_phi(theta) = exp[-i theta/2 (sigma_x cos phi + sigma_y sin phi)]."""
    axis = np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y
    return np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * axis


def z_matrix(angle: float) -> np.ndarray:
    """Z(angle) = exp(-i angle sigma_z / 2), sigma_z = |g><g| - |e><e|."""
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


@dataclass(frozen=True)
class RotationStep:
    """Either a virtual Z(angle) or a physical X_pi/2 pulse."""
    kind: str
    angle: float = 0.0

    def matrix(self) -> np.ndarray:
        if self.kind == 'z':
            return z_matrix(self.angle)
        return rotation_matrix(np.pi / 2, 0.0)


def decompose_rotation(theta: float, phi: float) -> List[RotationStep]:
    """
    Time-ordered steps realizing R_phi(theta) up to a global phase.

    R_phi(theta) = Z(phi - pi/2) X_pi/2 Z(pi - theta) X_pi/2 Z(-phi - pi/2)
    """
    return [
        RotationStep('z', -phi - np.pi / 2),
        RotationStep('x90'),
        RotationStep('z', np.pi - theta),
        RotationStep('x90'),
        RotationStep('z', phi - np.pi / 2),
    ]


def compose_steps(steps: Sequence[RotationStep]) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for step in steps:
        u = step.matrix() @ u
    return u


def _apply_mode(psi: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, psi, axes=([1], [axis])), 0, axis)


def _apply_ecd(psi: np.ndarray, beta: complex, mode: int) -> np.ndarray:
    dim = psi.shape[mode + 1]
    if beta == 0:
        return psi[::-1].copy()
    out = np.empty_like(psi)
    out[1] = _apply_mode(psi[0], displacement_operator(beta / 2, dim), mode)
    out[0] = _apply_mode(psi[1], displacement_operator(-beta / 2, dim), mode)
    return out


def apply_circuit(circuit: ECDCircuit, psi0: QuantumState) -> QuantumState:
    """Ideal-gate action of the circuit on an ancilla (2) x cavity x cavity state."""
    dims = tuple(psi0.dims)
    if len(dims) != 3 or dims[0] != 2:
        raise InvalidArgumentError(f"ideal circuits act on (2, d1, d2) states, got dims {dims}")
    psi = psi0.data.reshape(dims)
    for block in circuit.blocks:
        psi = _apply_ecd(psi, block.beta1, 0)
        psi = np.tensordot(rotation_matrix(block.theta1, block.phi1), psi, axes=([1], [0]))
        psi = _apply_ecd(psi, block.beta2, 1)
        psi = np.tensordot(rotation_matrix(block.theta2, block.phi2), psi, axes=([1], [0]))
    return QuantumState.ket(psi.reshape(-1), dims)


@dataclass(frozen=True)
class CompilationTarget:
    """
    State-transfer task for the ideal-gate model.

    Attributes:
        initial: Initial ket on (2, d1, d2)
        target: Target ket on the same dims
        active_modes: Modes that receive conditional displacements; others keep beta = 0
    """
    initial: QuantumState
    target: QuantumState
    active_modes: Tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if tuple(self.initial.dims) != tuple(self.target.dims):
            raise InvalidArgumentError("initial and target states must share dims")


class _CircuitObjective:
    def __init__(self, target: CompilationTarget, n_blocks: int):
        self.target = target
        self.n_blocks = n_blocks
        self.per_block = 4 + 2 * len(target.active_modes)

    def circuit(self, x: np.ndarray) -> ECDCircuit:
        blocks = []
        for n in range(self.n_blocks):
            chunk = x[n * self.per_block:(n + 1) * self.per_block]
            phi1, phi2, theta1, theta2 = chunk[:4]
            betas = [0j, 0j]
            for j, mode in enumerate(self.target.active_modes):
                betas[mode] = complex(chunk[4 + 2 * j], chunk[5 + 2 * j])
            blocks.append(ECDBlock(betas[0], betas[1], float(phi1), float(phi2), float(theta1), float(theta2)))
        return ECDCircuit(tuple(blocks))

    def __call__(self, x: np.ndarray) -> float:
        final = apply_circuit(self.circuit(x), self.target.initial)
        return state_transfer_infidelity(final, self.target.target)


def _run_start(objective: _CircuitObjective, x0: np.ndarray, max_iter: int) -> Tuple[float, np.ndarray]:
    result = minimize(objective, x0, method='L-BFGS-B', options={'maxiter': max_iter, 'ftol': 1e-14, 'gtol': 1e-10})
    return float(result.fun), result.x


def _starts(objective: _CircuitObjective, n_starts: int, seed: int, beta_scale: float) -> List[np.ndarray]:
    size = objective.n_blocks * objective.per_block
    starts = [np.zeros(size)]
    rng = np.random.default_rng(seed)
    for _ in range(n_starts - 1):
        x = np.empty((objective.n_blocks, objective.per_block))
        x[:, :4] = rng.uniform(-np.pi, np.pi, (objective.n_blocks, 4))
        x[:, 4:] = rng.normal(0.0, beta_scale, (objective.n_blocks, objective.per_block - 4))
        starts.append(x.reshape(-1))
    return starts


def compile_circuit(target: CompilationTarget, n_blocks: int = 2, seed: int = 0,
                    threshold: float = DEFAULT_THRESHOLD, max_blocks: int = DEFAULT_MAX_BLOCKS,
                    n_starts: int = 8, max_iter: int = 2000, beta_scale: float = 1.0,
                    workers: Optional[int] = None) -> ECDCircuit:
    """
    Find circuit parameters whose ideal-gate infidelity is below threshold.

    Multi-start L-BFGS-B (all-zero start first) at N blocks; on failure N grows by 2
    up to max_blocks.

    Args:
        target: State-transfer task
        n_blocks: Initial block count N >= 1
        seed: Seed for the random starts
        threshold: Accepted state-transfer infidelity
        max_blocks: Largest N tried
        n_starts: Starts per N
        max_iter: Iterations per start
        beta_scale: Standard deviation of the random initial displacements
        workers: Parallel workers

    Returns:
        ECDCircuit with its ideal-model infidelity recorded

    Raises:
        CompilationError: If no N up to max_blocks reaches threshold (best circuit attached)
    """
    if n_blocks < 1:
        raise InvalidArgumentError(f"block count must be >= 1, got {n_blocks}")
    best: Optional[ECDCircuit] = None
    n = n_blocks
    while n <= max_blocks:
        objective = _CircuitObjective(target, n)
        starts = _starts(objective, n_starts, seed + n, beta_scale)
        n_jobs = max(1, min(workers or default_workers(), len(starts)))
        results = Parallel(n_jobs=n_jobs)(delayed(_run_start)(objective, x0, max_iter) for x0 in starts)
        cost, x = min(results, key=lambda r: r[0])
        circuit = ECDCircuit(objective.circuit(x).blocks, infidelity=cost)
        logger.info("N = %d: best ideal infidelity %.3e", n, cost)
        if best is None or cost < best.infidelity:
            best = circuit
        if cost <= threshold:
            return circuit
        n += 2
    raise CompilationError(
        f"no circuit with up to {max_blocks} blocks reached infidelity {threshold:.1e} (best {best.infidelity:.3e})",
        best=best, infidelity=best.infidelity,
    )


__all__ = [
    'ECDBlock', 'ECDCircuit', 'CompilationTarget', 'RotationStep',
    'ecd_unitary', 'rotation_matrix', 'z_matrix', 'decompose_rotation', 'compose_steps',
    'apply_circuit', 'compile_circuit',
]
