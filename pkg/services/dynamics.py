"""
Time evolution and gate/state metrics.

Closed systems step with the exact exponential of the interval-midpoint
Hamiltonian; open systems use a dense row-stacked superoperator (small spaces)
or Monte-Carlo wave-function trajectories (any size).
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from services.errors import InvalidArgumentError, SimulationError, UseMonteCarloError
from services.hilbert import OperatorSet, QuantumState, displacement_operator, mode_operators
from services.model import DerivedNonlinearities, DisplacedFrameHamiltonian, RotatingFrameHamiltonian, solve_trajectory

logger = logging.getLogger(__name__)

HamiltonianBuilder = Callable[[float], np.ndarray]
Kicks = Mapping[int, np.ndarray]

LINDBLAD_MAX_DIM = 64
OPEN_GATE_MAX_DIM = 5
DENSE_STEP_MAX_DIM = 96
NORM_TOL = 1e-9


def default_workers() -> int:
    """Worker budget from BOSONIC_CTRL_WORKERS, falling back to the CPU count."""
    value = os.getenv('BOSONIC_CTRL_WORKERS')
    if value:
        try:
            return max(1, int(value))
        except ValueError as e:
            raise InvalidArgumentError(f"BOSONIC_CTRL_WORKERS must be an integer, got {value!r}") from e
    return os.cpu_count() or 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n_steps intervals of length dt (s)."""
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 0:
            raise InvalidArgumentError(f"invalid time grid dt={self.dt}, n_steps={self.n_steps}")

    @property
    def duration(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def midpoint(self, k: int) -> float:
        return (k + 0.5) * self.dt

    @classmethod
    def covering(cls, duration: float, dt: float) -> "TimeGrid":
        return cls(dt=dt, n_steps=int(round(duration / dt)))


@dataclass(frozen=True)
class Jump:
    """Jump operator sqrt(rate) * C, with C fixed or built per time."""
    rate: float
    operator: Optional[np.ndarray] = None
    builder: Optional[Callable[[float], np.ndarray]] = None
    label: str = ''

    def at(self, t: float) -> np.ndarray:
        op = self.builder(t) if self.builder is not None else self.operator
        return np.sqrt(self.rate) * op


@dataclass(frozen=True)
class CollapseSet:
    """Jump operators of a Lindblad master equation."""
    jumps: Tuple[Jump, ...] = ()

    def __post_init__(self):
        for jump in self.jumps:
            if jump.rate < 0 or not np.isfinite(jump.rate):
                raise InvalidArgumentError(f"jump rate must be non-negative, got {jump.rate} ({jump.label})")

    @property
    def active(self) -> Tuple[Jump, ...]:
        return tuple(j for j in self.jumps if j.rate > 0)

    @property
    def is_empty(self) -> bool:
        return not self.active

    def operators(self, t: float) -> List[np.ndarray]:
        return [j.at(t) for j in self.active]

    def labels(self) -> List[str]:
        return [j.label for j in self.active]

    @classmethod
    def standard(cls, ops: OperatorSet, rates: Any, eta: Optional[Any] = None) -> "CollapseSet":
        """
        gamma D[q], 2 gamma_phi D[q^dag q], kappa_i D[a_i], 2 kappa_phi_i D[(a_i^dag + eta_i^*)(a_i + eta_i)].

        Args:
            ops: Composite operator set
            rates: DecoherenceRates (dressed)
            eta: Optional damped Trajectory; without it the cavity dephasing operator is a^dag a
        """
        jumps = [
            Jump(rates.gamma, operator=ops.q, label='ancilla-decay'),
            Jump(2 * rates.gamma_phi, operator=ops.n_q, label='ancilla-dephasing'),
        ]
        for i in range(2):
            jumps.append(Jump(rates.kappa[i], operator=ops.a[i], label=f'cavity{i + 1}-decay'))
            if eta is None:
                jumps.append(Jump(2 * rates.kappa_phi[i], operator=ops.n[i], label=f'cavity{i + 1}-dephasing'))
            else:
                jumps.append(Jump(2 * rates.kappa_phi[i], builder=_displaced_dephasing(ops, eta, i),
                                  label=f'cavity{i + 1}-dephasing'))
        return cls(tuple(jumps))


def _displaced_dephasing(ops: OperatorSet, eta: Any, mode: int) -> Callable[[float], np.ndarray]:
    a = ops.a[mode]
    ad = a.conj().T

    def build(t: float) -> np.ndarray:
        e = eta.at(t)[mode]
        return (ad + np.conj(e) * ops.identity) @ (a + e * ops.identity)

    return build


@dataclass
class PropagationResult:
    """
    Outcome of a propagation.

    Attributes:
        final: Final state
        checkpoints: (step, state) pairs recorded during the run
        seeds: Per-trajectory spawn keys (Monte Carlo only)
        jumps: Per-trajectory list of (step, channel label) records (Monte Carlo only)
    """
    final: QuantumState
    checkpoints: List[Tuple[int, QuantumState]] = field(default_factory=list)
    seeds: List[Tuple[int, ...]] = field(default_factory=list)
    jumps: List[List[Tuple[int, str]]] = field(default_factory=list)


def _step(h: np.ndarray, psi: np.ndarray, dt: float) -> np.ndarray:
    if h.shape[0] <= DENSE_STEP_MAX_DIM:
        return expm(-1j * dt * h) @ psi
    return expm_multiply(-1j * dt * h, psi)


def _kick(kicks: Optional[Kicks], k: int, psi: np.ndarray) -> np.ndarray:
    if not kicks or k not in kicks:
        return psi
    op = kicks[k]
    if op.ndim == 1:
        return op * psi if psi.ndim == 1 else op[:, None] * psi
    return op @ psi


def propagate_closed(hamiltonian: HamiltonianBuilder, psi0: QuantumState, grid: TimeGrid,
                     checkpoints: Optional[Sequence[int]] = None, kicks: Optional[Kicks] = None) -> PropagationResult:
    """
    Schrodinger evolution on a uniform grid.

    Each step applies exp(-i H(t_k + dt/2) dt). Optional kicks (diagonal phase vectors
    or matrices) are applied before the step of the same index; a kick at n_steps acts
    after the last step.

    Args:
        hamiltonian: H(t) builder
        psi0: Normalized initial ket
        grid: Time grid
        checkpoints: Step indices after which the state is recorded (0 = initial state)
        kicks: Optional {step: operator}

    Returns:
        PropagationResult with the final ket
    """
    if psi0.kind != 'ket':
        raise InvalidArgumentError("propagate_closed expects a state vector")
    marks = set(checkpoints or [])
    psi = psi0.data.copy()
    recorded: List[Tuple[int, QuantumState]] = []
    if 0 in marks:
        recorded.append((0, QuantumState.ket(psi, psi0.dims)))
    for k in range(grid.n_steps):
        psi = _kick(kicks, k, psi)
        psi = _step(hamiltonian(grid.midpoint(k)), psi, grid.dt)
        if k + 1 in marks:
            recorded.append((k + 1, QuantumState.ket(psi, psi0.dims)))
    psi = _kick(kicks, grid.n_steps, psi)
    drift = abs(np.linalg.norm(psi) - np.linalg.norm(psi0.data))
    if drift > NORM_TOL:
        logger.warning("norm drift %.2e after %d steps", drift, grid.n_steps)
    return PropagationResult(final=QuantumState.ket(psi, psi0.dims), checkpoints=recorded)


def propagate_unitary(hamiltonian: HamiltonianBuilder, dim: int, grid: TimeGrid,
                      columns: Optional[np.ndarray] = None, kicks: Optional[Kicks] = None) -> np.ndarray:
    """
    Time-ordered propagator U(t_f) as a dense matrix.

    With `columns` (shape (dim, m)) only U @ columns is carried, which is what
    subspace gate metrics need. Kicks follow the propagate_closed convention.
    """
    u = np.eye(dim, dtype=complex) if columns is None else np.array(columns, dtype=complex)
    for k in range(grid.n_steps):
        u = _kick(kicks, k, u)
        u = expm(-1j * grid.dt * hamiltonian(grid.midpoint(k))) @ u
    return _kick(kicks, grid.n_steps, u)


def lindblad_superoperator(h: np.ndarray, collapse_ops: Sequence[np.ndarray]) -> np.ndarray:
    """
    Generator of d vec(rho)/dt for row-stacked vec(rho), using vec(A rho B) = (A kron B^T) vec(rho).
    """
    d = h.shape[0]
    eye = np.eye(d, dtype=complex)
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in collapse_ops:
        cdc = c.conj().T @ c
        gen = gen + np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return gen


def propagate_superoperator(hamiltonian: HamiltonianBuilder, collapse: CollapseSet, dim: int,
                            grid: TimeGrid) -> np.ndarray:
    """Time-ordered dynamical map on row-stacked density matrices."""
    if dim > LINDBLAD_MAX_DIM:
        raise UseMonteCarloError(f"dimension {dim} exceeds the dense superoperator limit {LINDBLAD_MAX_DIM}")
    total = np.eye(dim * dim, dtype=complex)
    for k in range(grid.n_steps):
        t = grid.midpoint(k)
        total = expm(grid.dt * lindblad_superoperator(hamiltonian(t), collapse.operators(t))) @ total
    return total


def propagate_lindblad(hamiltonian: HamiltonianBuilder, collapse: CollapseSet, rho0: QuantumState,
                       grid: TimeGrid, checkpoints: Optional[Sequence[int]] = None) -> PropagationResult:
    """
    Lindblad evolution with dissipator D[C]rho = C rho C^dag - {C^dag C, rho}/2.

    Raises:
        UseMonteCarloError: If the Hilbert dimension exceeds 64
    """
    rho0 = rho0.to_density()
    d = rho0.dim
    if d > LINDBLAD_MAX_DIM:
        raise UseMonteCarloError(f"dimension {d} exceeds {LINDBLAD_MAX_DIM}; use monte_carlo instead")
    marks = set(checkpoints or [])
    vec = rho0.data.reshape(-1).copy()
    recorded: List[Tuple[int, QuantumState]] = []
    if 0 in marks:
        recorded.append((0, rho0))
    for k in range(grid.n_steps):
        t = grid.midpoint(k)
        vec = expm(grid.dt * lindblad_superoperator(hamiltonian(t), collapse.operators(t))) @ vec
        if k + 1 in marks:
            recorded.append((k + 1, QuantumState.dm(vec.reshape(d, d), rho0.dims)))
    rho = vec.reshape(d, d)
    drift = abs(np.trace(rho) - np.trace(rho0.data))
    if drift > NORM_TOL:
        logger.warning("trace drift %.2e after %d steps", drift, grid.n_steps)
    return PropagationResult(final=QuantumState.dm(rho, rho0.dims), checkpoints=recorded)


def _trajectory(hamiltonian: HamiltonianBuilder, collapse: CollapseSet, psi0: np.ndarray, grid: TimeGrid,
                seed_seq: np.random.SeedSequence, kicks: Optional[Kicks]) -> Tuple[np.ndarray, List[Tuple[int, str]]]:
    rng = np.random.default_rng(seed_seq)
    labels = collapse.labels()
    psi = psi0.copy()
    threshold = rng.random()
    record: List[Tuple[int, str]] = []
    for k in range(grid.n_steps):
        t = grid.midpoint(k)
        psi = _kick(kicks, k, psi)
        ops = collapse.operators(t)
        h_eff = hamiltonian(t)
        for c in ops:
            h_eff = h_eff - 0.5j * (c.conj().T @ c)
        psi = _step(h_eff, psi, grid.dt)
        if np.vdot(psi, psi).real > threshold or not ops:
            continue
        candidates = [c @ psi for c in ops]
        weights = np.array([np.vdot(v, v).real for v in candidates])
        total = weights.sum()
        if total <= 0:
            continue
        channel = int(np.searchsorted(np.cumsum(weights) / total, rng.random(), side='right'))
        channel = min(channel, len(ops) - 1)
        psi = candidates[channel] / np.sqrt(weights[channel])
        record.append((k + 1, labels[channel]))
        threshold = rng.random()
    psi = _kick(kicks, grid.n_steps, psi)
    return psi / np.linalg.norm(psi), record


def _trajectory_chunk(hamiltonian, collapse, psi0, grid, seeds, kicks):
    return [_trajectory(hamiltonian, collapse, psi0, grid, s, kicks) for s in seeds]


def monte_carlo(hamiltonian: HamiltonianBuilder, collapse: CollapseSet, psi0: QuantumState, grid: TimeGrid,
                n_traj: int, seed: int, workers: Optional[int] = None,
                kicks: Optional[Kicks] = None) -> PropagationResult:
    """
    Trajectory-averaged density matrix from quantum jump unravelling.

    Each trajectory draws from its own child of SeedSequence(seed), and final states
    are summed in trajectory-index order, so the result does not depend on the
    number of workers.

    Args:
        hamiltonian: H(t) builder
        collapse: Jump operators
        psi0: Initial ket
        grid: Time grid
        n_traj: Number of trajectories (>= 1)
        seed: Root seed
        workers: Parallel worker count (defaults to the BOSONIC_CTRL_WORKERS budget)

    Returns:
        PropagationResult with the averaged density matrix, spawn keys and jump records
    """
    if n_traj < 1:
        raise InvalidArgumentError(f"n_traj must be >= 1, got {n_traj}")
    if psi0.kind != 'ket':
        raise InvalidArgumentError("monte_carlo expects a state vector")
    children = np.random.SeedSequence(seed).spawn(n_traj)
    n_jobs = min(workers or default_workers(), n_traj)
    chunks = [children[i::n_jobs] for i in range(n_jobs)]
    try:
        outputs = Parallel(n_jobs=n_jobs)(
            delayed(_trajectory_chunk)(hamiltonian, collapse, psi0.data, grid, chunk, kicks) for chunk in chunks
        )
    except (ValueError, np.linalg.LinAlgError) as e:
        raise SimulationError(f"Monte-Carlo propagation failed: {e}") from e
    # undo the round-robin split so the reduction runs in trajectory-index order
    ordered: List[Tuple[np.ndarray, List[Tuple[int, str]]]] = [None] * n_traj
    for j, chunk_out in enumerate(outputs):
        for i, item in enumerate(chunk_out):
            ordered[j + i * n_jobs] = item
    d = psi0.dim
    rho = np.zeros((d, d), dtype=complex)
    for psi, _ in ordered:
        rho += np.outer(psi, psi.conj())
    rho /= n_traj
    logger.debug("monte carlo: %d trajectories, %d jumps", n_traj, sum(len(r) for _, r in ordered))
    return PropagationResult(
        final=QuantumState.dm(rho, psi0.dims),
        seeds=[tuple(c.spawn_key) for c in children],
        jumps=[r for _, r in ordered],
    )


def qubit_projector(dim: int) -> np.ndarray:
    """Projector onto the two lowest levels of a dim-level ancilla."""
    p = np.zeros((dim, dim), dtype=complex)
    p[0, 0] = p[1, 1] = 1.0
    return p


def gate_infidelity_closed(u: np.ndarray, u_target: np.ndarray, projector: np.ndarray) -> float:
    """
    1 - |Tr[P U_target^dag U]|^2 / Tr[P]^2.

    For the qubit projector Tr[P]^2 = 4; for P kron I_dc it is 4 d_c^2.
    """
    norm = np.real(np.trace(projector)) ** 2
    overlap = np.trace(projector @ u_target.conj().T @ u)
    return float(np.clip(1.0 - abs(overlap) ** 2 / norm, 0.0, 1.0))


def gate_infidelity_open(superop: np.ndarray, u_target: np.ndarray, projector: np.ndarray) -> float:
    """
    1 - Tr[P_super L_target^dag L] / Tr[P]^2 with L_target = U kron U^* (row stacking).

    Raises:
        InvalidArgumentError: If the ancilla has more than 5 levels
    """
    d = u_target.shape[0]
    if d > OPEN_GATE_MAX_DIM:
        raise InvalidArgumentError(f"open-system gate infidelity is limited to {OPEN_GATE_MAX_DIM} levels, got {d}")
    target = np.kron(u_target, u_target.conj())
    superprojector = np.kron(projector, projector.conj())
    norm = np.real(np.trace(projector)) ** 2
    value = np.real(np.trace(superprojector @ target.conj().T @ superop))
    return float(np.clip(1.0 - value / norm, 0.0, 1.0))


def composite_gate_infidelity(u: np.ndarray, u_target_ancilla: np.ndarray, d_c: int) -> float:
    """Gate infidelity on ancilla x cavity against U_target kron I, normalized by 4 d_c^2."""
    d_q = u_target_ancilla.shape[0]
    projector = np.kron(qubit_projector(d_q), np.eye(d_c))
    target = np.kron(u_target_ancilla, np.eye(d_c))
    return gate_infidelity_closed(u, target, projector)


def state_transfer_infidelity(final: Union[QuantumState, np.ndarray], target: Union[QuantumState, np.ndarray]) -> float:
    """
    1 - |<psi_f|psi_target>|^2, or 1 - <psi_target|rho|psi_target> for a density matrix.
    """
    target_vec = target.data if isinstance(target, QuantumState) else np.asarray(target)
    if isinstance(final, QuantumState) and final.kind == 'dm':
        value = np.real(np.vdot(target_vec, final.data @ target_vec))
    else:
        final_vec = final.data if isinstance(final, QuantumState) else np.asarray(final)
        value = abs(np.vdot(target_vec, final_vec)) ** 2
    return float(np.clip(1.0 - value, 0.0, 1.0))


def monte_carlo_stderr(value: float, n_traj: int) -> float:
    """
    Upper bound sqrt(I (1 - I) / n) on the standard error of a trajectory-averaged infidelity.

    Each trajectory contributes a fidelity in [0, 1], so its variance cannot exceed
    I (1 - I).
    """
    if n_traj < 1:
        raise InvalidArgumentError(f"n_traj must be >= 1, got {n_traj}")
    value = float(np.clip(value, 0.0, 1.0))
    return float(np.sqrt(value * (1.0 - value) / n_traj))


def frame_equivalence(nl: DerivedNonlinearities, drives: Sequence[np.ndarray], dt: float, psi0: QuantumState,
                      checkpoints: Optional[Sequence[int]] = None) -> Dict[int, float]:
    """
    Infidelity between rotating-frame and displaced-frame propagation of the same drive.

    Both frames start from psi0 with alpha(0) = 0. The rotating frame is fed each
    sample averaged with its successor, which is the drive the trajectory integrator
    sees at the interval midpoint. Displaced-frame states are mapped back with
    D(alpha_1) D(alpha_2) before the overlap is taken, so dropped c-number terms
    only contribute a global phase.

    Args:
        nl: Nonlinearities (sixth-order terms are ignored in both frames)
        drives: Two complex cavity drive sample arrays (rad/s) on a shared grid
        dt: Grid step (s)
        psi0: Initial ket on (d_q, d_1, d_2)
        checkpoints: Step indices to compare; the final step is always included

    Returns:
        {step: 1 - |<psi_rot|D(alpha) psi_disp>|^2}

    Raises:
        IntegrationError: If the classical trajectory fails its step check
    """
    nl = replace(nl, sixth_order=False)
    samples = [np.asarray(d, dtype=complex) for d in drives]
    n_steps = len(samples[0])
    traj = solve_trajectory(samples, dt, nl)
    ops = mode_operators(psi0.dims)
    averaged = [0.5 * (s + np.append(s[1:], 0.0)) for s in samples]
    grid = TimeGrid(dt, n_steps)
    marks = sorted(set(checkpoints or ()) | {n_steps})
    rotating = propagate_closed(RotatingFrameHamiltonian(nl, ops, averaged, dt=dt), psi0, grid, marks)
    displaced = propagate_closed(DisplacedFrameHamiltonian(traj, nl, ops, dt=dt), psi0, grid, marks)

    def shift(alpha: np.ndarray) -> np.ndarray:
        factors = [np.eye(ops.dims[0], dtype=complex)]
        for a, d in zip(alpha, ops.dims[1:]):
            factors.append(displacement_operator(a, d) if d > 1 else np.eye(1, dtype=complex))
        return np.kron(np.kron(factors[0], factors[1]), factors[2])

    out: Dict[int, float] = {}
    for (step, rot), (_, disp) in zip(rotating.checkpoints, displaced.checkpoints):
        moved = shift(traj.alpha[:, step]) @ disp.data
        out[step] = state_transfer_infidelity(QuantumState.ket(moved, disp.dims), rot)
    logger.debug("frame equivalence: worst infidelity %.3e over %d checkpoints", max(out.values()), len(out))
    return out


def robustness_metrics(values: Sequence[float], weights: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """Weighted mean and standard deviation of infidelities over a detuning sample."""
    v = np.asarray(values, dtype=float)
    w = np.full(v.shape, 1.0 / len(v)) if weights is None else np.asarray(weights, dtype=float)
    mean = float(np.sum(w * v))
    std = float(np.sqrt(np.sum(w * (v - mean) ** 2)))
    return mean, std


def _interleave(data: np.ndarray) -> List[float]:
    flat = np.asarray(data, dtype=complex).reshape(-1)
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def write_checkpoints(path: Union[str, Path], result: PropagationResult, dt: float,
                      seed: Optional[int] = None) -> Path:
    """Dump checkpoints as JSON with interleaved re/im arrays and a dims/dt/seed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload: Dict[str, Any] = {
        'header': {'dims': list(result.final.dims), 'dt': dt, 'seed': seed, 'kind': result.final.kind},
        'checkpoints': [
            {'step': step, 'time': step * dt, 'data': _interleave(state.data)} for step, state in result.checkpoints
        ],
        'final': _interleave(result.final.data),
    }
    path.write_text(json.dumps(payload))
    return path


def read_checkpoints(path: Union[str, Path]) -> Dict[str, Any]:
    payload = json.loads(Path(path).read_text())
    dims = payload['header']['dims']
    kind = payload['header']['kind']

    def rebuild(values: List[float]) -> QuantumState:
        arr = np.asarray(values)
        data = arr[0::2] + 1j * arr[1::2]
        return QuantumState.ket(data, dims) if kind == 'ket' else QuantumState.dm(data, dims)

    payload['final'] = rebuild(payload['final'])
    payload['checkpoints'] = [(c['step'], rebuild(c['data'])) for c in payload['checkpoints']]
    return payload


__all__ = [
    'TimeGrid', 'Jump', 'CollapseSet', 'PropagationResult',
    'propagate_closed', 'propagate_unitary', 'propagate_lindblad', 'propagate_superoperator',
    'lindblad_superoperator', 'monte_carlo', 'gate_infidelity_closed', 'gate_infidelity_open',
    'composite_gate_infidelity', 'state_transfer_infidelity', 'robustness_metrics',
    'qubit_projector', 'write_checkpoints', 'read_checkpoints', 'default_workers', 'frame_equivalence',
    'monte_carlo_stderr',
]
