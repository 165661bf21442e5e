"""
Truncated Fock-space algebra, composite-state helpers and phase-space tomography.

Subsystem order is always ancilla (transmon) first, then cavity 1, then cavity 2.
Operators are dense complex numpy arrays; states are wrapped in QuantumState.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache, reduce
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import qutip
from scipy.linalg import expm
from scipy.special import gammaln

from services.errors import CutoffTooSmallError, InvalidArgumentError

logger = logging.getLogger(__name__)

Matrix = np.ndarray

# Extra levels used by the coherent-state convergence check.
CONVERGENCE_PADDING = 5
CONVERGENCE_TOL = 1e-8


@lru_cache(maxsize=64)
def destroy(dim: int) -> Matrix:
    """Annihilation operator with <m|a|n> = sqrt(n) delta_{m,n-1}. Returned array is read-only."""
    if dim < 1:
        raise InvalidArgumentError(f"dimension must be positive, got {dim}")
    a = np.ascontiguousarray(qutip.destroy(dim).full(), dtype=complex)
    a.flags.writeable = False
    return a


@lru_cache(maxsize=64)
def number(dim: int) -> Matrix:
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    n.flags.writeable = False
    return n


def fock_state(n: int, dim: int) -> np.ndarray:
    if not 0 <= n < dim:
        raise CutoffTooSmallError(f"Fock state |{n}> does not fit in dimension {dim}")
    ket = np.zeros(dim, dtype=complex)
    ket[n] = 1.0
    return ket


def displacement_operator(alpha: complex, dim: int) -> Matrix:
    """
    Displacement operator D(alpha) = exp(alpha a^dag - alpha^* a) on a truncated mode.

    Args:
        alpha: Complex displacement amplitude
        dim: Fock truncation (at least 2)

    Returns:
        Dense dim x dim unitary matrix

    Raises:
        InvalidArgumentError: If alpha is not finite or dim < 2
    """
    alpha = complex(alpha)
    if not np.isfinite(alpha.real) or not np.isfinite(alpha.imag):
        raise InvalidArgumentError(f"displacement amplitude must be finite, got {alpha}")
    if dim < 2:
        raise InvalidArgumentError(f"displacement needs dim >= 2, got {dim}")
    if alpha == 0:
        return np.eye(dim, dtype=complex)
    a = destroy(dim)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def _coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    if alpha == 0:
        return fock_state(0, dim)
    log_mag = n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1) - 0.5 * abs(alpha) ** 2
    return np.exp(log_mag) * np.exp(1j * np.angle(alpha) * n)


def _mean_photons(alpha: complex, dim: int) -> float:
    pop = np.abs(_coherent_amplitudes(alpha, dim)) ** 2
    return float(np.sum(np.arange(dim) * pop) / np.sum(pop))


def convergence_check(alpha: complex, dim: int) -> float:
    """
    Compare the truncated coherent state at dim with the one at dim + 5.

    Returns:
        Absolute change of the mean photon number

    Raises:
        CutoffTooSmallError: If the change exceeds 1e-8 (relative above one photon)
    """
    alpha = complex(alpha)
    if alpha == 0:
        return 0.0
    n_trunc = _mean_photons(alpha, dim)
    n_pad = _mean_photons(alpha, dim + CONVERGENCE_PADDING)
    change = abs(n_trunc - n_pad)
    if change > CONVERGENCE_TOL * max(1.0, n_pad):
        raise CutoffTooSmallError(
            f"coherent state with alpha={alpha} not converged at dim={dim} "
            f"(<n> changes by {change:.2e} at dim+{CONVERGENCE_PADDING})"
        )
    return change


def coherent_state(alpha: complex, dim: int) -> "QuantumState":
    """
    Normalized coherent state |alpha> on a single truncated mode.

    The cutoff must satisfy |alpha|^2 <= dim/4, and the mean photon number at dim
    must agree with the one at dim + 5 to 1e-8.

    Raises:
        CutoffTooSmallError: If either cutoff condition fails
    """
    alpha = complex(alpha)
    if abs(alpha) ** 2 > dim / 4:
        raise CutoffTooSmallError(
            f"|alpha|^2 = {abs(alpha) ** 2:.3f} exceeds dim/4 = {dim / 4:.2f}; increase the cutoff"
        )
    convergence_check(alpha, dim)
    ket = _coherent_amplitudes(alpha, dim)
    ket = ket / np.linalg.norm(ket)
    return QuantumState.ket(ket, (dim,))


def cutoff_for(alpha: complex, minimum: int = 4) -> int:
    """Smallest Fock cutoff at which coherent_state(alpha, dim) passes both guards."""
    dim = max(minimum, int(np.ceil(4 * abs(alpha) ** 2)))
    while True:
        try:
            coherent_state(alpha, dim)
            return dim
        except CutoffTooSmallError:
            dim += 1


def cat_normalization(alpha: complex) -> float:
    """Exact normalization of (|alpha>|alpha> + |-alpha>|-alpha>), valid down to alpha = 0."""
    return 1.0 / np.sqrt(2.0 + 2.0 * np.exp(-4.0 * abs(alpha) ** 2))


def cat_state(alpha: complex, dim: int, parity: int = 1) -> "QuantumState":
    """
    Single-mode cat N(|alpha> + parity |-alpha>).

    Raises:
        InvalidArgumentError: If parity is not +-1, or for the odd cat at alpha = 0
    """
    if parity not in (1, -1):
        raise InvalidArgumentError(f"parity must be +1 or -1, got {parity}")
    alpha = complex(alpha)
    if parity == -1 and alpha == 0:
        raise InvalidArgumentError("odd cat state is undefined at alpha = 0")
    ket = _coherent_amplitudes(alpha, dim) + parity * _coherent_amplitudes(-alpha, dim)
    return QuantumState.ket(ket / np.linalg.norm(ket), (dim,))


def bellcat_state(alpha: complex, dims: Tuple[int, int]) -> "QuantumState":
    """Two-mode Bell-cat N(|alpha,alpha> + |-alpha,-alpha>) on cavity dims (d1, d2)."""
    d1, d2 = dims
    plus = np.kron(_coherent_amplitudes(complex(alpha), d1), _coherent_amplitudes(complex(alpha), d2))
    minus = np.kron(_coherent_amplitudes(-complex(alpha), d1), _coherent_amplitudes(-complex(alpha), d2))
    ket = plus + minus
    return QuantumState.ket(ket / np.linalg.norm(ket), (d1, d2))


@dataclass(frozen=True)
class QuantumState:
    """
    State vector or density matrix on an ordered composite space.

    Attributes:
        kind: 'ket' or 'dm'
        dims: Subsystem dimensions (ancilla first, then cavities)
        data: Dense vector (ket) or matrix (dm)
    """
    kind: Literal['ket', 'dm']
    dims: Tuple[int, ...]
    data: np.ndarray = field(repr=False)

    @classmethod
    def ket(cls, data: np.ndarray, dims: Sequence[int]) -> "QuantumState":
        return cls('ket', tuple(int(d) for d in dims), np.asarray(data, dtype=complex).reshape(-1))

    @classmethod
    def dm(cls, data: np.ndarray, dims: Sequence[int]) -> "QuantumState":
        d = int(np.prod(dims))
        return cls('dm', tuple(int(x) for x in dims), np.asarray(data, dtype=complex).reshape(d, d))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def to_density(self) -> "QuantumState":
        if self.kind == 'dm':
            return self
        return QuantumState.dm(np.outer(self.data, self.data.conj()), self.dims)

    def to_qobj(self) -> qutip.Qobj:
        dims = list(self.dims)
        if self.kind == 'ket':
            return qutip.Qobj(self.data.reshape(-1, 1), dims=[dims, [1] * len(dims)])
        return qutip.Qobj(self.data, dims=[dims, dims])

    def norm(self) -> float:
        if self.kind == 'ket':
            return float(np.linalg.norm(self.data))
        return float(np.real(np.trace(self.data)))

    def expect(self, operator: Matrix) -> complex:
        if self.kind == 'ket':
            return complex(np.vdot(self.data, operator @ self.data))
        return complex(np.trace(operator @ self.data))


def tensor(items: Sequence[Union[np.ndarray, QuantumState]]) -> Union[np.ndarray, QuantumState]:
    """
    Kronecker product in the declared subsystem order.

    Accepts either raw arrays (operators or vectors) or QuantumStates of a single kind.

    Raises:
        InvalidArgumentError: On an empty list or mixed state kinds
    """
    if not items:
        raise InvalidArgumentError("tensor needs at least one factor")
    if all(isinstance(item, QuantumState) for item in items):
        kinds = {item.kind for item in items}
        if len(kinds) != 1:
            raise InvalidArgumentError("cannot tensor a ket with a density matrix; promote first")
        dims = tuple(d for item in items for d in item.dims)
        data = reduce(np.kron, [item.data for item in items])
        return QuantumState(items[0].kind, dims, data)
    if any(isinstance(item, QuantumState) for item in items):
        raise InvalidArgumentError("cannot mix QuantumState and raw arrays in tensor")
    return reduce(np.kron, [np.asarray(item, dtype=complex) for item in items])


def partial_trace(state: QuantumState, keep: Union[int, Sequence[int]]) -> QuantumState:
    """
    Reduced density matrix on the kept subsystems.

    Args:
        state: Ket (promoted) or density matrix
        keep: Subsystem index or indices to keep

    Returns:
        Density-matrix QuantumState on the kept subsystems

    Raises:
        InvalidArgumentError: If an index is out of range
    """
    keep_list = [keep] if isinstance(keep, (int, np.integer)) else list(keep)
    if not keep_list or any(k < 0 or k >= len(state.dims) for k in keep_list):
        raise InvalidArgumentError(f"invalid subsystem index {keep} for dims {state.dims}")
    if len(set(keep_list)) != len(keep_list):
        raise InvalidArgumentError(f"duplicate subsystem index in {keep}")
    reduced = state.to_qobj().ptrace(sorted(keep_list))
    kept_dims = tuple(state.dims[k] for k in sorted(keep_list))
    return QuantumState.dm(reduced.full(), kept_dims)


@dataclass(frozen=True)
class OperatorSet:
    """
    Mode operators embedded in the ancilla x cavity1 x cavity2 space.

    A cavity given as a fixed photon number occupies a one-dimensional factor
    where a = 0, a^dag a = n and a^dag^2 a^2 = n(n - 1).
    """
    dims: Tuple[int, int, int]
    q: Matrix
    a: Tuple[Matrix, Matrix]
    n_q: Matrix
    n: Tuple[Matrix, Matrix]
    kerr_q: Matrix
    kerr: Tuple[Matrix, Matrix]
    sextic: Tuple[Matrix, Matrix]
    identity: Matrix
    fixed_photons: Dict[int, int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))


def _mode_blocks(dim: int, fixed: Optional[int]) -> Tuple[Matrix, Matrix, Matrix, Matrix]:
    if fixed is not None:
        n = float(fixed)
        return (np.zeros((1, 1), dtype=complex), np.array([[n]], dtype=complex),
                np.array([[n * (n - 1)]], dtype=complex), np.array([[n * (n - 1) * (n - 2)]], dtype=complex))
    a = destroy(dim)
    ad = a.conj().T
    return a, ad @ a, ad @ ad @ a @ a, ad @ ad @ ad @ a @ a @ a


@lru_cache(maxsize=32)
def _cached_mode_operators(dims: Tuple[int, int, int], fixed_items: Tuple[Tuple[int, int], ...]) -> OperatorSet:
    fixed = dict(fixed_items)
    d_q, d_1, d_2 = dims
    sizes = (d_q, 1 if 1 in fixed else d_1, 1 if 2 in fixed else d_2)
    eyes = [np.eye(s, dtype=complex) for s in sizes]

    def embed(op: Matrix, slot: int) -> Matrix:
        factors = list(eyes)
        factors[slot] = op
        return reduce(np.kron, factors)

    qa = destroy(d_q)
    qd = qa.conj().T
    cavity = [_mode_blocks(dims[i], fixed.get(i)) for i in (1, 2)]
    ops = OperatorSet(
        dims=sizes,
        q=embed(qa, 0),
        a=(embed(cavity[0][0], 1), embed(cavity[1][0], 2)),
        n_q=embed(qd @ qa, 0),
        n=(embed(cavity[0][1], 1), embed(cavity[1][1], 2)),
        kerr_q=embed(qd @ qd @ qa @ qa, 0),
        kerr=(embed(cavity[0][2], 1), embed(cavity[1][2], 2)),
        sextic=(embed(cavity[0][3], 1), embed(cavity[1][3], 2)),
        identity=np.eye(int(np.prod(sizes)), dtype=complex),
        fixed_photons=fixed,
    )
    for arr in (ops.q, ops.n_q, ops.kerr_q, ops.identity, *ops.a, *ops.n, *ops.kerr, *ops.sextic):
        arr.flags.writeable = False
    return ops


def mode_operators(dims: Sequence[int], fixed_photons: Optional[Dict[int, int]] = None) -> OperatorSet:
    """
    Operator set for the composite space.

    Args:
        dims: (d_q, d_1, d_2) truncations
        fixed_photons: Optional {mode: n} replacing a cavity by a number-resolved block

    Returns:
        Cached, read-only OperatorSet
    """
    if len(dims) != 3:
        raise InvalidArgumentError(f"expected (d_q, d_1, d_2), got {tuple(dims)}")
    fixed = tuple(sorted((fixed_photons or {}).items()))
    return _cached_mode_operators(tuple(int(d) for d in dims), fixed)


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """
    Sampled phase-space function.

    Attributes:
        eta1: Displacement arguments of mode 1, shape `shape`
        eta2: Displacement arguments of mode 2 (None for single-mode functions)
        values: Real (Wigner) or complex (characteristic) samples, shape `shape`
    """
    eta1: np.ndarray
    values: np.ndarray
    eta2: Optional[np.ndarray] = None

    @classmethod
    def from_axes(cls, re_axis: Sequence[float], im_axis: Sequence[float]) -> "PhaseSpaceGrid":
        """Single-mode grid eta = x + i y with x along columns, y along rows."""
        x, y = np.meshgrid(np.asarray(re_axis, dtype=float), np.asarray(im_axis, dtype=float))
        return cls(eta1=x + 1j * y, values=np.zeros_like(x))

    @classmethod
    def two_mode(cls, eta1: Sequence[complex], eta2: Sequence[complex]) -> "PhaseSpaceGrid":
        """Product grid over (eta1, eta2); eta1 runs along rows."""
        e1, e2 = np.meshgrid(np.asarray(eta1, dtype=complex), np.asarray(eta2, dtype=complex), indexing='ij')
        return cls(eta1=e1, values=np.zeros(e1.shape, dtype=complex), eta2=e2)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.eta1.shape

    def to_frame(self) -> pd.DataFrame:
        eta2 = self.eta2 if self.eta2 is not None else np.zeros_like(self.eta1)
        values = np.asarray(self.values)
        return pd.DataFrame({
            're_eta1': np.real(self.eta1).ravel(),
            'im_eta1': np.imag(self.eta1).ravel(),
            're_eta2': np.real(eta2).ravel(),
            'im_eta2': np.imag(eta2).ravel(),
            're_value': np.real(values).ravel(),
            'im_value': np.imag(values).ravel(),
        })


def export_grid_csv(grid: PhaseSpaceGrid, path: Union[str, Path]) -> Path:
    """Write a grid as CSV with columns re/im of eta1, eta2 and the value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid.to_frame().to_csv(path, index=False)
    return path


def load_grid_csv(path: Union[str, Path], shape: Optional[Tuple[int, ...]] = None) -> PhaseSpaceGrid:
    frame = pd.read_csv(path, float_precision='round_trip')
    shape = shape or (len(frame),)
    eta1 = (frame['re_eta1'].to_numpy() + 1j * frame['im_eta1'].to_numpy()).reshape(shape)
    eta2 = (frame['re_eta2'].to_numpy() + 1j * frame['im_eta2'].to_numpy()).reshape(shape)
    values = (frame['re_value'].to_numpy() + 1j * frame['im_value'].to_numpy()).reshape(shape)
    return PhaseSpaceGrid(eta1=eta1, values=values, eta2=eta2)


def wigner(rho: QuantumState, grid: PhaseSpaceGrid) -> PhaseSpaceGrid:
    """
    Wigner function W(eta) = (2/pi) Tr[D(eta) rho D^dag(eta) Pi] of a single mode.

    The vacuum takes the value 2/pi at the origin and W integrates to 1 over d^2 eta.

    Args:
        rho: Single-mode state (kets are promoted)
        grid: Grid built with PhaseSpaceGrid.from_axes

    Returns:
        Grid of the same shape with real values
    """
    if len(rho.dims) != 1:
        raise InvalidArgumentError(f"wigner expects a single-mode state, got dims {rho.dims}")
    xvec = np.real(grid.eta1[0, :])
    yvec = np.imag(grid.eta1[:, 0])
    values = qutip.wigner(rho.to_density().to_qobj(), xvec, yvec, g=2)
    return replace(grid, values=np.asarray(values, dtype=float))


def joint_characteristic(rho: QuantumState, eta1: complex, eta2: complex) -> complex:
    """
    Joint characteristic function C(eta1, eta2) = Tr[D1(eta1) D2(eta2) rho].

    Args:
        rho: Two-mode state with the ancilla already traced out

    Returns:
        Complex value; equals Tr[rho] at the origin
    """
    if len(rho.dims) != 2:
        raise InvalidArgumentError(f"joint characteristic expects two modes, got dims {rho.dims}")
    d1, d2 = rho.dims
    disp1 = displacement_operator(eta1, d1)
    disp2 = displacement_operator(eta2, d2)
    if rho.kind == 'ket':
        psi = rho.data.reshape(d1, d2)
        return complex(np.vdot(psi, disp1 @ psi @ disp2.T))
    r = rho.data.reshape(d1, d2, d1, d2)
    return complex(np.einsum('ab,cd,bdac->', disp1, disp2, r))


def characteristic_grid(rho: QuantumState, grid: PhaseSpaceGrid) -> PhaseSpaceGrid:
    """Evaluate joint_characteristic at every point of a two-mode grid."""
    if grid.eta2 is None:
        raise InvalidArgumentError("characteristic grid needs eta2 samples")
    values = np.array([
        joint_characteristic(rho, e1, e2) for e1, e2 in zip(grid.eta1.ravel(), grid.eta2.ravel())
    ]).reshape(grid.shape)
    return replace(grid, values=values)


def characteristic_cut(rho: QuantumState, etas: Sequence[float], imaginary: bool = False) -> PhaseSpaceGrid:
    """Diagonal cut C(eta, eta) for real eta, or C(i eta, i eta) when imaginary is set."""
    arg = np.asarray(etas, dtype=float) * (1j if imaginary else 1.0)
    values = np.array([joint_characteristic(rho, e, e) for e in arg])
    return PhaseSpaceGrid(eta1=arg.astype(complex), values=values, eta2=arg.astype(complex))


def ideal_characteristic_cuts(alpha: float, etas: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form diagonal cuts of the ideal Bell-cat for real alpha >> 1.

    Returns:
        (real cut C(eta, eta), imaginary cut C(i eta, i eta))
    """
    eta = np.asarray(etas, dtype=float)
    real_cut = np.exp(-eta ** 2) + 0.5 * np.exp(-(eta - 2 * alpha) ** 2) + 0.5 * np.exp(-(eta + 2 * alpha) ** 2)
    imag_cut = np.exp(-4 * alpha ** 2 - eta ** 2) * (1 + np.exp(4 * alpha ** 2) * np.cos(4 * alpha * eta))
    return real_cut, imag_cut


def state_fidelity_ket(psi: np.ndarray, phi: np.ndarray) -> float:
    return float(abs(np.vdot(phi, psi)) ** 2)


def embed_ket(ancilla: np.ndarray, cavity1: np.ndarray, cavity2: np.ndarray) -> np.ndarray:
    return reduce(np.kron, [np.asarray(ancilla, dtype=complex), np.asarray(cavity1, dtype=complex),
                            np.asarray(cavity2, dtype=complex)])


__all__: List[str] = [
    'QuantumState', 'OperatorSet', 'PhaseSpaceGrid',
    'destroy', 'number', 'fock_state', 'displacement_operator', 'coherent_state', 'convergence_check',
    'cutoff_for', 'cat_normalization', 'cat_state', 'bellcat_state', 'tensor', 'partial_trace', 'mode_operators',
    'wigner', 'joint_characteristic', 'characteristic_grid', 'characteristic_cut',
    'ideal_characteristic_cuts', 'export_grid_csv', 'load_grid_csv', 'embed_ket',
]
