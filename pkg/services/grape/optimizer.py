"""
Detuning-robust pulse optimization.

The cost is the weighted mean closed-system infidelity over a detuning grid plus a
soft amplitude penalty. Envelopes are parametrized in an orthonormal band-limited
basis that pins eps(0) = 0, so every iterate is already a fixed point of the
bandwidth filter. Each start runs Adam; the best start is polished with L-BFGS-B.
"""

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from services.dynamics import default_workers, robustness_metrics
from services.errors import InvalidArgumentError
from services.grape.base import TransmonControl
from services.grape.envelopes import ComplexEnvelope, band_limited_basis, initial_ansatz, sample_count
from services.model import hz

logger = logging.getLogger(__name__)

FULL_START_VALUES = tuple(range(-10, 11, 2))
FAST_START_VALUES = (-8, -4, 0, 4, 8)
REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DetuningGrid:
    """Detuning samples (rad/s) with probability weights."""
    deltas: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if not self.deltas or len(self.deltas) != len(self.weights):
            raise InvalidArgumentError("detuning grid needs matching, non-empty deltas and weights")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"weights must be non-negative and sum to 1, got {self.weights}")

    @classmethod
    def equal(cls, deltas: Sequence[float]) -> "DetuningGrid":
        deltas = tuple(float(d) for d in deltas)
        return cls(deltas, tuple([1.0 / len(deltas)] * len(deltas)))

    @classmethod
    def standard(cls) -> "DetuningGrid":
        """delta/2pi in {+-1, +-3, +-4, +-7, +-10} MHz with equal weights."""
        magnitudes = (1, 3, 4, 7, 10)
        return cls.equal([hz(s * m * 1e6) for m in magnitudes for s in (-1, 1)])

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "DetuningGrid":
        if n < 1:
            raise InvalidArgumentError(f"grid size must be positive, got {n}")
        return cls.equal(np.linspace(lo, hi, n))

    @classmethod
    def single(cls, delta: float = 0.0) -> "DetuningGrid":
        return cls((float(delta),), (1.0,))

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "DetuningGrid":
        """Accepts `deltas_hz` (explicit samples) or `range_hz` + `points`; defaults to the standard grid."""
        if 'deltas_hz' in section:
            return cls.equal([hz(d) for d in section['deltas_hz']])
        if 'range_hz' in section:
            lo, hi = section['range_hz']
            return cls.uniform(hz(lo), hz(hi), int(section.get('points', 11)))
        return cls.standard()

    @property
    def span(self) -> Tuple[float, float]:
        return min(self.deltas), max(self.deltas)


@dataclass(frozen=True)
class PulseConstraints:
    """
    Amplitude and bandwidth limits plus optimizer settings.

    Attributes:
        max_amplitude: eps_max (rad/s)
        cutoff_i, cutoff_q: Bandwidths in units of 1/t_g
        penalty: Weight of the quadratic amplitude penalty
        max_iterations: Adam iteration cap per start
        tolerance: Convergence when |dC| < tolerance over `patience` iterations
        learning_rate: Adam step in units of pi / t_g
    """
    max_amplitude: float = TransmonControl.DEFAULT_MAX_AMPLITUDE
    cutoff_i: float = 5.0
    cutoff_q: float = 10.0
    penalty: float = 1.0
    max_iterations: int = 2000
    tolerance: float = 1e-10
    patience: int = 20
    learning_rate: float = 0.02
    polish_iterations: int = 500
    fast: bool = False

    @classmethod
    def from_config(cls, section: Mapping[str, Any], fast: bool = False) -> "PulseConstraints":
        values: Dict[str, Any] = {'fast': fast}
        if 'max_amplitude_hz' in section:
            values['max_amplitude'] = hz(section['max_amplitude_hz'])
        for key in ('cutoff_i', 'cutoff_q', 'penalty', 'max_iterations', 'tolerance', 'patience',
                    'learning_rate', 'polish_iterations'):
            if key in section:
                values[key] = section[key]
        return cls(**values)

    def start_values(self) -> Tuple[int, ...]:
        return FAST_START_VALUES if self.fast else FULL_START_VALUES


class PulseProblem:
    """
    Cost and exact gradient in the pinned band-limited parameter space.

    Parameters z are scaled by pi / t_g; samples = scale * (B_I z_I + i B_Q z_Q).
    """

    def __init__(self, control: TransmonControl, theta: float, t_g: float, grid: DetuningGrid,
                 constraints: PulseConstraints, dt: Optional[float] = None):
        self.control = control
        self.theta = theta
        self.t_g = t_g
        self.grid = grid
        self.constraints = constraints
        self.dt = dt or control.dt
        self.n_samples = sample_count(t_g, self.dt)
        self.basis_i = band_limited_basis(self.n_samples, t_g, constraints.cutoff_i / t_g)
        self.basis_q = band_limited_basis(self.n_samples, t_g, constraints.cutoff_q / t_g)
        self.split = self.basis_i.shape[1]
        self.scale = np.pi / t_g
        self.deltas = np.asarray(grid.deltas)
        self.weights = np.asarray(grid.weights)
        self.target_dag = control.target(theta).conj().T
        self.pt = control.projector @ self.target_dag
        self.norm = np.real(np.trace(control.projector)) ** 2

    @property
    def size(self) -> int:
        return self.split + self.basis_q.shape[1]

    def envelope(self, z: np.ndarray) -> ComplexEnvelope:
        eps_i = self.basis_i @ z[:self.split]
        eps_q = self.basis_q @ z[self.split:]
        return ComplexEnvelope.from_quadratures(self.scale * eps_i, self.scale * eps_q, self.dt)

    def project(self, env: ComplexEnvelope) -> np.ndarray:
        """Least-squares coordinates of an envelope (exact if it lies in the subspace)."""
        if env.n_samples != self.n_samples:
            raise InvalidArgumentError(f"envelope has {env.n_samples} samples, expected {self.n_samples}")
        return np.concatenate([self.basis_i.T @ env.eps_i, self.basis_q.T @ env.eps_q]) / self.scale

    def infidelities(self, samples: np.ndarray) -> np.ndarray:
        return self.control.infidelities(ComplexEnvelope(samples, self.dt), self.deltas, self.theta)

    def penalty(self, samples: np.ndarray) -> Tuple[float, np.ndarray]:
        """lambda sum max(0, |eps| - eps_max)^2 / eps_max^2 and its gradient w.r.t. (eps_I, eps_Q)."""
        limit = self.constraints.max_amplitude
        mag = np.abs(samples)
        excess = np.maximum(mag - limit, 0.0)
        value = self.constraints.penalty * np.sum(excess ** 2) / limit ** 2
        with np.errstate(invalid='ignore', divide='ignore'):
            unit = np.where(mag > 0, samples / np.where(mag > 0, mag, 1.0), 0.0)
        grad = 2 * self.constraints.penalty * excess / limit ** 2 * unit
        return float(value), grad

    def sample_gradient(self, samples: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """
        Weighted mean infidelity and its gradient w.r.t. eps_I and eps_Q samples.

        Segment propagators come from a batched eigendecomposition; the derivative of
        exp(-i H dt) along C is V (G o V^dag C V) V^dag with the divided differences
        G_mn = (e^{-i l_m dt} - e^{-i l_n dt}) / (l_m - l_n).
        """
        c = self.control
        dt = self.dt
        lam, vec = c.segment_eigensystems(samples, self.deltas)
        vdag = np.swapaxes(vec.conj(), -1, -2)
        phases = np.exp(-1j * dt * lam)
        steps = (vec * phases[..., None, :]) @ vdag

        n_d, n_k, d, _ = steps.shape
        eye = np.broadcast_to(np.eye(d, dtype=complex), (n_d, d, d))
        forward = np.empty((n_d, n_k + 1, d, d), dtype=complex)
        forward[:, 0] = eye
        for k in range(n_k):
            forward[:, k + 1] = steps[:, k] @ forward[:, k]
        backward = np.empty((n_d, n_k + 1, d, d), dtype=complex)
        backward[:, n_k] = eye
        for k in range(n_k - 1, -1, -1):
            backward[:, k] = backward[:, k + 1] @ steps[:, k]

        total = forward[:, n_k]
        overlap = np.einsum('ij,nji->n', self.pt, total)
        infid = 1.0 - np.abs(overlap) ** 2 / self.norm

        # g = Tr[M_k U_k] with M_k = P_k (P U_t^dag) B_{k+1}
        m = forward[:, :n_k] @ self.pt[None, None] @ backward[:, 1:]
        m_eig = vdag @ m @ vec

        diff = lam[..., :, None] - lam[..., None, :]
        num = phases[..., :, None] - phases[..., None, :]
        degenerate = np.abs(diff) < 1e-9 * max(1.0, float(np.max(np.abs(lam))))
        safe = np.where(degenerate, 1.0, diff)
        diag = -1j * dt * np.broadcast_to(phases[..., :, None], num.shape)
        divided = np.where(degenerate, diag, num / safe)

        grads = []
        for op in (c.drive_i, c.drive_q):
            op_eig = vdag @ op @ vec
            dg = np.einsum('nkji,nkij->nk', m_eig, divided * op_eig)
            grads.append(-0.5 * np.real(np.conj(overlap)[:, None] * dg) * 4.0 / self.norm)
        weights = self.weights[:, None]
        cost = float(np.sum(self.weights * infid))
        return cost, np.sum(weights * grads[0], axis=0), np.sum(weights * grads[1], axis=0)

    def __call__(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        """Cost (infidelity + penalty) and gradient w.r.t. z."""
        env = self.envelope(z)
        samples = env.samples
        cost, g_i, g_q = self.sample_gradient(samples)
        pen, pen_grad = self.penalty(samples)
        g_i = g_i + pen_grad.real
        g_q = g_q + pen_grad.imag
        grad = np.concatenate([self.basis_i.T @ g_i, self.basis_q.T @ g_q]) * self.scale
        return cost + pen, grad


def cost_closed(env: ComplexEnvelope, grid: DetuningGrid, theta: float, control: TransmonControl) -> float:
    """C_c: weighted mean closed-system infidelity over the detuning grid."""
    return float(np.sum(np.asarray(grid.weights) * control.infidelities(env, grid.deltas, theta)))


def cost_closed_gradient(env: ComplexEnvelope, grid: DetuningGrid, theta: float,
                         control: TransmonControl) -> Tuple[float, np.ndarray, np.ndarray]:
    """C_c with its exact gradient w.r.t. the eps_I and eps_Q samples."""
    problem = PulseProblem(control, theta, env.duration, grid, PulseConstraints(), dt=env.dt)
    return problem.sample_gradient(env.samples)


@dataclass
class StartResult:
    abc: Tuple[int, int, int]
    cost: float
    z: np.ndarray
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)


def adam(problem: PulseProblem, z0: np.ndarray, constraints: PulseConstraints) -> Tuple[np.ndarray, float, int, bool, List[float]]:
    """Adam descent with convergence when |dC| < tolerance over `patience` iterations."""
    beta1, beta2, eps = 0.9, 0.999, 1e-12
    z = z0.copy()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    best_z, best_cost = z.copy(), np.inf
    trace: List[float] = []
    for it in range(1, constraints.max_iterations + 1):
        cost, grad = problem(z)
        trace.append(cost)
        if cost < best_cost:
            best_cost, best_z = cost, z.copy()
        if it > constraints.patience and abs(trace[-1 - constraints.patience] - cost) < constraints.tolerance:
            return best_z, best_cost, it, True, trace
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad ** 2
        m_hat = m / (1 - beta1 ** it)
        v_hat = v / (1 - beta2 ** it)
        z = z - constraints.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return best_z, best_cost, constraints.max_iterations, False, trace


def polish(problem: PulseProblem, z0: np.ndarray, constraints: PulseConstraints) -> Tuple[np.ndarray, float, bool]:
    """L-BFGS-B refinement; never returns a worse point than z0."""
    start_cost, _ = problem(z0)
    result = minimize(problem, z0, jac=True, method='L-BFGS-B',
                      options={'maxiter': constraints.polish_iterations, 'ftol': 1e-15, 'gtol': 1e-14})
    if result.fun <= start_cost:
        return result.x, float(result.fun), bool(result.success)
    return z0, start_cost, bool(result.success)


def _run_start(problem: PulseProblem, abc: Tuple[int, int, int]) -> StartResult:
    a, b, c = abc
    env = initial_ansatz(problem.theta, problem.t_g, a, b, c, problem.control.K_q, problem.dt)
    z, cost, iterations, converged, trace = adam(problem, problem.project(env), problem.constraints)
    logger.debug("start %s: cost %.3e after %d iterations", abc, cost, iterations)
    return StartResult(abc=abc, cost=cost, z=z, iterations=iterations, converged=converged, trace=trace)


def _interleave(values: np.ndarray) -> List[float]:
    return np.column_stack([values.real, values.imag]).reshape(-1).tolist()


@dataclass
class OptimizationReport:
    """
    Outcome of a pulse optimization (or a duration selection).

    Attributes:
        envelope: Best envelope
        theta: Target rotation angle
        best_cost: C_c of the stored envelope (no penalty)
        cost_trace: Cost per iteration of the winning start, followed by the polish result
        start_costs: Final cost of every (a, b, c) start
        converged: Whether the winning run met the stopping rule
        closed_costs / open_costs: Per-duration C_c and C_o (seconds -> cost)
        selected_duration: Duration chosen by select_duration
    """
    envelope: ComplexEnvelope
    theta: float
    best_cost: float
    cost_trace: List[float] = field(default_factory=list)
    start_costs: Dict[Tuple[int, int, int], float] = field(default_factory=dict)
    converged: bool = True
    penalty: float = 0.0
    closed_costs: Dict[float, float] = field(default_factory=dict)
    open_costs: Dict[float, float] = field(default_factory=dict)
    selected_duration: Optional[float] = None
    best_start: Optional[Tuple[int, int, int]] = None

    @property
    def duration(self) -> float:
        return self.envelope.duration

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format_version': REPORT_FORMAT_VERSION,
            'theta': self.theta,
            'dt': self.envelope.dt,
            'envelope': _interleave(self.envelope.samples),
            'best_cost': self.best_cost,
            'penalty': self.penalty,
            'converged': self.converged,
            'cost_trace': list(self.cost_trace),
            'start_costs': [{'a': k[0], 'b': k[1], 'c': k[2], 'cost': v} for k, v in sorted(self.start_costs.items())],
            'best_start': list(self.best_start) if self.best_start else None,
            'closed_costs': [{'duration_s': k, 'cost': v} for k, v in sorted(self.closed_costs.items())],
            'open_costs': [{'duration_s': k, 'cost': v} for k, v in sorted(self.open_costs.items())],
            'selected_duration': self.selected_duration,
        }

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OptimizationReport":
        values = np.asarray(data['envelope'], dtype=float)
        env = ComplexEnvelope(values[0::2] + 1j * values[1::2], data['dt'])
        return cls(
            envelope=env,
            theta=data['theta'],
            best_cost=data['best_cost'],
            penalty=data.get('penalty', 0.0),
            converged=data.get('converged', True),
            cost_trace=list(data.get('cost_trace', [])),
            start_costs={(s['a'], s['b'], s['c']): s['cost'] for s in data.get('start_costs', [])},
            best_start=tuple(data['best_start']) if data.get('best_start') else None,
            closed_costs={c['duration_s']: c['cost'] for c in data.get('closed_costs', [])},
            open_costs={c['duration_s']: c['cost'] for c in data.get('open_costs', [])},
            selected_duration=data.get('selected_duration'),
        )

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "OptimizationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def optimize_pulse(theta: float, t_g: float, grid: DetuningGrid, control: TransmonControl,
                   constraints: Optional[PulseConstraints] = None,
                   initial: Optional[ComplexEnvelope] = None,
                   starts: Optional[Sequence[Tuple[int, int, int]]] = None,
                   workers: Optional[int] = None) -> OptimizationReport:
    """
    Minimize C_c over band-limited envelopes of duration t_g.

    Args:
        theta: Target rotation angle
        t_g: Pulse duration (s)
        grid: Detuning grid
        control: Transmon model
        constraints: Amplitude/bandwidth limits and optimizer settings
        initial: Resume from this envelope (polish only) instead of scanning starts
        starts: Explicit (a, b, c) starts; defaults to the full or fast lattice
        workers: Parallel workers for the start scan

    Returns:
        OptimizationReport; `converged` is False when the winning start hit the iteration cap
    """
    constraints = constraints or PulseConstraints()
    problem = PulseProblem(control, theta, t_g, grid, constraints)
    logger.info("optimizing X(%.4f) at %.1f ns over %d detunings", theta, t_g * 1e9, len(grid.deltas))

    if initial is not None:
        z, cost, ok = polish(problem, problem.project(initial), constraints)
        return _report(problem, z, [cost], {}, ok, None)

    if starts is None:
        values = constraints.start_values()
        starts = list(itertools.product(values, values, values))
    n_jobs = max(1, min(workers or default_workers(), len(starts)))
    results: List[StartResult] = Parallel(n_jobs=n_jobs)(delayed(_run_start)(problem, tuple(s)) for s in starts)
    best = min(results, key=lambda r: (r.cost, r.abc))
    z, cost, _ = polish(problem, best.z, constraints)
    if not best.converged:
        logger.warning("best start %s hit the iteration cap (%d)", best.abc, constraints.max_iterations)
    report = _report(problem, z, best.trace + [cost], {r.abc: r.cost for r in results}, best.converged, best.abc)
    logger.info("best start %s: C_c = %.3e", best.abc, report.best_cost)
    return report


def _report(problem: PulseProblem, z: np.ndarray, trace: List[float], start_costs, converged: bool,
            best_start) -> OptimizationReport:
    env = problem.envelope(z)
    penalty, _ = problem.penalty(env.samples)
    return OptimizationReport(
        envelope=env,
        theta=problem.theta,
        best_cost=cost_closed(env, problem.grid, problem.theta, problem.control),
        cost_trace=trace,
        start_costs=start_costs,
        converged=converged,
        penalty=penalty,
        best_start=best_start,
    )


def grid_metrics(env: ComplexEnvelope, grid: DetuningGrid, theta: float, control: TransmonControl) -> Tuple[float, float]:
    """Mean and standard deviation of the closed infidelity over the grid."""
    return robustness_metrics(control.infidelities(env, grid.deltas, theta), grid.weights)


__all__ = [
    'DetuningGrid', 'PulseConstraints', 'PulseProblem', 'OptimizationReport',
    'cost_closed', 'cost_closed_gradient', 'optimize_pulse', 'grid_metrics', 'adam', 'polish',
]
