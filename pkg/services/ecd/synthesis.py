"""
ECD pulse synthesis: four Gaussian cavity displacements around an ancilla echo.

Fragment layout on the sample grid (n_g Gaussian samples, n_w wait samples,
n_e echo samples):

    G0 | W | G1 | E | G2 | W | G3

The cavity response is linear in the amplitudes r_k for the dispersive-only model,
so the frame condition alpha(t_f) = 0 and the two branch displacements +-beta/2 are
three complex linear equations in four unknowns. The wait grows until the
minimum-norm solution respects the drive limit.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from services.dynamics import TimeGrid, propagate_unitary
from services.ecd.circuit import ecd_unitary, rotation_matrix
from services.ecd.ledger import FragmentRecord, PulseSchedule, Segment, virtual_z
from services.errors import InvalidArgumentError, SynthesisError
from services.grape.envelopes import ComplexEnvelope
from services.hilbert import cutoff_for, mode_operators
from services.model import DerivedNonlinearities, DisplacedFrameHamiltonian, hz, integrate_trajectory, solve_trajectory

logger = logging.getLogger(__name__)

FOCK_CHECK = 3
SCAN_CHUNK = 4096


@dataclass(frozen=True)
class SynthesisConstraints:
    """
    Limits and tolerances for fragment synthesis.

    Attributes:
        sigma: Gaussian width sigma_c (s)
        truncation: Half-support in units of sigma_c
        max_amplitude: Cavity drive limit (rad/s)
        max_wait: Longest wait t_w tried (s)
        fragment_tol: Accepted fragment gate infidelity
        return_tol: Accepted |alpha(t_f)| of the frame trajectory
        verify: Run the displaced-frame check after solving
    """
    sigma: float = 6e-9
    truncation: float = 2.0
    max_amplitude: float = hz(80e6)
    max_wait: float = 20e-6
    fragment_tol: float = 1e-4
    return_tol: float = 1e-6
    verify: bool = True

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "SynthesisConstraints":
        values: Dict[str, Any] = {}
        if 'sigma_ns' in section:
            values['sigma'] = section['sigma_ns'] * 1e-9
        if 'max_amplitude_hz' in section:
            values['max_amplitude'] = hz(section['max_amplitude_hz'])
        if 'max_wait_us' in section:
            values['max_wait'] = section['max_wait_us'] * 1e-6
        for key in ('truncation', 'fragment_tol', 'return_tol', 'verify'):
            if key in section:
                values[key] = section[key]
        return cls(**values)


def gaussian_displacement(sigma: float, dt: float, truncation: float = 2.0) -> np.ndarray:
    """Lifted Gaussian with peak 1 on 2 * truncation * sigma; the first sample is exactly 0."""
    n = max(2, int(round(2 * truncation * sigma / dt)))
    t = np.arange(n) * dt
    center = 0.5 * n * dt
    g = np.exp(-(t - center) ** 2 / (2 * sigma ** 2))
    edge = g[0]
    lifted = (g - edge) / (1.0 - edge)
    return lifted / np.max(lifted)


@dataclass(frozen=True, eq=False)
class ECDPulseParams:
    """
    A synthesized ECD fragment.

    Attributes:
        beta: Target conditional displacement
        mode: Cavity index (1 or 2)
        chi: Dispersive shift used for synthesis (rad/s)
        dt: Sample spacing (s)
        sigma: Gaussian width (s)
        amplitudes: r_0..r_3 (rad/s, complex)
        n_wait: Wait length in samples
        echo_phase: Axis phase of the echo R_phi(pi) that aligns the two branches
        shape: Unit Gaussian samples
        echo: Echo pulse samples padded to an even length
    """
    beta: complex
    mode: int
    chi: float
    dt: float
    sigma: float
    amplitudes: Tuple[complex, complex, complex, complex]
    n_wait: int
    echo_phase: float
    shape: np.ndarray
    echo: np.ndarray

    @property
    def n_gauss(self) -> int:
        return len(self.shape)

    @property
    def n_echo(self) -> int:
        return len(self.echo)

    @property
    def t_wait(self) -> float:
        return self.n_wait * self.dt

    @property
    def starts(self) -> Tuple[int, int, int, int]:
        n_g, n_w, n_e = self.n_gauss, self.n_wait, self.n_echo
        return 0, n_g + n_w, 2 * n_g + n_w + n_e, 3 * n_g + 2 * n_w + n_e

    @property
    def echo_start(self) -> int:
        return 2 * self.n_gauss + self.n_wait

    @property
    def center(self) -> int:
        return self.echo_start + self.n_echo // 2

    @property
    def n_steps(self) -> int:
        return 4 * self.n_gauss + 2 * self.n_wait + self.n_echo

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def windows(self) -> List[Tuple[int, int]]:
        """Phase-integration window per displacement; gaps belong to the preceding pulse."""
        s = list(self.starts) + [self.n_steps]
        return [(s[k], s[k + 1]) for k in range(4)]

    def cavity_samples(self) -> np.ndarray:
        out = np.zeros(self.n_steps, dtype=complex)
        for start, r in zip(self.starts, self.amplitudes):
            out[start:start + self.n_gauss] += r * self.shape
        return out

    def ancilla_samples(self) -> np.ndarray:
        out = np.zeros(self.n_steps, dtype=complex)
        out[self.echo_start:self.echo_start + self.n_echo] = self.echo
        return out

    def with_amplitudes(self, amplitudes) -> "ECDPulseParams":
        return replace(self, amplitudes=tuple(complex(r) for r in amplitudes))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'beta': [self.beta.real, self.beta.imag],
            'mode': self.mode,
            'amplitudes_hz': [[r.real / (2 * np.pi), r.imag / (2 * np.pi)] for r in self.amplitudes],
            't_wait_s': self.t_wait,
            'sigma_s': self.sigma,
            'echo_phase': self.echo_phase,
            'duration_s': self.duration,
        }

    def fragment(self) -> PulseSchedule:
        """The fragment as a schedule: cavity drive, echo, and the echo-axis Z pair."""
        cavity = np.zeros((2, self.n_steps), dtype=complex)
        cavity[self.mode - 1] = self.cavity_samples()
        segments = [Segment('gauss', s, s + self.n_gauss, self.mode, k) for k, s in enumerate(self.starts)]
        if self.n_wait:
            first, third = self.n_gauss, self.starts[2] + self.n_gauss
            segments += [Segment('wait', first, first + self.n_wait, self.mode, 0),
                         Segment('wait', third, third + self.n_wait, self.mode, 1)]
        segments.append(Segment('echo', self.echo_start, self.echo_start + self.n_echo, 0))
        events = ()
        if self.echo_phase != 0.0:
            events = (virtual_z(-self.echo_phase, self.echo_start),
                      virtual_z(self.echo_phase, self.echo_start + self.n_echo))
        return PulseSchedule(cavity, self.ancilla_samples(), self.dt, events=events,
                             segments=tuple(sorted(segments, key=lambda s: s.start)),
                             fragments=(FragmentRecord(self.mode, 0, self),))


@dataclass(frozen=True)
class BranchEvolution:
    """Frame (F) and ancilla-conditioned branches (A: g first, B: e first) of a fragment."""
    final: np.ndarray
    phases: np.ndarray
    max_separation: float

    @property
    def conditional_displacements(self) -> Tuple[complex, complex]:
        return complex(self.final[1] - self.final[0]), complex(self.final[2] - self.final[0])


@dataclass(frozen=True)
class FragmentCheck:
    """Displaced-frame verification of one fragment."""
    infidelity: float
    final_displacement: float
    conditional_displacement: complex
    cutoff: int


def chi_only(chi: Tuple[float, float]) -> DerivedNonlinearities:
    """Nonlinearities with everything but the dispersive shifts switched off."""
    return DerivedNonlinearities(chi=tuple(chi), chi_p=(0.0, 0.0), K=(0.0, 0.0), K12=0.0, K_q=0.0)


def _rk4_factor(omega: float, dt: float) -> complex:
    z = 1j * omega * dt
    return 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24


def _responses(shape: np.ndarray, chi: float, dt: float) -> Tuple[complex, complex]:
    # one Gaussian from rest, branch frequencies +chi/2 and -chi/2
    traj = integrate_trajectory([shape, shape], dt, chi_only((chi, -chi)))
    c = traj.alpha[:, len(shape)]
    return complex(c[0]), complex(c[1])


def _linear_system(shape: np.ndarray, chi: float, dt: float, n_echo: int, n_wait: np.ndarray) -> np.ndarray:
    """Rows (frame, branch A, branch B) mapping r_0..r_3 to final amplitudes; shape (W, 3, 4)."""
    n_g, half = len(shape), n_echo // 2
    c_plus, c_minus = _responses(shape, chi, dt)
    f_plus, f_minus = _rk4_factor(chi / 2, dt), _rk4_factor(-chi / 2, dt)

    def row(c_before, f_before, c_after, f_after):
        out = np.empty((len(n_wait), 4), dtype=complex)
        tail = np.power(f_after, 2 * n_g + n_wait + half)
        out[:, 0] = c_before * np.power(f_before, n_g + n_wait + half) * tail
        out[:, 1] = c_before * f_before ** half * tail
        out[:, 2] = c_after * np.power(f_after, n_g + n_wait)
        out[:, 3] = c_after
        return out

    return np.stack([
        row(c_plus, f_plus, c_plus, f_plus),
        row(c_plus, f_plus, c_minus, f_minus),
        row(c_minus, f_minus, c_plus, f_plus),
    ], axis=1)


def solve_amplitudes(beta: complex, chi: float, shape: np.ndarray, dt: float, n_echo: int,
                     max_amplitude: float, max_wait_steps: int) -> Tuple[np.ndarray, int]:
    """
    Shortest wait whose minimum-norm amplitudes respect the drive limit.

    Returns:
        (r_0..r_3, n_wait)

    Raises:
        SynthesisError: If no wait up to max_wait_steps is feasible
    """
    rhs = np.array([0.0, beta / 2, -beta / 2], dtype=complex)
    tol = 1e-9 * max(1.0, abs(beta))
    best = np.inf
    for first in range(0, max_wait_steps + 1, SCAN_CHUNK):
        n_wait = np.arange(first, min(first + SCAN_CHUNK, max_wait_steps + 1))
        m = _linear_system(shape, chi, dt, n_echo, n_wait)
        r = np.einsum('wij,j->wi', np.linalg.pinv(m), rhs)
        residual = np.linalg.norm(np.einsum('wij,wj->wi', m, r) - rhs, axis=1)
        peak = np.max(np.abs(r), axis=1)
        ok = np.flatnonzero((residual <= tol) & (peak <= max_amplitude))
        best = min(best, float(np.min(np.where(residual <= tol, peak, np.inf))))
        if ok.size:
            i = int(ok[0])
            return r[i], int(n_wait[i])
    raise SynthesisError(
        f"|beta| = {abs(beta):.3f} needs more than {max_wait_steps} wait samples at "
        f"max amplitude {max_amplitude / (2 * np.pi) / 1e6:.1f} MHz (smallest peak found "
        f"{best / (2 * np.pi) / 1e6:.1f} MHz)"
    )


def branch_evolution(samples: np.ndarray, dt: float, chi: float, center: int) -> BranchEvolution:
    """
    RK4 of d alpha/dt = i omega alpha - i Omega with the coherent-state phase
    d phi/dt = -Re(Omega^* alpha); omega switches between the g (+chi/2) and e (-chi/2)
    values at the echo center.
    """
    before = np.array([chi / 2, chi / 2, -chi / 2])
    after = np.array([chi / 2, -chi / 2, chi / 2])
    drive = np.concatenate([np.asarray(samples, dtype=complex), [0j]])
    alpha = np.zeros(3, dtype=complex)
    phase = np.zeros(3)
    separation = 0.0

    def rhs(a, w, omega):
        return 1j * omega * a - 1j * w, -np.real(np.conj(w) * a)

    for k in range(len(samples)):
        omega = before if k < center else after
        w0, w1 = drive[k], drive[k + 1]
        wm = 0.5 * (w0 + w1)
        a1, p1 = rhs(alpha, w0, omega)
        a2, p2 = rhs(alpha + 0.5 * dt * a1, wm, omega)
        a3, p3 = rhs(alpha + 0.5 * dt * a2, wm, omega)
        a4, p4 = rhs(alpha + dt * a3, w1, omega)
        alpha = alpha + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        phase = phase + dt / 6 * (p1 + 2 * p2 + 2 * p3 + p4)
        separation = max(separation, float(np.max(np.abs(alpha[1:] - alpha[0]))))
    return BranchEvolution(final=alpha, phases=phase, max_separation=separation)


def echo_phase(params: ECDPulseParams) -> float:
    """phi_e = (phi_B - phi_A) / 2 equalizes the branch phases after R_phi_e(pi)."""
    branches = branch_evolution(params.cavity_samples(), params.dt, params.chi, params.center)
    return float(0.5 * (branches.phases[2] - branches.phases[1]))


def verification_cutoff(params: ECDPulseParams) -> int:
    branches = branch_evolution(params.cavity_samples(), params.dt, params.chi, params.center)
    reach = np.sqrt(branches.max_separation ** 2 + FOCK_CHECK)
    return cutoff_for(reach, minimum=2 * FOCK_CHECK + 2) + 4


def verify_fragment(params: ECDPulseParams, cutoff: Optional[int] = None) -> FragmentCheck:
    """
    Displaced-frame simulation with only chi active and an instantaneous echo at the center.

    The gate is compared with ECD(beta) on {g, e} x Fock{0, 1, 2}.
    """
    d = cutoff or verification_cutoff(params)
    nl = chi_only((params.chi, 0.0))
    traj = solve_trajectory([params.cavity_samples(), np.zeros(params.n_steps)], params.dt, nl, verify=False)
    ops = mode_operators((2, d, 1))
    hamiltonian = DisplacedFrameHamiltonian(traj, nl, ops)
    idx = [q * d + n for q in (0, 1) for n in range(FOCK_CHECK)]
    columns = np.eye(ops.dim, dtype=complex)[:, idx]
    echo = np.kron(rotation_matrix(np.pi, params.echo_phase), np.eye(d))
    u = propagate_unitary(hamiltonian, ops.dim, TimeGrid(params.dt, params.n_steps),
                          columns=columns, kicks={params.center: echo})
    target = ecd_unitary(params.beta, d)[:, idx]
    overlap = np.vdot(target, u)
    infidelity = float(np.clip(1.0 - abs(overlap) ** 2 / len(idx) ** 2, 0.0, 1.0))
    a = ops.a[0]
    from_g, from_e = u[:, 0], u[:, FOCK_CHECK]
    conditional = np.vdot(from_g, a @ from_g) - np.vdot(from_e, a @ from_e)
    return FragmentCheck(infidelity=infidelity, final_displacement=float(abs(traj.final[0])),
                         conditional_displacement=complex(conditional), cutoff=d)


def fragment_infidelity(params: ECDPulseParams) -> float:
    return verify_fragment(params).infidelity


def _refine(params: ECDPulseParams) -> ECDPulseParams:
    """Nelder-Mead on the four amplitudes: branch error plus 10 x residual frame displacement."""
    target = params.beta / 2

    def objective(x: np.ndarray) -> float:
        trial = params.with_amplitudes(x[0::2] + 1j * x[1::2])
        branches = branch_evolution(trial.cavity_samples(), trial.dt, trial.chi, trial.center)
        a, b = branches.conditional_displacements
        return abs(a - target) + abs(b + target) + 10 * abs(branches.final[0])

    x0 = np.column_stack([np.real(params.amplitudes), np.imag(params.amplitudes)]).reshape(-1)
    result = minimize(objective, x0, method='Nelder-Mead',
                      options={'xatol': 1e-6, 'fatol': 1e-12, 'maxiter': 4000})
    refined = params.with_amplitudes(result.x[0::2] + 1j * result.x[1::2])
    return replace(refined, echo_phase=echo_phase(refined))


def synthesize_ecd_pulse(beta: complex, chi: float, echo: Union[ComplexEnvelope, np.ndarray], dt: float,
                         mode: int = 1, constraints: Optional[SynthesisConstraints] = None
                         ) -> Tuple[ECDPulseParams, PulseSchedule]:
    """
    Synthesize an ECD(beta) fragment for one cavity.

    Args:
        beta: Conditional displacement
        chi: Dispersive shift of the driven mode (rad/s)
        echo: X_pi pulse placed at the fragment midpoint
        dt: Sample spacing (s); must match the echo pulse
        mode: Cavity index (1 or 2)
        constraints: Synthesis limits and tolerances

    Returns:
        (ECDPulseParams, fragment schedule)

    Raises:
        SynthesisError: If beta is infeasible under the constraints or the check fails
    """
    constraints = constraints or SynthesisConstraints()
    if mode not in (1, 2):
        raise InvalidArgumentError(f"cavity mode must be 1 or 2, got {mode}")
    if chi == 0.0 and beta != 0:
        raise SynthesisError("conditional displacements need a non-zero dispersive shift")
    echo_samples = echo.samples if isinstance(echo, ComplexEnvelope) else np.asarray(echo, dtype=complex)
    if isinstance(echo, ComplexEnvelope) and abs(echo.dt - dt) > 1e-15:
        raise InvalidArgumentError(f"echo pulse dt {echo.dt} does not match fragment dt {dt}")
    if len(echo_samples) % 2:
        echo_samples = np.concatenate([echo_samples, [0j]])

    shape = gaussian_displacement(constraints.sigma, dt, constraints.truncation)
    beta = complex(beta)
    if beta == 0:
        r, n_wait = np.zeros(4, dtype=complex), 0
    else:
        r, n_wait = solve_amplitudes(beta, chi, shape, dt, len(echo_samples), constraints.max_amplitude,
                                     int(constraints.max_wait / dt))
    params = ECDPulseParams(beta=beta, mode=mode, chi=chi, dt=dt, sigma=constraints.sigma,
                            amplitudes=tuple(complex(x) for x in r), n_wait=n_wait, echo_phase=0.0,
                            shape=shape, echo=echo_samples)
    params = replace(params, echo_phase=echo_phase(params))

    if constraints.verify:
        check = verify_fragment(params)
        if check.infidelity > constraints.fragment_tol or check.final_displacement > constraints.return_tol:
            logger.info("fragment beta=%s missed tolerance (%.2e, |alpha_f| %.2e); refining",
                        beta, check.infidelity, check.final_displacement)
            params = _refine(params)
            check = verify_fragment(params)
        if check.infidelity > constraints.fragment_tol or check.final_displacement > constraints.return_tol:
            raise SynthesisError(
                f"fragment for beta={beta} reaches infidelity {check.infidelity:.2e} and "
                f"|alpha(t_f)| = {check.final_displacement:.2e}"
            )
        if np.max(np.abs(params.amplitudes)) > constraints.max_amplitude * (1 + 1e-9):
            raise SynthesisError(f"refined amplitudes for beta={beta} exceed the drive limit")
        logger.debug("fragment beta=%s: t_w = %.1f ns, infidelity %.2e", beta, params.t_wait * 1e9, check.infidelity)
    return params, params.fragment()


__all__ = [
    'SynthesisConstraints', 'ECDPulseParams', 'BranchEvolution', 'FragmentCheck',
    'gaussian_displacement', 'chi_only', 'solve_amplitudes', 'branch_evolution', 'echo_phase',
    'verify_fragment', 'fragment_infidelity', 'synthesize_ecd_pulse',
]
