"""
Dispersive model of one transmon ancilla coupled to two cavity modes.

Frequencies are angular (rad/s) everywhere inside the package; configuration files
carry Hz and are converted on ingestion with a single multiplication by 2*pi.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh
from typing_extensions import Self

from services.errors import (
    IntegrationError,
    InvalidArgumentError,
    MissingParameterError,
    OutOfRegimeError,
)
from services.hilbert import OperatorSet, destroy, mode_operators

logger = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
DISPERSIVE_GUARD = 0.2

Pair = Tuple[float, float]
ComplexPair = Tuple[complex, complex]


def hz(value: float) -> float:
    """Convert a frequency in Hz to rad/s (value * 2*pi, bit-exact)."""
    return float(value) * TWO_PI


def _pair(value: Any, name: str) -> Pair:
    if isinstance(value, (int, float)):
        return (float(value), float(value))
    values = tuple(float(v) for v in value)
    if len(values) != 2:
        raise InvalidArgumentError(f"{name} needs two entries (one per cavity), got {len(values)}")
    return values


@dataclass(frozen=True)
class SystemParams:
    """
    Physical parameters of the ancilla-cavity system.

    Attributes:
        omega_q: Transmon frequency (rad/s)
        K_q: Transmon anharmonicity (rad/s, negative)
        omega: Cavity frequencies (rad/s)
        g: Couplings (rad/s)
        d_q: Transmon truncation
        d_c: Cavity truncations
        ej_ec_ratio: E_J/E_C, needed only for sixth-order terms
    """
    omega_q: float
    K_q: float
    omega: Pair
    g: Pair
    d_q: int = 3
    d_c: Tuple[int, int] = (10, 10)
    ej_ec_ratio: Optional[float] = None

    @property
    def delta(self) -> Pair:
        return (self.omega[0] - self.omega_q, self.omega[1] - self.omega_q)

    @property
    def ratios(self) -> Pair:
        return tuple(g / d for g, d in zip(self.g, self.delta))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.d_q, self.d_c[0], self.d_c[1])

    def check_regime(self) -> None:
        """
        Raises:
            OutOfRegimeError: If g/|Delta| >= 0.2 or |Delta| <= |K_q| for any mode
        """
        for i, (g, d) in enumerate(zip(self.g, self.delta)):
            if d == 0 or abs(g / d) >= DISPERSIVE_GUARD:
                raise OutOfRegimeError(f"mode {i + 1}: g/|Delta| must stay below {DISPERSIVE_GUARD}")
            if abs(d) <= abs(self.K_q):
                raise OutOfRegimeError(f"mode {i + 1}: |Delta| must exceed |K_q|")

    def with_chi(self, target_chi: float) -> Self:
        """Copy with both couplings chosen so that each mode has dispersive shift target_chi."""
        g = tuple(invert_chi_to_coupling(target_chi, self, mode) for mode in (0, 1))
        return replace(self, g=g)

    def with_dims(self, d_q: Optional[int] = None, d_c: Optional[Tuple[int, int]] = None) -> Self:
        return replace(self, d_q=d_q or self.d_q, d_c=tuple(d_c) if d_c else self.d_c)

    @classmethod
    def default_device(cls, chi: Optional[float] = None) -> "SystemParams":
        """K_q/2pi = -200 MHz, Delta/2pi = 2 GHz, optionally tuned to dispersive shift chi (rad/s)."""
        params = cls(
            omega_q=hz(5.0e9),
            K_q=hz(-200e6),
            omega=(hz(7.0e9), hz(7.0e9)),
            g=(0.0, 0.0),
            ej_ec_ratio=50.0,
        )
        return params.with_chi(chi) if chi is not None else params

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "SystemParams":
        """
        Build from the `physics` section of a run config (frequencies in Hz).

        Either `g_hz` or `chi_hz` fixes the couplings; `chi_hz` is inverted per mode.
        """
        omega_c = _pair(section['omega_c_hz'], 'omega_c_hz')
        params = cls(
            omega_q=hz(section['omega_q_hz']),
            K_q=hz(section['K_q_hz']),
            omega=(hz(omega_c[0]), hz(omega_c[1])),
            g=tuple(hz(v) for v in _pair(section.get('g_hz', 0.0), 'g_hz')),
            d_q=int(section.get('d_q', 3)),
            d_c=tuple(int(v) for v in _pair(section.get('d_c', 10), 'd_c')),
            ej_ec_ratio=section.get('ej_ec_ratio'),
        )
        if section.get('chi_hz') is not None:
            params = params.with_chi(hz(section['chi_hz']))
        return params


@dataclass(frozen=True)
class DerivedNonlinearities:
    """Dispersive-model constants consumed by every Hamiltonian builder (rad/s)."""
    chi: Pair
    chi_p: Pair
    K: Pair
    K12: float
    K_q: float
    G_q: float = 0.0
    G: Pair = (0.0, 0.0)
    sixth_order: bool = False

    def restricted(self, self_kerr: bool = True, cross_kerr: bool = True, second_order: bool = True) -> Self:
        """Copy with selected nonlinearities switched off (chi and K_q always kept)."""
        return replace(
            self,
            K=self.K if self_kerr else (0.0, 0.0),
            K12=self.K12 if cross_kerr else 0.0,
            chi_p=self.chi_p if second_order else (0.0, 0.0),
        )

    def only_chi(self) -> Self:
        return replace(self.restricted(False, False, False), G=(0.0, 0.0), sixth_order=False)

    def with_chi(self, chi: Pair) -> Self:
        return replace(self, chi=tuple(chi))


def derive_nonlinearities(p: SystemParams, sixth_order: bool = False) -> DerivedNonlinearities:
    """
    Dispersive constants from the circuit parameters.

    chi = 2 r^2 K_q - 8 r^4 K_q, chi' = 9 r^4 K_q^2 / Delta, K = r^4 K_q,
    K12 = 2 (g1 g2 / Delta1 Delta2)^2 K_q, G_q = (E_C/6) sqrt(2 E_C/E_J), G = r^6 G_q,
    with r = g/Delta and E_C = |K_q|.

    Args:
        p: System parameters
        sixth_order: Mark the sixth-order terms as active in builders

    Returns:
        DerivedNonlinearities

    Raises:
        OutOfRegimeError: If the dispersive guard is violated
    """
    p.check_regime()
    r = np.array(p.ratios, dtype=float)
    delta = np.array(p.delta, dtype=float)
    chi = 2 * r ** 2 * p.K_q - 8 * r ** 4 * p.K_q
    chi_p = 9 * r ** 4 * p.K_q ** 2 / delta
    kerr = r ** 4 * p.K_q
    k12 = 2 * (r[0] * r[1]) ** 2 * p.K_q
    g_q = 0.0
    if p.ej_ec_ratio:
        e_c = abs(p.K_q)
        g_q = (e_c / 6) * np.sqrt(2.0 / p.ej_ec_ratio)
    sextic = r ** 6 * g_q
    if sixth_order and not p.ej_ec_ratio:
        raise MissingParameterError("sixth-order terms need ej_ec_ratio")
    return DerivedNonlinearities(
        chi=tuple(chi.tolist()),
        chi_p=tuple(chi_p.tolist()),
        K=tuple(kerr.tolist()),
        K12=float(k12),
        K_q=float(p.K_q),
        G_q=float(g_q),
        G=tuple(sextic.tolist()),
        sixth_order=sixth_order,
    )


def invert_chi_to_coupling(target_chi: float, p: SystemParams, mode: int = 0) -> float:
    """
    Coupling g of one mode that reproduces a target dispersive shift.

    Solves 8x^2 - 2x + chi/K_q = 0 for x = (g/Delta)^2 on its small root.

    Raises:
        OutOfRegimeError: If chi has the wrong sign or no root lies in the regime
    """
    if target_chi == 0:
        return 0.0
    c = target_chi / p.K_q
    disc = 1.0 - 8.0 * c
    if c < 0 or disc < 0:
        raise OutOfRegimeError(f"no coupling gives chi/2pi = {target_chi / TWO_PI:.4g} Hz for K_q/2pi = {p.K_q / TWO_PI:.4g} Hz")
    x = c / (1.0 + np.sqrt(disc))
    # one Newton step on the quadratic polishes the last bits
    x -= (8 * x * x - 2 * x + c) / (16 * x - 2)
    ratio = np.sqrt(x)
    if ratio >= DISPERSIVE_GUARD:
        raise OutOfRegimeError(f"required g/Delta = {ratio:.3f} leaves the dispersive regime")
    return float(ratio * abs(p.delta[mode]))


def critical_amplitude(p: SystemParams) -> Pair:
    """Cavity amplitude Delta/(2g) at the critical photon number."""
    return tuple(abs(d) / (2 * g) if g else np.inf for g, d in zip(p.g, p.delta))


def sixth_order_alpha_bound(p: SystemParams) -> Pair:
    """
    Amplitude sqrt(K_i/G_i) below which sixth-order terms are negligible.

    Raises:
        MissingParameterError: If E_J/E_C is not supplied
    """
    if not p.ej_ec_ratio:
        raise MissingParameterError("sixth-order bound needs ej_ec_ratio (E_J/E_C)")
    bounds = []
    for r in p.ratios:
        if r == 0:
            bounds.append(np.inf)
            continue
        bounds.append(float(np.sqrt(6.0) / abs(r) * (p.ej_ec_ratio / 2.0) ** 0.25))
    return tuple(bounds)


def exact_dispersive_shifts(p: SystemParams, mode: int = 0, transmon_dim: int = 6, cavity_dim: int = 8) -> Dict[str, float]:
    """
    Dispersive shift and self-Kerr of one mode from exact lab-frame diagonalization.

    Dressed states are assigned by maximum overlap with the bare states; the
    lowest-energy eigenvector wins ties.

    Returns:
        {'chi': ..., 'K': ...} in rad/s
    """
    scale = TWO_PI * 1e9
    q = destroy(transmon_dim)
    a = destroy(cavity_dim)
    iq, ic = np.eye(transmon_dim), np.eye(cavity_dim)
    qq = np.kron(q, ic)
    aa = np.kron(iq, a)
    h = (p.omega_q * qq.conj().T @ qq
         + 0.5 * p.K_q * qq.conj().T @ qq.conj().T @ qq @ qq
         + p.omega[mode] * aa.conj().T @ aa
         + p.g[mode] * (aa.conj().T @ qq + aa @ qq.conj().T)) / scale
    energies, vectors = eigh(h)
    overlaps = np.abs(vectors) ** 2

    def level(j: int, n: int) -> float:
        return float(energies[int(np.argmax(overlaps[j * cavity_dim + n, :]))]) * scale

    chi = (level(1, 1) - level(1, 0)) - (level(0, 1) - level(0, 0))
    kerr = level(0, 2) - 2 * level(0, 1) + level(0, 0)
    return {'chi': chi, 'K': kerr}


@dataclass(frozen=True)
class DecoherenceRates:
    """
    Decay and dephasing rates (1/s).

    Attributes:
        gamma: Ancilla energy decay
        gamma_phi: Ancilla pure dephasing (jump operator sqrt(2 gamma_phi) q^dag q)
        kappa: Cavity energy decay per mode
        kappa_phi: Cavity pure dephasing per mode
    """
    gamma: float = 0.0
    gamma_phi: float = 0.0
    kappa: Pair = (0.0, 0.0)
    kappa_phi: Pair = (0.0, 0.0)

    def __post_init__(self):
        values = [self.gamma, self.gamma_phi, *self.kappa, *self.kappa_phi]
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise InvalidArgumentError(f"decoherence rates must be finite and non-negative, got {values}")

    @property
    def is_zero(self) -> bool:
        return not any([self.gamma, self.gamma_phi, *self.kappa, *self.kappa_phi])

    @classmethod
    def from_times(cls, T1: Optional[float] = None, Tphi: Optional[float] = None,
                   cavity_T1: Optional[Sequence[Optional[float]]] = None,
                   cavity_Tphi: Optional[Sequence[Optional[float]]] = None) -> "DecoherenceRates":
        """Rates as 1/T; a missing or infinite time means no decoherence of that kind."""
        def rate(t: Optional[float]) -> float:
            return 0.0 if t is None or not np.isfinite(t) else 1.0 / t

        cav_t1 = list(cavity_T1 or (None, None))
        cav_tphi = list(cavity_Tphi or (None, None))
        return cls(
            gamma=rate(T1),
            gamma_phi=rate(Tphi),
            kappa=(rate(cav_t1[0]), rate(cav_t1[1])),
            kappa_phi=(rate(cav_tphi[0]), rate(cav_tphi[1])),
        )

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "DecoherenceRates":
        return cls.from_times(
            T1=section.get('T1_s'),
            Tphi=section.get('Tphi_s'),
            cavity_T1=section.get('cavity_T1_s'),
            cavity_Tphi=section.get('cavity_Tphi_s'),
        )


def derive_decoherence(p: SystemParams, intrinsic: DecoherenceRates) -> DecoherenceRates:
    """
    Dressed rates from intrinsic ones through the ancilla-cavity hybridization.

    kappa_i += r_i^2 gamma, gamma += sum r_i^2 kappa_i,
    kappa_phi_i += r_i^4 gamma_phi, gamma_phi += sum r_i^4 kappa_phi_i.
    """
    r = np.array(p.ratios, dtype=float)
    kappa = np.array(intrinsic.kappa) + r ** 2 * intrinsic.gamma
    kappa_phi = np.array(intrinsic.kappa_phi) + r ** 4 * intrinsic.gamma_phi
    return DecoherenceRates(
        gamma=intrinsic.gamma + float(np.sum(r ** 2 * np.array(intrinsic.kappa))),
        gamma_phi=intrinsic.gamma_phi + float(np.sum(r ** 4 * np.array(intrinsic.kappa_phi))),
        kappa=tuple(kappa.tolist()),
        kappa_phi=tuple(kappa_phi.tolist()),
    )


@dataclass(frozen=True)
class Trajectory:
    """
    Classical cavity amplitudes alpha_i(t) on the pulse grid.

    Attributes:
        alpha: Shape (2, K + 1), alpha[:, k] = alpha(k dt); alpha[:, 0] = 0
        dalpha: Time derivatives at the same points
        dt: Grid step (s)
        damped: True when integrated with cavity decay (the eta trajectory)
    """
    alpha: np.ndarray
    dalpha: np.ndarray
    dt: float
    damped: bool = False

    @property
    def n_steps(self) -> int:
        return self.alpha.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def final(self) -> np.ndarray:
        return self.alpha[:, -1]

    def at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolation between grid points."""
        x = min(max(t / self.dt, 0.0), float(self.n_steps))
        k = min(int(np.floor(x)), self.n_steps - 1) if self.n_steps else 0
        if self.n_steps == 0:
            return self.alpha[:, 0]
        s = x - k
        a0, a1 = self.alpha[:, k], self.alpha[:, k + 1]
        f0, f1 = self.dalpha[:, k] * self.dt, self.dalpha[:, k + 1] * self.dt
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * a0 + h10 * f0 + h01 * a1 + h11 * f1

    def midpoints(self) -> np.ndarray:
        a0, a1 = self.alpha[:, :-1], self.alpha[:, 1:]
        f0, f1 = self.dalpha[:, :-1], self.dalpha[:, 1:]
        return 0.5 * (a0 + a1) + self.dt / 8 * (f0 - f1)

    def max_amplitude(self) -> Pair:
        return tuple(np.max(np.abs(self.alpha), axis=1).tolist())


def _extend(samples: np.ndarray, tail: Optional[Sequence[complex]] = None) -> np.ndarray:
    # drives vanish after the last sample unless the next value is given
    last = np.zeros((samples.shape[0], 1), dtype=complex) if tail is None else np.asarray(tail, dtype=complex).reshape(-1, 1)
    return np.concatenate([samples, last], axis=1)


def _trajectory_rhs(nl: DerivedNonlinearities, kappa: Optional[Pair]):
    chi = np.array(nl.chi)
    kerr = np.array(nl.K)
    sextic = np.array(nl.G) if nl.sixth_order else np.zeros(2)
    damping = np.array(kappa) if kappa is not None else np.zeros(2)

    def rhs(alpha: np.ndarray, drive: np.ndarray) -> np.ndarray:
        pop = np.abs(alpha) ** 2
        return (0.5j * chi * alpha
                - 1j * kerr * pop * alpha
                - 1j * nl.K12 * alpha * pop[::-1]
                - 1j * sextic * pop ** 2 * alpha
                - 0.5 * damping * alpha
                - 1j * drive)

    return rhs


def _rk4(rhs, drives: np.ndarray, dt: float, alpha0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n_steps = drives.shape[1] - 1
    alpha = np.zeros((2, n_steps + 1), dtype=complex)
    dalpha = np.zeros_like(alpha)
    alpha[:, 0] = alpha0
    for k in range(n_steps):
        w0, w1 = drives[:, k], drives[:, k + 1]
        wm = 0.5 * (w0 + w1)
        y = alpha[:, k]
        k1 = rhs(y, w0)
        k2 = rhs(y + 0.5 * dt * k1, wm)
        k3 = rhs(y + 0.5 * dt * k2, wm)
        k4 = rhs(y + dt * k3, w1)
        dalpha[:, k] = k1
        alpha[:, k + 1] = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    dalpha[:, n_steps] = rhs(alpha[:, n_steps], drives[:, n_steps])
    return alpha, dalpha


def integrate_trajectory(drives: Sequence[np.ndarray], dt: float, nl: DerivedNonlinearities,
                         kappa: Optional[Pair] = None, alpha0: Optional[Sequence[complex]] = None,
                         tail: Optional[Sequence[complex]] = None) -> Trajectory:
    """
    RK4 integration from an arbitrary initial amplitude, without the verification pass.

    `tail` is the drive value just after the last sample (zero by default); piecewise
    integrations pass the first sample of the next piece so the interpolation matches.
    """
    samples = _extend(np.vstack([np.asarray(d, dtype=complex) for d in drives]), tail)
    start = np.zeros(2, dtype=complex) if alpha0 is None else np.asarray(alpha0, dtype=complex)
    alpha, dalpha = _rk4(_trajectory_rhs(nl, kappa), samples, dt, start)
    return Trajectory(alpha=alpha, dalpha=dalpha, dt=dt, damped=kappa is not None)


def solve_trajectory(drives: Sequence[np.ndarray], dt: float, nl: DerivedNonlinearities,
                     kappa: Optional[Pair] = None, verify: bool = True, tol: float = 1e-6) -> Trajectory:
    """
    Integrate the classical displacement ODE with alpha_i(0) = 0.

    d alpha_i/dt = i chi_i alpha_i / 2 - i K_i |alpha_i|^2 alpha_i - i K12 alpha_i |alpha_j|^2
                   - i Omega_i  [- i G_i |alpha_i|^4 alpha_i]  [- kappa_i alpha_i / 2]

    Fixed-step RK4 on the pulse grid; drive values between samples are linearly
    interpolated. A second pass at dt/2 checks the step.

    Args:
        drives: Two complex sample arrays Omega_1[k], Omega_2[k] (rad/s) on a shared grid
        dt: Grid step (s)
        nl: Derived nonlinearities
        kappa: Optional cavity decay rates; the result is then the damped eta trajectory
        verify: Run the dt/2 verification pass
        tol: Allowed deviation of the verification pass, relative to max(1, max|alpha|)

    Returns:
        Trajectory on the K + 1 grid points

    Raises:
        IntegrationError: If the solution is not finite or the dt/2 pass disagrees
    """
    if len(drives) != 2 or len(drives[0]) != len(drives[1]):
        raise InvalidArgumentError("solve_trajectory needs two drive arrays of equal length")
    traj = integrate_trajectory(drives, dt, nl, kappa)
    if not np.all(np.isfinite(traj.alpha)):
        raise IntegrationError("trajectory diverged; reduce the step or the drive amplitude")
    if verify and traj.n_steps:
        coarse = _extend(np.vstack([np.asarray(d, dtype=complex) for d in drives]))
        fine = np.empty((2, 2 * coarse.shape[1] - 1), dtype=complex)
        fine[:, 0::2] = coarse
        fine[:, 1::2] = 0.5 * (coarse[:, :-1] + coarse[:, 1:])
        fine_alpha, _ = _rk4(_trajectory_rhs(nl, kappa), fine, dt / 2, np.zeros(2, dtype=complex))
        scale = max(1.0, float(np.max(np.abs(traj.alpha))))
        err = float(np.max(np.abs(fine_alpha[:, 0::2] - traj.alpha)))
        if not np.isfinite(err) or err > tol * scale:
            raise IntegrationError(f"trajectory step check failed: dt/2 pass deviates by {err:.3e}")
        logger.debug("trajectory verified: max step deviation %.3e", err)
    return traj


def _sample(samples: np.ndarray, dt: float, t: float) -> complex:
    k = int(np.floor(t / dt + 1e-9))
    if k < 0 or k >= len(samples):
        return 0j
    return complex(samples[k])


class RotatingFrameHamiltonian:
    """
    Hamiltonian in the frame co-rotating with the drives (cavity drive detuning -chi_i/2).

    H = sum_i [-chi_i/2 n_i + (chi_i n_i + chi'_i/2 a_i^dag^2 a_i^2) n_q + K_i/2 a_i^dag^2 a_i^2]
        + K12 n_1 n_2 + K_q/2 q^dag^2 q^2 + (sum_i Omega_i a_i^dag + eps q^dag + h.c.)

    Drives are piecewise constant: sample k on [k dt, (k+1) dt).
    """

    def __init__(self, nl: DerivedNonlinearities, ops: OperatorSet,
                 cavity_drives: Optional[Sequence[np.ndarray]] = None,
                 ancilla_drive: Optional[np.ndarray] = None, dt: float = 1e-9):
        self.nl = nl
        self.ops = ops
        self.dt = dt
        self.cavity_drives = [np.asarray(d, dtype=complex) for d in (cavity_drives or ([], []))]
        self.ancilla_drive = np.asarray(ancilla_drive if ancilla_drive is not None else [], dtype=complex)
        self.static = self._static()

    def _static(self) -> np.ndarray:
        ops, nl = self.ops, self.nl
        h = 0.5 * nl.K_q * ops.kerr_q + nl.K12 * ops.n[0] @ ops.n[1]
        for i in range(2):
            h = h + (-0.5 * nl.chi[i] * ops.n[i]
                     + (nl.chi[i] * ops.n[i] + 0.5 * nl.chi_p[i] * ops.kerr[i]) @ ops.n_q
                     + 0.5 * nl.K[i] * ops.kerr[i])
            if nl.sixth_order:
                h = h + nl.G[i] / 3.0 * ops.sextic[i]
        return h

    def drive_values(self, t: float) -> Tuple[complex, complex, complex]:
        omega = [_sample(d, self.dt, t) for d in self.cavity_drives]
        return omega[0], omega[1], _sample(self.ancilla_drive, self.dt, t)

    def __call__(self, t: float) -> np.ndarray:
        o1, o2, eps = self.drive_values(t)
        ops = self.ops
        drive = o1 * ops.a[0].conj().T + o2 * ops.a[1].conj().T + eps * ops.q.conj().T
        return self.static + drive + drive.conj().T


def build_rotating_hamiltonian(nl: DerivedNonlinearities, drives: Sequence[np.ndarray], t: float,
                               dims: Sequence[int], ancilla_drive: Optional[np.ndarray] = None,
                               dt: float = 1e-9) -> np.ndarray:
    """Rotating-frame Hamiltonian matrix at time t (fresh array)."""
    return RotatingFrameHamiltonian(nl, mode_operators(dims), drives, ancilla_drive, dt)(t)


class DisplacedFrameHamiltonian:
    """
    Hamiltonian after removing the classical displacement alpha_i(t) of each cavity.

    H' = H_static + H_diag(t) + H_offdiag(t), where the linear drive terms cancel by
    construction of the trajectory. Only chi, chi', K, K12 and K_q enter.
    """

    def __init__(self, traj: Trajectory, nl: DerivedNonlinearities, ops: OperatorSet,
                 ancilla_drive: Optional[np.ndarray] = None, dt: Optional[float] = None):
        self.traj = traj
        self.nl = nl
        self.ops = ops
        self.dt = dt or traj.dt
        self.ancilla_drive = np.asarray(ancilla_drive if ancilla_drive is not None else [], dtype=complex)
        plain = replace(nl, sixth_order=False)
        self.static = RotatingFrameHamiltonian(plain, ops)._static()
        self._prepare()

    def _prepare(self) -> None:
        ops = self.ops
        qd = ops.q.conj().T
        ad = [a.conj().T for a in ops.a]
        self._n_nq = [ops.n[i] @ ops.n_q for i in range(2)]
        self._ad2a = [ad[i] @ ad[i] @ ops.a[i] for i in range(2)]
        self._ad2a_nq = [x @ ops.n_q for x in self._ad2a]
        self._ad2 = [ad[i] @ ad[i] for i in range(2)]
        self._ad2_nq = [x @ ops.n_q for x in self._ad2]
        self._a_nq = [ops.a[i] @ ops.n_q for i in range(2)]
        self._n1_ad2 = ops.n[0] @ ad[1]
        self._ad1_n2 = ad[0] @ ops.n[1]
        self._ad1_ad2 = ad[0] @ ad[1]
        self._ad1_a2 = ad[0] @ ops.a[1]
        self._qd = qd

    def alpha(self, t: float) -> np.ndarray:
        return self.traj.at(t)

    def diagonal(self, alpha: np.ndarray) -> np.ndarray:
        nl, ops = self.nl, self.ops
        pop = np.abs(alpha) ** 2
        h = np.zeros_like(self.static)
        nq_coef = 0.0
        for i in range(2):
            j = 1 - i
            h = h + (2 * nl.K[i] * pop[i] + nl.K12 * pop[j]) * ops.n[i]
            h = h + 2 * nl.chi_p[i] * pop[i] * self._n_nq[i]
            nq_coef += nl.chi[i] * pop[i] + 0.5 * nl.chi_p[i] * pop[i] ** 2
        return h + nq_coef * ops.n_q

    def off_diagonal(self, alpha: np.ndarray, eps: complex) -> np.ndarray:
        """Non-Hermitian half M of the off-diagonal part; H_offdiag = M + M^dag."""
        nl = self.nl
        m = eps * self._qd
        for i in range(2):
            a_i = alpha[i]
            pop = abs(a_i) ** 2
            m = m + nl.K[i] * a_i * self._ad2a[i] + 0.5 * nl.K[i] * a_i ** 2 * self._ad2[i]
            m = m + nl.chi_p[i] * a_i * self._ad2a_nq[i] + 0.5 * nl.chi_p[i] * a_i ** 2 * self._ad2_nq[i]
            m = m + (nl.chi[i] * np.conj(a_i) + nl.chi_p[i] * pop * np.conj(a_i)) * self._a_nq[i]
        a1, a2 = alpha
        m = m + nl.K12 * (a2 * self._n1_ad2 + a1 * self._ad1_n2 + a1 * a2 * self._ad1_ad2
                          + a1 * np.conj(a2) * self._ad1_a2)
        return m

    def __call__(self, t: float) -> np.ndarray:
        alpha = self.alpha(t)
        m = self.off_diagonal(alpha, _sample(self.ancilla_drive, self.dt, t))
        return self.static + self.diagonal(alpha) + m + m.conj().T


def build_displaced_hamiltonian(traj: Trajectory, nl: DerivedNonlinearities, eps: Optional[np.ndarray],
                                t: float, dims: Sequence[int]) -> np.ndarray:
    """Displaced-frame Hamiltonian matrix at time t (fresh array)."""
    return DisplacedFrameHamiltonian(traj, nl, mode_operators(dims), eps)(t)


def physics_from_config(section: Mapping[str, Any]) -> Tuple[SystemParams, DecoherenceRates]:
    """Parse the `physics` config section into parameters and intrinsic rates."""
    params = SystemParams.from_config(section)
    rates = DecoherenceRates.from_config(section.get('decoherence', {}))
    return params, rates


__all__ = [
    'SystemParams', 'DerivedNonlinearities', 'DecoherenceRates', 'Trajectory',
    'RotatingFrameHamiltonian', 'DisplacedFrameHamiltonian',
    'derive_nonlinearities', 'invert_chi_to_coupling', 'derive_decoherence',
    'sixth_order_alpha_bound', 'critical_amplitude', 'exact_dispersive_shifts',
    'solve_trajectory', 'integrate_trajectory', 'build_rotating_hamiltonian',
    'build_displaced_hamiltonian', 'physics_from_config', 'hz', 'TWO_PI',
]
