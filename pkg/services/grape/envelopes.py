"""
Complex drive envelopes: construction, filtering and CSV storage.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import null_space, qr
from scipy.optimize import minimize_scalar

from services.errors import InvalidArgumentError
from services.model import TWO_PI

logger = logging.getLogger(__name__)

ENVELOPE_COLUMNS = ['t_s', 'eps_I_hz', 'eps_Q_hz']


def sample_count(duration: float, dt: float) -> int:
    """Number of samples K with K dt = duration."""
    if duration <= 0 or dt <= 0:
        raise InvalidArgumentError(f"duration and dt must be positive, got {duration}, {dt}")
    count = int(round(duration / dt))
    if count < 1 or abs(count * dt - duration) > 1e-6 * dt:
        raise InvalidArgumentError(f"duration {duration} is not a multiple of dt {dt}")
    return count


@dataclass(frozen=True, eq=False)
class ComplexEnvelope:
    """
    Piecewise-constant drive eps = eps_I + i eps_Q (rad/s).

    Sample k is taken at t_k = k dt and holds on [t_k, t_k + dt); the grid is
    periodic with t_K = t_g identified with t_0.
    """
    samples: np.ndarray
    dt: float

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=complex)
        data.setflags(write=False)
        object.__setattr__(self, 'samples', data)
        if self.dt <= 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")

    @classmethod
    def from_quadratures(cls, eps_i: np.ndarray, eps_q: np.ndarray, dt: float) -> "ComplexEnvelope":
        return cls(np.asarray(eps_i, dtype=float) + 1j * np.asarray(eps_q, dtype=float), dt)

    @classmethod
    def zeros(cls, duration: float, dt: float) -> "ComplexEnvelope":
        return cls(np.zeros(sample_count(duration, dt), dtype=complex), dt)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    @property
    def eps_i(self) -> np.ndarray:
        return self.samples.real

    @property
    def eps_q(self) -> np.ndarray:
        return self.samples.imag

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.n_samples else 0.0

    def rotation_angle(self) -> float:
        """Qubit rotation angle 2 * integral of eps_I."""
        return float(2 * self.dt * np.sum(self.eps_i))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't_s': self.times,
            'eps_I_hz': self.eps_i / TWO_PI,
            'eps_Q_hz': self.eps_q / TWO_PI,
        })

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], dt: Optional[float] = None) -> "ComplexEnvelope":
        """
        Load an envelope written by to_csv.

        Args:
            path: CSV file with columns t_s, eps_I_hz, eps_Q_hz
            dt: Sample spacing; inferred from the time column when omitted

        Raises:
            InvalidArgumentError: If columns are missing or dt cannot be inferred
        """
        frame = pd.read_csv(path, float_precision='round_trip')
        missing = [c for c in ENVELOPE_COLUMNS if c not in frame.columns]
        if missing:
            raise InvalidArgumentError(f"envelope file {path} lacks columns {missing}")
        if dt is None:
            if len(frame) < 2:
                raise InvalidArgumentError(f"cannot infer dt from {path}; pass it explicitly")
            dt = float(frame['t_s'].iloc[1] - frame['t_s'].iloc[0])
        return cls.from_quadratures(frame['eps_I_hz'].to_numpy() * TWO_PI,
                                    frame['eps_Q_hz'].to_numpy() * TWO_PI, dt)


def initial_ansatz(theta: float, t_g: float, a: float, b: float, c: float, K_q: float,
                   dt: float) -> ComplexEnvelope:
    """
    Four-cosine I quadrature with DC term theta/2 and a derivative Q quadrature.

    eps_I(t) = [(a - theta/2) cos(w t) + (b - a) cos(2 w t) + (c - b) cos(3 w t) - c cos(4 w t) + theta/2] / t_g
    eps_Q(t) = -d eps_I / dt / K_q, with w = 2 pi / t_g.
    """
    t = np.arange(sample_count(t_g, dt)) * dt
    w = TWO_PI / t_g
    coeffs = np.array([a - theta / 2, b - a, c - b, -c])
    harmonics = np.arange(1, 5)
    phase = np.outer(t, harmonics) * w
    eps_i = (np.cos(phase) @ coeffs + theta / 2) / t_g
    deps_i = -(np.sin(phase) @ (coeffs * harmonics * w)) / t_g
    return ComplexEnvelope.from_quadratures(eps_i, -deps_i / K_q, dt)


def _drag_shape(t_g: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    sigma = t_g / 4
    t = np.arange(sample_count(t_g, dt)) * dt - t_g / 2
    gauss = np.exp(-t ** 2 / (2 * sigma ** 2))
    shape = gauss - np.exp(-2.0)
    return shape, -t / sigma ** 2 * gauss


def drag_pulse(theta: float, t_g: float, K_q: float, dt: float, control=None) -> ComplexEnvelope:
    """
    DRAG pulse: Gaussian with sigma = t_g/4 truncated at +-2 sigma and lifted to zero at the edges.

    The amplitude starts from the area theta/2 and, when a TransmonControl is given, is
    refined by minimizing the closed infidelity at zero detuning.
    """
    shape, dshape = _drag_shape(t_g, dt)
    if theta == 0:
        return ComplexEnvelope(np.zeros(len(shape), dtype=complex), dt)
    amplitude = theta / 2 / (dt * shape.sum())

    def build(amp: float) -> ComplexEnvelope:
        return ComplexEnvelope.from_quadratures(amp * shape, -amp * dshape / K_q, dt)

    if control is not None:
        result = minimize_scalar(lambda x: control.infidelity(build(x * amplitude), 0.0, theta),
                                 bounds=(0.8, 1.2), method='bounded', options={'xatol': 1e-10})
        amplitude *= result.x
        logger.debug("DRAG amplitude calibrated by factor %.6f", result.x)
    return build(amplitude)


def _band_bins(n: int, duration: float, cutoff: float) -> int:
    return min(int(np.floor(cutoff * duration + 1e-9)), n // 2)


def bandwidth_filter(env: ComplexEnvelope, cutoff_i: float, cutoff_q: float) -> ComplexEnvelope:
    """
    Hard spectral cutoff per quadrature (cutoffs in Hz); DC always passes.
    """
    n = env.n_samples
    freqs = np.fft.rfftfreq(n, env.dt)
    out = []
    for values, cutoff in ((env.eps_i, cutoff_i), (env.eps_q, cutoff_q)):
        spectrum = np.fft.rfft(values)
        spectrum[freqs > cutoff * (1 + 1e-9)] = 0
        out.append(np.fft.irfft(spectrum, n=n))
    return ComplexEnvelope.from_quadratures(out[0], out[1], env.dt)


@lru_cache(maxsize=64)
def _pinned_basis(n: int, bins: int) -> np.ndarray:
    j = np.arange(n)
    columns = [np.ones(n)]
    for k in range(1, bins + 1):
        columns.append(np.cos(TWO_PI * k * j / n))
        if 2 * k != n:
            columns.append(np.sin(TWO_PI * k * j / n))
    q, _ = qr(np.column_stack(columns), mode='economic')
    basis = q @ null_space(q[:1, :])
    basis.setflags(write=False)
    return basis


def band_limited_basis(n: int, duration: float, cutoff: float) -> np.ndarray:
    """
    Orthonormal columns spanning real envelopes band-limited to cutoff (Hz) that vanish at t = 0.
    """
    return _pinned_basis(n, _band_bins(n, duration, cutoff))


__all__ = [
    'ComplexEnvelope', 'initial_ansatz', 'drag_pulse', 'bandwidth_filter',
    'band_limited_basis', 'sample_count',
]
