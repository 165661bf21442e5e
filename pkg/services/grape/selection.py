"""
Duration selection, robustness sweeps and the pulse library.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.dynamics import robustness_metrics
from services.errors import InvalidArgumentError
from services.grape.base import TransmonControl
from services.grape.envelopes import ComplexEnvelope, drag_pulse
from services.grape.optimizer import DetuningGrid, OptimizationReport, PulseConstraints, optimize_pulse
from services.model import TWO_PI, DecoherenceRates

logger = logging.getLogger(__name__)


def cost_open(env: ComplexEnvelope, grid: DetuningGrid, theta: float, control: TransmonControl,
              rates: DecoherenceRates) -> float:
    """C_o: weighted mean open-system gate infidelity over the grid."""
    values = control.open_infidelities(env, grid.deltas, theta, rates)
    return float(np.sum(np.asarray(grid.weights) * values))


def select_duration(durations: Sequence[float], rates: DecoherenceRates, theta: float, grid: DetuningGrid,
                    control: TransmonControl, constraints: Optional[PulseConstraints] = None,
                    workers: Optional[int] = None,
                    starts: Optional[Sequence[Tuple[int, int, int]]] = None) -> OptimizationReport:
    """
    Closed-system optimization per duration, then pick the duration with the lowest C_o.

    Ties go to the longer duration.

    Raises:
        InvalidArgumentError: If durations is empty
    """
    if not durations:
        raise InvalidArgumentError("select_duration needs at least one duration")
    reports: Dict[float, OptimizationReport] = {}
    closed: Dict[float, float] = {}
    opened: Dict[float, float] = {}
    for t_g in sorted(durations):
        report = optimize_pulse(theta, t_g, grid, control, constraints, starts=starts, workers=workers)
        reports[t_g] = report
        closed[t_g] = report.best_cost
        opened[t_g] = cost_open(report.envelope, grid, theta, control, rates)
        logger.info("t_g = %.1f ns: C_c = %.3e, C_o = %.3e", t_g * 1e9, closed[t_g], opened[t_g])

    best = min(sorted(durations), key=lambda t: (opened[t], -t))
    chosen = reports[best]
    chosen.closed_costs = closed
    chosen.open_costs = opened
    chosen.selected_duration = best
    logger.info("selected duration %.1f ns", best * 1e9)
    return chosen


@dataclass
class RobustnessCurve:
    """Closed and open infidelity versus detuning, with mean/std summaries."""
    deltas: np.ndarray
    closed: np.ndarray
    open: Optional[np.ndarray] = None
    metrics: Dict[str, float] = field(default_factory=dict)

    def rows(self):
        opened = self.open if self.open is not None else [None] * len(self.deltas)
        return list(zip(self.deltas.tolist(), self.closed.tolist(), list(opened)))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'delta_hz': self.deltas / TWO_PI, 'closed': self.closed})
        if self.open is not None:
            frame['open'] = self.open
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


def robustness_curve(env: ComplexEnvelope, deltas: Sequence[float], theta: float, control: TransmonControl,
                     rates: Optional[DecoherenceRates] = None,
                     weights: Optional[Sequence[float]] = None) -> RobustnessCurve:
    """
    Infidelity sweep over detuning.

    Args:
        env: Pulse to evaluate
        deltas: Detunings (rad/s)
        theta: Target rotation angle
        control: Transmon model
        rates: When given, the open-system infidelity is evaluated too
        weights: Distribution used for the mean/std summaries (uniform by default)
    """
    deltas = np.asarray(deltas, dtype=float)
    closed = control.infidelities(env, deltas, theta)
    curve = RobustnessCurve(deltas=deltas, closed=closed)
    mean, std = robustness_metrics(closed, weights)
    curve.metrics = {'closed_mean': mean, 'closed_std': std}
    if rates is not None:
        curve.open = control.open_infidelities(env, deltas, theta, rates)
        mean, std = robustness_metrics(curve.open, weights)
        curve.metrics.update({'open_mean': mean, 'open_std': std})
    return curve


class PulseLibrary:
    """
    Ancilla rotation pulses keyed by rotation angle.

    Holds X_pi and X_pi/2 for one scheme ('qoc' or 'drag').
    """

    SCHEMES = ('qoc', 'drag')

    def __init__(self, scheme: str, pulses: Mapping[float, ComplexEnvelope]):
        if scheme not in self.SCHEMES:
            raise InvalidArgumentError(f"unknown pulse scheme {scheme!r}, expected one of {self.SCHEMES}")
        self.scheme = scheme
        self.pulses = dict(pulses)

    @classmethod
    def drag(cls, control: TransmonControl, t_g: float) -> "PulseLibrary":
        return cls('drag', {
            np.pi: drag_pulse(np.pi, t_g, control.K_q, control.dt, control),
            np.pi / 2: drag_pulse(np.pi / 2, t_g, control.K_q, control.dt, control),
        })

    @classmethod
    def from_reports(cls, *reports: OptimizationReport) -> "PulseLibrary":
        return cls('qoc', {r.theta: r.envelope for r in reports})

    @classmethod
    def from_files(cls, paths: Sequence[Union[str, Path]]) -> "PulseLibrary":
        return cls.from_reports(*(OptimizationReport.from_json(p) for p in paths))

    def get(self, theta: float) -> ComplexEnvelope:
        for angle, env in self.pulses.items():
            if abs(angle - theta) < 1e-9:
                return env
        raise InvalidArgumentError(f"no {self.scheme} pulse for rotation angle {theta:.6f}")

    @property
    def x_pi(self) -> ComplexEnvelope:
        return self.get(np.pi)

    @property
    def x_half_pi(self) -> ComplexEnvelope:
        return self.get(np.pi / 2)


__all__ = ['cost_open', 'select_duration', 'robustness_curve', 'RobustnessCurve', 'PulseLibrary']
