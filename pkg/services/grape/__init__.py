"""
Robust ancilla pulse services.

This package provides the transmon model, envelope tools, the optimizer and the
post-processing used to pick and characterize pulses.
"""

from .base import TransmonControl
from .envelopes import ComplexEnvelope, bandwidth_filter, drag_pulse, initial_ansatz
from .optimizer import DetuningGrid, OptimizationReport, PulseConstraints, cost_closed, optimize_pulse
from .phase import LinearPhase, extract_linear_phase
from .selection import PulseLibrary, RobustnessCurve, cost_open, robustness_curve, select_duration

__all__ = [
    'TransmonControl',
    'ComplexEnvelope',
    'bandwidth_filter',
    'drag_pulse',
    'initial_ansatz',
    'DetuningGrid',
    'OptimizationReport',
    'PulseConstraints',
    'cost_closed',
    'optimize_pulse',
    'LinearPhase',
    'extract_linear_phase',
    'PulseLibrary',
    'RobustnessCurve',
    'cost_open',
    'robustness_curve',
    'select_duration',
]
