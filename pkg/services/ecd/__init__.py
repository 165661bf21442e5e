"""
Echoed conditional displacement services.

This package provides ECD circuits and their compilation, fragment synthesis, the
virtual phase ledger and schedule simulation.
"""

from .circuit import CompilationTarget, ECDBlock, ECDCircuit, apply_circuit, compile_circuit, decompose_rotation, ecd_unitary
from .identities import verify_commutator_identities
from .ledger import PhaseEvent, PulseSchedule
from .schedule import (
    ScheduleOptions,
    apply_phase_corrections,
    circuit_to_schedule,
    composite_phase_study,
    logical_state,
    robust_linear_phase_correction,
    simulate_schedule,
    spurious_phases,
)
from .synthesis import ECDPulseParams, SynthesisConstraints, fragment_infidelity, synthesize_ecd_pulse

__all__ = [
    'CompilationTarget',
    'ECDBlock',
    'ECDCircuit',
    'apply_circuit',
    'compile_circuit',
    'decompose_rotation',
    'ecd_unitary',
    'verify_commutator_identities',
    'PhaseEvent',
    'PulseSchedule',
    'ScheduleOptions',
    'apply_phase_corrections',
    'circuit_to_schedule',
    'composite_phase_study',
    'logical_state',
    'robust_linear_phase_correction',
    'simulate_schedule',
    'spurious_phases',
    'ECDPulseParams',
    'SynthesisConstraints',
    'fragment_infidelity',
    'synthesize_ecd_pulse',
]
