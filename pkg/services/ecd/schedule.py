"""
Circuit-to-pulse scheduling, spurious-phase correction and schedule simulation.
"""

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from services.dynamics import CollapseSet, PropagationResult, TimeGrid, monte_carlo, propagate_closed
from services.ecd.circuit import ECDCircuit, decompose_rotation
from services.ecd.ledger import FragmentRecord, PhaseEvent, PulseSchedule, ancilla_pulse, virtual_z
from services.ecd.synthesis import ECDPulseParams, SynthesisConstraints, synthesize_ecd_pulse
from services.errors import CorrectionRefusedError, InvalidArgumentError, NotRobustError
from services.grape.base import TransmonControl
from services.grape.envelopes import ComplexEnvelope
from services.grape.optimizer import DetuningGrid
from services.grape.phase import extract_linear_phase
from services.grape.selection import PulseLibrary
from services.hilbert import OperatorSet, QuantumState, displacement_operator, mode_operators
from services.model import (
    TWO_PI,
    DecoherenceRates,
    DerivedNonlinearities,
    DisplacedFrameHamiltonian,
    SystemParams,
    Trajectory,
    derive_nonlinearities,
    integrate_trajectory,
    solve_trajectory,
)

logger = logging.getLogger(__name__)

ROBUST_PULSES = {'echo': np.pi, 'x90': np.pi / 2}


@dataclass(frozen=True)
class SpuriousPhases:
    """Nonlinear phases accumulated by one fragment (rad)."""
    mode: int
    self_kerr: Tuple[float, float, float, float]
    cross_kerr: float
    second_order: float

    @property
    def is_zero(self) -> bool:
        return not any(self.self_kerr) and self.cross_kerr == 0.0 and self.second_order == 0.0


def spurious_phases(params: ECDPulseParams, traj: Trajectory, nl: DerivedNonlinearities,
                    offset: int = 0) -> SpuriousPhases:
    """
    Integrate the photon-number phases of one fragment.

    Phi_self_k = int_{tau_k} 2 K |alpha|^2 dt over each displacement window,
    Phi_cross = int K12 |alpha|^2 dt and Phi_2nd = int chi' |alpha|^2 dt over the
    fragment (the echo halves the 2 chi' of the displaced frame).

    Args:
        params: Fragment layout
        traj: Frame trajectory covering the fragment
        nl: Nonlinearities
        offset: Step at which the fragment starts inside traj
    """
    if offset + params.n_steps > traj.n_steps:
        raise InvalidArgumentError(
            f"trajectory has {traj.n_steps} steps, fragment needs {offset + params.n_steps}"
        )
    i = params.mode - 1
    pop = np.abs(traj.alpha[i, offset:offset + params.n_steps + 1]) ** 2
    windows = [float(trapezoid(pop[a:b + 1], dx=traj.dt)) for a, b in params.windows()]
    total = float(trapezoid(pop, dx=traj.dt))
    return SpuriousPhases(
        mode=params.mode,
        self_kerr=tuple(2 * nl.K[i] * w for w in windows),
        cross_kerr=nl.K12 * total,
        second_order=nl.chi_p[i] * total,
    )


def correction_events(record: FragmentRecord, phases: SpuriousPhases) -> List[PhaseEvent]:
    """Events cancelling the phases of one placed fragment (zero phases produce nothing)."""
    params = record.params
    events = [PhaseEvent(record.start + stop, params.mode, -phi, 'self-Kerr')
              for (_, stop), phi in zip(params.windows(), phases.self_kerr) if phi != 0.0]
    end = record.start + params.n_steps
    if phases.second_order != 0.0:
        events.append(PhaseEvent(end, params.mode, -phases.second_order, '2nd-disp'))
    if phases.cross_kerr != 0.0:
        events.append(PhaseEvent(end, 3 - params.mode, -phases.cross_kerr, 'cross-Kerr'))
    return events


def apply_phase_corrections(schedule: PulseSchedule,
                            phases: Sequence[Tuple[FragmentRecord, SpuriousPhases]]) -> PulseSchedule:
    """Insert self-Kerr, 2nd-disp and cross-Kerr events for each placed fragment."""
    events: List[PhaseEvent] = []
    for record, value in phases:
        events.extend(correction_events(record, value))
    return schedule.with_events(events)


def pulse_slopes(library: PulseLibrary, control: TransmonControl, grid: Optional[DetuningGrid] = None,
                 force: bool = False) -> Dict[str, Optional[float]]:
    """Linear-phase slope per ancilla pulse kind; None marks a pulse that is not robust."""
    slopes: Dict[str, Optional[float]] = {}
    for kind, theta in ROBUST_PULSES.items():
        try:
            slopes[kind] = extract_linear_phase(library.get(theta), theta, control, grid, force=force).slope
        except NotRobustError as e:
            logger.info("%s %s pulse is not robust: %s", library.scheme, kind, e)
            slopes[kind] = None
    return slopes


def robust_linear_phase_correction(schedule: PulseSchedule, slopes: Mapping[str, Optional[float]],
                                   chi: Sequence[float]) -> PulseSchedule:
    """
    Add chi_i * slope on both cavities after every robust ancilla pulse.

    Raises:
        CorrectionRefusedError: If a scheduled pulse has no slope (not robust)
    """
    events = []
    for segment in schedule.segments:
        if segment.mode != 0 or segment.label not in ROBUST_PULSES:
            continue
        slope = slopes.get(segment.label)
        if slope is None:
            raise CorrectionRefusedError(
                f"{segment.label} pulse is outside its robustness range; linear phase correction refused"
            )
        for mode in (1, 2):
            events.append(PhaseEvent(segment.stop, mode, chi[mode - 1] * slope, 'robust-linear'))
    return schedule.with_events(events)


def rotation_schedule(theta: float, phi: float, x_half_pi: ComplexEnvelope, index: int = 0) -> PulseSchedule:
    """R_phi(theta) as two X_pi/2 pulses framed by virtual Z events."""
    schedule = PulseSchedule.empty(x_half_pi.dt)
    pending: List[PhaseEvent] = []
    for step in decompose_rotation(theta, phi):
        if step.kind == 'z':
            pending.append(virtual_z(step.angle, schedule.n_steps))
        else:
            schedule = schedule.with_events(pending).append(ancilla_pulse(x_half_pi.samples, x_half_pi.dt, 'x90', index))
            pending = []
    return schedule.with_events(pending)


@dataclass(frozen=True)
class ScheduleOptions:
    """
    Switches for circuit_to_schedule.

    Attributes:
        synthesis: Fragment synthesis limits
        spurious: Insert self-Kerr, cross-Kerr and 2nd-disp corrections
        robust_linear: Insert the first-order robust-pulse corrections
        slopes: Precomputed pulse slopes (computed from the library when None)
    """
    synthesis: SynthesisConstraints = field(default_factory=SynthesisConstraints)
    spurious: bool = True
    robust_linear: bool = True
    slopes: Optional[Mapping[str, Optional[float]]] = None

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "ScheduleOptions":
        return cls(
            synthesis=SynthesisConstraints.from_config(section.get('synthesis', {})),
            spurious=bool(section.get('spurious_correction', True)),
            robust_linear=bool(section.get('robust_linear_correction', True)),
        )


def _frame_trajectory(params: ECDPulseParams, nl: DerivedNonlinearities) -> Trajectory:
    drives = np.zeros((2, params.n_steps), dtype=complex)
    drives[params.mode - 1] = params.cavity_samples()
    return solve_trajectory(drives, params.dt, nl, verify=False)


def circuit_to_schedule(circuit: ECDCircuit, library: PulseLibrary, nl: DerivedNonlinearities,
                        control: Optional[TransmonControl] = None,
                        options: Optional[ScheduleOptions] = None) -> PulseSchedule:
    """
    Full pulse schedule for a compiled circuit.

    Per block: mode-1 ECD fragment, R(theta1, phi1), mode-2 ECD fragment, R(theta2, phi2).
    Fragments are synthesized with chi only; the spurious phases are then integrated
    along each fragment's frame trajectory under the full nonlinearities.

    Args:
        circuit: Compiled circuit
        library: X_pi (echo) and X_pi/2 (rotations) pulses
        nl: Nonlinearities of the simulated device
        control: Transmon model, needed when slopes must be extracted
        options: Correction switches and synthesis limits

    Returns:
        Immutable PulseSchedule

    Raises:
        SynthesisError: If a fragment cannot be synthesized
        CorrectionRefusedError: If robust-linear correction is requested for non-robust pulses
    """
    options = options or ScheduleOptions()
    echo, x_half_pi = library.x_pi, library.x_half_pi
    dt = echo.dt
    cache: Dict[Tuple[complex, int], Tuple[ECDPulseParams, PulseSchedule]] = {}

    def fragment(beta: complex, mode: int) -> PulseSchedule:
        key = (complex(beta), mode)
        if key not in cache:
            cache[key] = synthesize_ecd_pulse(beta, nl.chi[mode - 1], echo, dt, mode, options.synthesis)
        return cache[key][1]

    schedule = PulseSchedule.empty(dt)
    for n, block in enumerate(circuit.blocks):
        for mode, beta, theta, phi in ((1, block.beta1, block.theta1, block.phi1),
                                       (2, block.beta2, block.theta2, block.phi2)):
            schedule = schedule.append(fragment(beta, mode))
            schedule = schedule.append(rotation_schedule(theta, phi, x_half_pi, index=n))
    logger.info("schedule: %d blocks, %d fragments, %.2f us", circuit.n_blocks, len(cache), schedule.duration * 1e6)

    if options.spurious:
        computed: Dict[int, SpuriousPhases] = {}
        phases = []
        for record in schedule.fragments:
            key = id(record.params)
            if key not in computed:
                traj = _frame_trajectory(record.params, nl)
                computed[key] = spurious_phases(record.params, traj, nl)
            phases.append((record, computed[key]))
        schedule = apply_phase_corrections(schedule, phases)

    if options.robust_linear:
        slopes = options.slopes
        if slopes is None:
            if control is None:
                raise InvalidArgumentError("robust-linear correction needs the transmon model to extract slopes")
            slopes = pulse_slopes(library, control)
        schedule = robust_linear_phase_correction(schedule, slopes, nl.chi)
    return schedule


def segment_durations(schedule: PulseSchedule) -> Dict[str, float]:
    """Total time per segment label (s)."""
    totals: Dict[str, float] = {}
    for s in schedule.segments:
        totals[s.label] = totals.get(s.label, 0.0) + (s.stop - s.start) * schedule.dt
    totals['total'] = schedule.duration
    return totals


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Frame trajectory restarted (phase-rotated) at every explicit cavity event."""
    starts: Tuple[int, ...]
    pieces: Tuple[Trajectory, ...]
    dt: float
    end: np.ndarray

    def at(self, t: float) -> np.ndarray:
        k = max(0, bisect_right(self.starts, t / self.dt + 1e-9) - 1)
        return self.pieces[k].at(t - self.starts[k] * self.dt)

    @property
    def final(self) -> np.ndarray:
        """Amplitude after the last step, including events placed at the very end."""
        return self.end


def _event_rotation(events: Sequence[PhaseEvent]) -> np.ndarray:
    phase = np.zeros(2)
    for e in events:
        if e.mode:
            phase[e.mode - 1] += e.phase
    return np.exp(-1j * phase)


def explicit_trajectory(schedule: PulseSchedule, nl: DerivedNonlinearities,
                        kappa: Optional[Tuple[float, float]] = None) -> PiecewiseTrajectory:
    """
    Frame trajectory of the raw drives with every cavity event applied as exp(-i phi n).

    The event rotates the frame amplitude by exp(-i phi); the last step of a piece
    interpolates towards the next raw sample expressed in the pre-event frame.
    """
    by_step: Dict[int, List[PhaseEvent]] = {}
    for e in schedule.events:
        if e.mode:
            by_step.setdefault(min(e.step, schedule.n_steps), []).append(e)
    cuts = sorted(s for s in by_step if 0 < s < schedule.n_steps)
    bounds = [0] + cuts + [schedule.n_steps]
    alpha = np.zeros(2, dtype=complex)
    starts, pieces = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        tail = None
        if b < schedule.n_steps:
            tail = schedule.cavity[:, b] / _event_rotation(by_step[b])
        piece = integrate_trajectory(schedule.cavity[:, a:b], schedule.dt, nl, kappa, alpha, tail)
        starts.append(a)
        pieces.append(piece)
        alpha = piece.final * _event_rotation(by_step.get(b, []))
    return PiecewiseTrajectory(tuple(starts), tuple(pieces), schedule.dt, alpha)


def _number_diagonals(ops: OperatorSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.real(np.diag(ops.n_q)), np.real(np.diag(ops.n[0])), np.real(np.diag(ops.n[1]))


def explicit_kicks(schedule: PulseSchedule, ops: OperatorSet) -> Dict[int, np.ndarray]:
    """exp(-i sum phi n_mode) per event step as diagonal vectors."""
    diagonals = _number_diagonals(ops)
    kicks: Dict[int, np.ndarray] = {}
    for e in schedule.events:
        step = min(e.step, schedule.n_steps)
        kicks[step] = kicks.get(step, np.ones(ops.dim, dtype=complex)) * np.exp(-1j * e.phase * diagonals[e.mode])
    return kicks


def logical_state(schedule: PulseSchedule, state: QuantumState, ops: OperatorSet) -> QuantumState:
    """Apply the final ledger prod_m exp(-i Phi_m n_m) to a simulated state."""
    ledger = schedule.final_ledger()
    diagonals = _number_diagonals(ops)
    phase = np.exp(-1j * sum(ledger[m] * diagonals[m] for m in range(3)))
    if state.kind == 'ket':
        return QuantumState.ket(phase * state.data, state.dims)
    return QuantumState.dm(phase[:, None] * state.data * phase.conj()[None, :], state.dims)


def to_rotating_frame(state: QuantumState, alpha: np.ndarray, ops: OperatorSet) -> QuantumState:
    """Undo the frame displacement: psi_rot = D(alpha_1) D(alpha_2) psi_displaced."""
    d_q, d_1, d_2 = ops.dims
    factors = [np.eye(d_q, dtype=complex)]
    for i, d in enumerate((d_1, d_2)):
        if d == 1 or (i + 1) in ops.fixed_photons:
            factors.append(np.eye(d, dtype=complex))
        else:
            factors.append(displacement_operator(complex(alpha[i]), d))
    u = np.kron(np.kron(factors[0], factors[1]), factors[2])
    if state.kind == 'ket':
        return QuantumState.ket(u @ state.data, state.dims)
    return QuantumState.dm(u @ state.data @ u.conj().T, state.dims)


@dataclass
class ScheduleRun:
    """Simulation outcome in the displaced frame plus the logical rotating-frame state."""
    result: PropagationResult
    logical: QuantumState
    trajectory: Any
    ops: OperatorSet


def simulate_schedule(schedule: PulseSchedule, nl: DerivedNonlinearities, psi0: QuantumState,
                      dims: Sequence[int], rates: Optional[DecoherenceRates] = None,
                      explicit_events: bool = False, fixed_photons: Optional[Dict[int, int]] = None,
                      n_traj: int = 1, seed: int = 0, workers: Optional[int] = None,
                      checkpoints: Optional[Sequence[int]] = None) -> ScheduleRun:
    """
    Displaced-frame simulation of a schedule.

    Closed systems propagate the state vector; with decoherence rates the damped
    frame trajectory drives a Monte-Carlo unravelling of the displaced-frame master
    equation.

    Args:
        schedule: Pulse schedule
        nl: Nonlinearities
        psi0: Initial ket on the (possibly number-resolved) composite space
        dims: (d_q, d_1, d_2) truncations
        rates: Dressed decoherence rates; None for a closed system
        explicit_events: Apply events as explicit unitaries instead of rotating drives
        fixed_photons: Optional {mode: n} number-resolved spectator block
        n_traj: Trajectories for open systems
        seed: Root seed for open systems
        workers: Parallel workers for open systems
        checkpoints: Steps at which the closed-system state is recorded

    Returns:
        ScheduleRun with the logical state (ledger applied, displacement undone)
    """
    ops = mode_operators(dims, fixed_photons)
    if tuple(psi0.dims) != tuple(ops.dims):
        raise InvalidArgumentError(f"initial state dims {tuple(psi0.dims)} do not match {tuple(ops.dims)}")
    kappa = rates.kappa if rates is not None and not rates.is_zero else None
    kicks = None
    if explicit_events:
        traj = explicit_trajectory(schedule, nl, kappa)
        ancilla = schedule.ancilla
        kicks = explicit_kicks(schedule, ops)
    else:
        cavity, ancilla = schedule.physical_drives()
        traj = solve_trajectory([cavity[0], cavity[1]], schedule.dt, nl, kappa=kappa, verify=False)
    hamiltonian = DisplacedFrameHamiltonian(traj, nl, ops, ancilla, schedule.dt)
    grid = TimeGrid(schedule.dt, schedule.n_steps)

    collapse = CollapseSet.standard(ops, rates, eta=traj) if kappa is not None else None
    if collapse is None or collapse.is_empty:
        result = propagate_closed(hamiltonian, psi0, grid, checkpoints, kicks)
    else:
        result = monte_carlo(hamiltonian, collapse, psi0, grid, n_traj, seed, workers, kicks)

    state = to_rotating_frame(result.final, traj.final, ops)
    logical = state if explicit_events else logical_state(schedule, state, ops)
    return ScheduleRun(result=result, logical=logical, trajectory=traj, ops=ops)


def composite_phase_study(env: ComplexEnvelope, theta: float, control: TransmonControl, chis: Sequence[float],
                          d_c: int = 10, params: Optional[SystemParams] = None,
                          grid: Optional[DetuningGrid] = None, force: bool = True) -> pd.DataFrame:
    """
    Ancilla rotation on ancilla x cavity with photon-number-dependent detuning.

    Block n sees delta_n = chi n + chi'/2 n (n - 1) and the cavity self-Kerr phase
    exp(-i K n (n - 1) t_g / 2). Reported per chi: the uncorrected composite infidelity,
    the infidelity after the virtual cavity phase exp(-i chi s n), and the reference
    sum_n |Tr[P U_t^dag U_n]| with all relative phases removed.

    Args:
        env: Ancilla pulse
        theta: Target rotation angle
        control: Transmon model
        chis: Dispersive shifts (rad/s)
        d_c: Cavity truncation
        params: Device from which chi' and K follow for each chi (default device otherwise)
        grid: Robustness range for the slope extraction
        force: Extract the slope even for non-robust pulses

    Returns:
        DataFrame with chi_hz, slope_s, uncorrected, corrected, reference
    """
    base = params or SystemParams.default_device()
    slope = extract_linear_phase(env, theta, control, grid, force=force).slope
    target = control.target(theta)
    norm = 4.0 * d_c ** 2
    n = np.arange(d_c)
    rows = []
    for chi in chis:
        nl = derive_nonlinearities(base.with_chi(chi))
        deltas = nl.chi[0] * n + 0.5 * nl.chi_p[0] * n * (n - 1)
        us = control.propagators(env.samples, env.dt, deltas)
        traces = np.array([np.trace(control.projector @ target.conj().T @ u) for u in us])
        traces = traces * np.exp(-0.5j * nl.K[0] * n * (n - 1) * env.duration)
        corrected = traces * np.exp(-1j * nl.chi[0] * slope * n)
        rows.append({
            'chi_hz': nl.chi[0] / TWO_PI,
            'slope_s': slope,
            'uncorrected': float(np.clip(1 - abs(traces.sum()) ** 2 / norm, 0, 1)),
            'corrected': float(np.clip(1 - abs(corrected.sum()) ** 2 / norm, 0, 1)),
            'reference': float(np.clip(1 - np.abs(traces).sum() ** 2 / norm, 0, 1)),
        })
    return pd.DataFrame(rows)


__all__ = [
    'SpuriousPhases', 'ScheduleOptions', 'ScheduleRun', 'PiecewiseTrajectory',
    'spurious_phases', 'correction_events', 'apply_phase_corrections', 'pulse_slopes',
    'robust_linear_phase_correction', 'rotation_schedule', 'circuit_to_schedule', 'segment_durations',
    'explicit_trajectory', 'explicit_kicks', 'logical_state', 'to_rotating_frame', 'simulate_schedule',
    'composite_phase_study',
]
