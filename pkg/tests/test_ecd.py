"""Tests for ECD circuits, fragment synthesis, the phase ledger and schedule simulation."""

import numpy as np
import pytest

from services.dynamics import state_transfer_infidelity
from services.ecd import (
    CompilationTarget,
    ECDBlock,
    ECDCircuit,
    PhaseEvent,
    PulseSchedule,
    ScheduleOptions,
    apply_circuit,
    circuit_to_schedule,
    compile_circuit,
    composite_phase_study,
    decompose_rotation,
    ecd_unitary,
    simulate_schedule,
    synthesize_ecd_pulse,
)
from services.ecd.circuit import compose_steps, rotation_matrix
from services.ecd.identities import error_slopes, position_momentum_pair, verify_commutator_identities
from services.ecd.ledger import FragmentRecord, Segment, ancilla_pulse, virtual_z
from services.ecd.schedule import (
    SpuriousPhases,
    apply_phase_corrections,
    logical_state,
    robust_linear_phase_correction,
    rotation_schedule,
    segment_durations,
    spurious_phases,
)
from services.ecd.synthesis import (
    SynthesisConstraints,
    branch_evolution,
    chi_only,
    gaussian_displacement,
    verify_fragment,
)
from services.errors import (
    CompilationError,
    CorrectionRefusedError,
    InvalidArgumentError,
    SynthesisError,
)
from services.grape import PulseLibrary, TransmonControl, drag_pulse
from services.hilbert import QuantumState, coherent_state, mode_operators, tensor
from services.model import hz, solve_trajectory

DT = 0.5e-9
CHI = hz(-300e3)
NO_CHECK = SynthesisConstraints(verify=False)


def same_up_to_phase(u, v):
    overlap = np.vdot(u.reshape(-1), v.reshape(-1))
    return abs(abs(overlap) - np.linalg.norm(u) * np.linalg.norm(v)) < 1e-10


def echo_pulse():
    return drag_pulse(np.pi, 20e-9, hz(-200e6), DT)


def ground(dims):
    data = np.zeros(int(np.prod(dims)), dtype=complex)
    data[0] = 1.0
    return QuantumState.ket(data, dims)


class TestLedger:
    """Tests for phase events and the running ledger."""

    @pytest.mark.parametrize("kwargs", [
        {'step': 0, 'mode': 3, 'phase': 0.1, 'tag': 'self-Kerr'},
        {'step': 0, 'mode': 1, 'phase': 0.1, 'tag': 'kerr'},
        {'step': 0, 'mode': 1, 'phase': np.inf, 'tag': 'self-Kerr'},
    ])
    def test_invalid_event(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            PhaseEvent(**kwargs)

    def test_running_ledger(self):
        schedule = PulseSchedule(np.ones((2, 6)), np.zeros(6), DT, events=(
            PhaseEvent(4, 1, 0.2, 'self-Kerr'),
            PhaseEvent(2, 1, 0.3, 'cross-Kerr'),
            PhaseEvent(6, 2, 0.7, 'cross-Kerr'),
        ))
        assert np.allclose(schedule.ledger()[1], [0, 0, 0.3, 0.3, 0.5, 0.5])
        # an event after the last sample only shows up in the final ledger
        assert not np.any(schedule.ledger()[2])
        assert np.allclose(schedule.final_ledger(), [0.0, 0.5, 0.7])

    def test_physical_drives_carry_ledger(self):
        schedule = PulseSchedule(np.ones((2, 4)), np.ones(4), DT, events=(PhaseEvent(1, 1, 0.4, 'self-Kerr'),
                                                                           virtual_z(0.5, 2)))
        cavity, ancilla = schedule.physical_drives()
        assert np.allclose(cavity[0], [1, np.exp(0.4j), np.exp(0.4j), np.exp(0.4j)])
        assert np.allclose(cavity[1], 1.0)
        assert np.allclose(ancilla, [1, 1, np.exp(-0.5j), np.exp(-0.5j)])

    def test_virtual_z_sign(self):
        event = virtual_z(0.3, 5)
        assert (event.mode, event.phase, event.step) == (0, -0.3, 5)

    def test_zero_phase_events_are_dropped(self):
        schedule = PulseSchedule.empty(DT)
        assert schedule.with_events([PhaseEvent(0, 1, 0.0, 'self-Kerr')]) is schedule

    def test_append_shifts_steps(self):
        first = ancilla_pulse(np.ones(3), DT, 'x90')
        second = ancilla_pulse(np.ones(2), DT, 'echo').with_events([PhaseEvent(1, 2, 0.1, 'cross-Kerr')])
        joined = first.append(second)
        assert joined.n_steps == 5
        assert joined.events[0].step == 4
        assert [(s.label, s.start, s.stop) for s in joined.segments] == [('x90', 0, 3), ('echo', 3, 5)]

    def test_append_rejects_other_dt(self):
        with pytest.raises(InvalidArgumentError):
            PulseSchedule.empty(DT).append(PulseSchedule.empty(1e-9))

    def test_channel_lengths_must_match(self):
        with pytest.raises(InvalidArgumentError):
            PulseSchedule(np.zeros((2, 3)), np.zeros(4), DT)

    def test_files(self, tmp_path):
        rng = np.random.default_rng(5)
        cavity = hz(1e6) * (rng.standard_normal((2, 8)) + 1j * rng.standard_normal((2, 8)))
        schedule = PulseSchedule(cavity, np.zeros(8), DT, events=(PhaseEvent(3, 1, 0.25, 'self-Kerr'),),
                                 segments=(Segment('gauss', 0, 8, 1),))
        written = schedule.to_files(tmp_path / 'schedule')
        assert {p.name for p in written} == {'ancilla.csv', 'cavity1.csv', 'cavity2.csv', 'events.json'}
        loaded = PulseSchedule.from_files(tmp_path / 'schedule')
        assert np.allclose(loaded.cavity, schedule.cavity, rtol=1e-14)
        assert loaded.events == schedule.events
        assert loaded.segments == schedule.segments


class TestCircuit:
    """Tests for ideal ECD circuits and their compilation."""

    def test_ecd_unitary(self):
        u = ecd_unitary(1.0 + 0.5j, 30)
        assert np.allclose(u.conj().T @ u, np.eye(60), atol=1e-10)

    def test_ecd_zero_flips_ancilla(self):
        assert np.allclose(ecd_unitary(0, 4), np.kron([[0, 1], [1, 0]], np.eye(4)))

    @pytest.mark.parametrize("theta", [0.0, np.pi / 3, np.pi, 2.5])
    @pytest.mark.parametrize("phi", [0.0, 0.7, -2.0])
    def test_decompose_rotation(self, theta, phi):
        steps = decompose_rotation(theta, phi)
        assert [s.kind for s in steps] == ['z', 'x90', 'z', 'x90', 'z']
        assert same_up_to_phase(compose_steps(steps), rotation_matrix(theta, phi))

    def test_decompose_random_rotations(self):
        rng = np.random.default_rng(2)
        for theta, phi in rng.uniform(-np.pi, np.pi, size=(100, 2)):
            u = compose_steps(decompose_rotation(theta, phi))
            overlap = abs(np.trace(rotation_matrix(theta, phi).conj().T @ u)) / 2
            assert 1.0 - overlap < 1e-12

    def test_apply_circuit_matches_dense(self):
        d = 12
        circuit = ECDCircuit((ECDBlock(beta1=0.8 - 0.3j, theta1=1.1, phi1=0.4),))
        psi0 = ground((2, d, 1))
        final = apply_circuit(circuit, psi0)
        # the mode-2 ECD with beta = 0 is a bare ancilla flip
        flip = np.kron([[0, 1], [1, 0]], np.eye(d))
        rot = np.kron(rotation_matrix(1.1, 0.4), np.eye(d))
        expected = flip @ rot @ ecd_unitary(0.8 - 0.3j, d) @ psi0.data
        assert np.allclose(final.data, expected, atol=1e-12)

    def test_apply_circuit_needs_qubit_ancilla(self):
        circuit = ECDCircuit((ECDBlock(),))
        with pytest.raises(InvalidArgumentError):
            apply_circuit(circuit, ground((3, 4, 4)))

    def test_circuit_needs_blocks(self):
        with pytest.raises(InvalidArgumentError):
            ECDCircuit(())

    def test_circuit_json(self, tmp_path):
        circuit = ECDCircuit((ECDBlock(1 + 1j, -0.5j, 0.1, 0.2, 0.3, 0.4),), infidelity=1e-4)
        loaded = ECDCircuit.from_json(circuit.to_json(tmp_path / 'circuit.json'))
        assert loaded == circuit

    def test_circuit_format_version(self):
        with pytest.raises(InvalidArgumentError):
            ECDCircuit.from_dict({'format_version': 99, 'blocks': []})

    def test_compile_identity(self):
        state = ground((2, 4, 4))
        circuit = compile_circuit(CompilationTarget(state, state), n_blocks=1, n_starts=2, workers=1)
        assert circuit.n_blocks == 1
        assert circuit.infidelity < 1e-10

    def test_compile_reaches_reachable_target(self):
        d = 14
        reference = ECDCircuit((ECDBlock(beta1=1.2, theta1=np.pi / 2, phi1=0.3),))
        psi0 = ground((2, d, 1))
        target = CompilationTarget(psi0, apply_circuit(reference, psi0), active_modes=(0,))
        circuit = compile_circuit(target, n_blocks=1, n_starts=8, seed=1, max_blocks=1, workers=1)
        assert circuit.infidelity < 1e-3
        assert state_transfer_infidelity(apply_circuit(circuit, psi0), target.target) < 1e-3

    def test_compile_failure_keeps_best(self):
        d = 10
        psi0 = ground((2, d, 1))
        fock = np.zeros(2 * d, dtype=complex)
        fock[3] = 1.0
        target = CompilationTarget(psi0, QuantumState.ket(fock, (2, d, 1)), active_modes=(0,))
        with pytest.raises(CompilationError) as excinfo:
            compile_circuit(target, n_blocks=1, n_starts=2, max_blocks=1, threshold=1e-12, max_iter=50, workers=1)
        assert excinfo.value.best is not None
        assert excinfo.value.infidelity > 1e-12

    def test_compile_rejects_zero_blocks(self):
        state = ground((2, 3, 3))
        with pytest.raises(InvalidArgumentError):
            compile_circuit(CompilationTarget(state, state), n_blocks=0)


class TestSynthesis:
    """Tests for Gaussian ECD fragment synthesis."""

    def test_gaussian_shape(self):
        shape = gaussian_displacement(6e-9, DT)
        assert len(shape) == 48
        assert shape[0] == 0.0
        assert np.max(shape) == pytest.approx(1.0)

    def test_zero_beta_is_bare_echo(self):
        params, fragment = synthesize_ecd_pulse(0, CHI, echo_pulse(), DT)
        assert params.n_wait == 0
        assert not np.any(params.amplitudes)
        assert fragment.n_steps == 4 * params.n_gauss + params.n_echo
        assert not np.any(fragment.cavity)

    def test_amplitudes_solve_branch_conditions(self):
        beta = 0.8 + 0.4j
        params, _ = synthesize_ecd_pulse(beta, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        branches = branch_evolution(params.cavity_samples(), DT, CHI, params.center)
        plus, minus = branches.conditional_displacements
        assert plus == pytest.approx(beta / 2, abs=1e-6)
        assert minus == pytest.approx(-beta / 2, abs=1e-6)
        assert abs(branches.final[0]) < 1e-6
        assert np.max(np.abs(params.amplitudes)) <= NO_CHECK.max_amplitude

    def test_wait_grows_with_beta(self):
        small, _ = synthesize_ecd_pulse(0.5, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        large, _ = synthesize_ecd_pulse(3.0, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        assert large.n_wait >= small.n_wait

    def test_frame_returns_to_origin(self):
        params, _ = synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        drives = [params.cavity_samples(), np.zeros(params.n_steps)]
        traj = solve_trajectory(drives, DT, chi_only((CHI, 0.0)), verify=False)
        assert abs(traj.final[0]) < 1e-6

    def test_infeasible_beta(self):
        constraints = SynthesisConstraints(max_amplitude=hz(1e6), max_wait=10e-9, verify=False)
        with pytest.raises(SynthesisError):
            synthesize_ecd_pulse(20.0, CHI, echo_pulse(), DT, constraints=constraints)

    def test_zero_chi_cannot_displace(self):
        with pytest.raises(SynthesisError):
            synthesize_ecd_pulse(1.0, 0.0, echo_pulse(), DT)

    def test_mode_must_be_a_cavity(self):
        with pytest.raises(InvalidArgumentError):
            synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, mode=0)

    def test_fragment_schedule_layout(self):
        params, fragment = synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, mode=2, constraints=NO_CHECK)
        labels = [s.label for s in fragment.segments]
        assert [label for label in labels if label != 'wait'] == ['gauss', 'gauss', 'echo', 'gauss', 'gauss']
        assert labels.count('wait') == (2 if params.n_wait else 0)
        assert not np.any(fragment.cavity[0])
        assert fragment.fragments[0].params is params
        # the echo axis pair cancels in the ledger
        assert fragment.final_ledger()[0] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.slow
    def test_fragment_realizes_ecd(self):
        beta = 1.0
        params, _ = synthesize_ecd_pulse(beta, CHI, echo_pulse(), DT)
        check = verify_fragment(params)
        assert check.infidelity < 1e-4
        assert check.conditional_displacement == pytest.approx(beta, abs=1e-2)


class TestPhaseCorrections:
    """Tests for spurious and robust-linear phase bookkeeping."""

    def test_rotation_schedule(self):
        x90 = drag_pulse(np.pi / 2, 20e-9, hz(-200e6), DT)
        schedule = rotation_schedule(1.3, 0.4, x90)
        assert [s.label for s in schedule.segments] == ['x90', 'x90']
        assert schedule.n_steps == 2 * x90.n_samples
        assert {e.tag for e in schedule.events} == {'virtual-z'}
        assert schedule.final_ledger()[0] == pytest.approx(1.3)

    def test_correction_events(self):
        params, fragment = synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        phases = SpuriousPhases(mode=1, self_kerr=(0.1, 0.0, 0.2, 0.0), cross_kerr=0.3, second_order=0.05)
        record = FragmentRecord(1, 0, params)
        corrected = apply_phase_corrections(fragment, [(record, phases)])
        windows = params.windows()
        kerr = corrected.events_for(1, 'self-Kerr')
        assert [(e.step, e.phase) for e in kerr] == [(windows[0][1], -0.1), (windows[2][1], -0.2)]
        assert corrected.events_for(1, '2nd-disp')[0].phase == -0.05
        cross = corrected.events_for(2, 'cross-Kerr')
        assert [(e.step, e.phase) for e in cross] == [(params.n_steps, -0.3)]

    def test_spurious_phases_follow_population(self, nonlinearities):
        params, _ = synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        drives = [params.cavity_samples(), np.zeros(params.n_steps)]
        traj = solve_trajectory(drives, DT, nonlinearities, verify=False)
        phases = spurious_phases(params, traj, nonlinearities)
        assert not phases.is_zero
        # K and K12 share their sign
        assert np.sign(phases.cross_kerr) == np.sign(sum(phases.self_kerr))
        assert phases.second_order * nonlinearities.chi_p[0] >= 0

    def test_spurious_phases_need_covering_trajectory(self, nonlinearities):
        params, _ = synthesize_ecd_pulse(1.0, CHI, echo_pulse(), DT, constraints=NO_CHECK)
        traj = solve_trajectory([np.zeros(10), np.zeros(10)], DT, nonlinearities)
        with pytest.raises(InvalidArgumentError):
            spurious_phases(params, traj, nonlinearities)

    def test_robust_linear_events(self):
        schedule = ancilla_pulse(np.zeros(40), DT, 'echo')
        corrected = robust_linear_phase_correction(schedule, {'echo': 2e-9, 'x90': 1e-9}, (hz(-100e3), hz(-200e3)))
        phases = {e.mode: (e.step, e.phase) for e in corrected.events if e.tag == 'robust-linear'}
        assert phases[1] == (40, pytest.approx(hz(-100e3) * 2e-9))
        assert phases[2] == (40, pytest.approx(hz(-200e3) * 2e-9))

    def test_robust_linear_refused_for_non_robust_pulse(self):
        schedule = ancilla_pulse(np.zeros(4), DT, 'x90')
        with pytest.raises(CorrectionRefusedError):
            robust_linear_phase_correction(schedule, {'echo': 1e-9, 'x90': None}, (CHI, CHI))

    def test_logical_state_applies_ledger(self):
        dims = (2, 3, 3)
        ops = mode_operators(dims)
        data = np.zeros(18, dtype=complex)
        data[3] = 1.0  # |g, 1, 0>
        schedule = PulseSchedule(np.zeros((2, 1)), np.zeros(1), DT, events=(PhaseEvent(0, 1, 0.4, 'self-Kerr'),))
        logical = logical_state(schedule, QuantumState.ket(data, dims), ops)
        assert logical.data[3] == pytest.approx(np.exp(-0.4j))

    def test_composite_phase_study(self):
        control = TransmonControl(hz(-200e6), levels=3, dt=DT)
        env = drag_pulse(np.pi, 20e-9, control.K_q, DT)
        frame = composite_phase_study(env, np.pi, control, [hz(-100e3), hz(-300e3)], d_c=6)
        assert list(frame.columns) == ['chi_hz', 'slope_s', 'uncorrected', 'corrected', 'reference']
        assert frame['chi_hz'].tolist() == pytest.approx([-100e3, -300e3], rel=1e-9)
        assert np.all(frame['reference'] <= frame['corrected'] + 1e-12)
        assert np.all(frame['reference'] <= frame['uncorrected'] + 1e-12)


class TestScheduleSimulation:
    """Tests for displaced-frame simulation of schedules."""

    def _schedule(self):
        # cavity drives and ancilla pulse separated by idle samples that carry the events
        shape = gaussian_displacement(6e-9, DT)
        n = len(shape)
        cavity = np.zeros((2, 3 * n), dtype=complex)
        cavity[0, :n] = hz(4e6) * shape
        cavity[1, 2 * n:] = hz(3e6) * shape * 1j
        cavity[0, 2 * n:] = hz(2e6) * shape
        ancilla = np.zeros(3 * n, dtype=complex)
        ancilla[n + 4:2 * n - 4] = drag_pulse(np.pi / 2, (n - 8) * DT, hz(-200e6), DT).samples
        events = (
            PhaseEvent(n, 1, 0.6, 'self-Kerr'),
            PhaseEvent(n + 2, 2, -0.4, 'cross-Kerr'),
            virtual_z(0.9, n + 2),
            PhaseEvent(2 * n, 1, 0.2, '2nd-disp'),
            PhaseEvent(3 * n, 2, 0.3, 'robust-linear'),
        )
        return PulseSchedule(cavity, ancilla, DT, events=events)

    def test_virtual_events_match_explicit_events(self, nonlinearities):
        dims = (3, 8, 8)
        schedule = self._schedule()
        virtual = simulate_schedule(schedule, nonlinearities, ground(dims), dims)
        explicit = simulate_schedule(schedule, nonlinearities, ground(dims), dims, explicit_events=True)
        assert state_transfer_infidelity(virtual.logical, explicit.logical) < 1e-8
        assert np.allclose(virtual.logical.data, explicit.logical.data, atol=1e-6)

    def test_simulation_rejects_mismatched_state(self, nonlinearities):
        with pytest.raises(InvalidArgumentError):
            simulate_schedule(self._schedule(), nonlinearities, ground((2, 4, 4)), (3, 8, 8))

    def test_identity_circuit_schedule(self, nonlinearities):
        control = TransmonControl(nonlinearities.K_q, levels=3, dt=DT)
        library = PulseLibrary.drag(control, 20e-9)
        circuit = ECDCircuit((ECDBlock(),))
        options = ScheduleOptions(slopes={'echo': None, 'x90': None}, robust_linear=False)
        schedule = circuit_to_schedule(circuit, library, nonlinearities, control, options)
        labels = [s.label for s in schedule.segments]
        assert labels.count('echo') == 2
        assert labels.count('x90') == 4
        assert {e.tag for e in schedule.events} <= {'virtual-z'}
        assert segment_durations(schedule)['total'] == pytest.approx(schedule.duration)

    def test_identity_circuit_refuses_drag_correction(self, nonlinearities):
        control = TransmonControl(nonlinearities.K_q, levels=3, dt=DT)
        library = PulseLibrary.drag(control, 20e-9)
        options = ScheduleOptions(slopes={'echo': None, 'x90': None})
        with pytest.raises(CorrectionRefusedError):
            circuit_to_schedule(ECDCircuit((ECDBlock(),)), library, nonlinearities, control, options)

    def test_coherent_drive_reaches_frame_amplitude(self, nonlinearities):
        # an undriven ancilla leaves the cavity in the classical coherent state
        dims = (2, 12, 4)
        shape = gaussian_displacement(6e-9, DT)
        cavity = np.zeros((2, len(shape) + 20), dtype=complex)
        cavity[0, :len(shape)] = hz(5e6) * shape
        schedule = PulseSchedule(cavity, np.zeros(cavity.shape[1]), DT)
        run = simulate_schedule(schedule, nonlinearities, ground(dims), dims)
        alpha = run.trajectory.final[0]
        expected = tensor([
            QuantumState.ket(np.eye(2)[0], (2,)),
            coherent_state(alpha, 12),
            QuantumState.ket(np.eye(4)[0], (4,)),
        ])
        assert state_transfer_infidelity(run.logical, expected) < 1e-3


class TestIdentities:
    """Tests for the short-time composition identities."""

    def test_third_order_residuals(self):
        slopes = error_slopes(verify_commutator_identities(*position_momentum_pair(8)))
        assert 2.8 < slopes['commutator'] < 3.2
        assert 2.8 < slopes['average'] < 3.2

    def test_commuting_pair(self):
        a = np.diag([1.0, 2.0]).astype(complex)
        errors = verify_commutator_identities(a, 3 * a)
        assert all(e.commutator < 1e-12 and e.average < 1e-12 for e in errors)
