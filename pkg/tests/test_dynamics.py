"""Tests for closed, Lindblad and Monte-Carlo propagation."""

import numpy as np
import pytest

from services.dynamics import (
    CollapseSet,
    Jump,
    TimeGrid,
    composite_gate_infidelity,
    default_workers,
    gate_infidelity_closed,
    gate_infidelity_open,
    lindblad_superoperator,
    monte_carlo,
    monte_carlo_stderr,
    propagate_closed,
    propagate_lindblad,
    propagate_superoperator,
    propagate_unitary,
    qubit_projector,
    read_checkpoints,
    robustness_metrics,
    state_transfer_infidelity,
    write_checkpoints,
)
from services.errors import InvalidArgumentError, UseMonteCarloError
from services.hilbert import QuantumState, destroy, mode_operators
from services.model import DecoherenceRates, hz

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
LOWER = destroy(2)
EXCITED = QuantumState.ket([0, 1], (2,))
GROUND = QuantumState.ket([1, 0], (2,))


def constant(h):
    return lambda t: h


def rabi(omega):
    return constant(0.5 * omega * SIGMA_X)


class TestTimeGrid:
    """Tests for the uniform time grid."""

    def test_covering(self):
        grid = TimeGrid.covering(20e-9, 0.5e-9)
        assert grid.n_steps == 40
        assert grid.duration == pytest.approx(20e-9)
        assert grid.midpoint(0) == pytest.approx(0.25e-9)

    def test_invalid_grid(self):
        with pytest.raises(InvalidArgumentError):
            TimeGrid(dt=0.0, n_steps=4)


class TestClosedPropagation:
    """Tests for Schrodinger evolution."""

    def test_rabi_pi_pulse(self):
        omega = hz(10e6)
        grid = TimeGrid.covering(np.pi / omega, np.pi / omega / 100)
        final = propagate_closed(rabi(omega), GROUND, grid).final
        assert abs(final.data[1]) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_norm_is_preserved(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        h = hz(1e6) * (m + m.conj().T)
        psi0 = QuantumState.ket(np.ones(5) / np.sqrt(5), (5,))
        final = propagate_closed(lambda t: np.cos(hz(3e6) * t) * h, psi0, TimeGrid(1e-9, 300)).final
        assert final.norm() == pytest.approx(1.0, abs=1e-9)

    def test_checkpoints(self):
        result = propagate_closed(rabi(hz(1e6)), GROUND, TimeGrid(1e-9, 10), checkpoints=[0, 5, 10])
        assert [step for step, _ in result.checkpoints] == [0, 5, 10]
        assert np.allclose(result.checkpoints[-1][1].data, result.final.data)

    def test_kick_applies_before_step(self):
        # a pi phase kick on |e> between two half pi pulses undoes the rotation
        omega = hz(10e6)
        n_steps = 100
        grid = TimeGrid(np.pi / omega / n_steps, n_steps)
        kicks = {n_steps // 2: np.array([1.0, -1.0], dtype=complex)}
        final = propagate_closed(rabi(omega), GROUND, grid, kicks=kicks).final
        assert abs(final.data[0]) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_closed_needs_ket(self):
        with pytest.raises(InvalidArgumentError):
            propagate_closed(rabi(1.0), GROUND.to_density(), TimeGrid(1e-9, 1))

    def test_unitary_matches_closed(self):
        omega = hz(4e6)
        grid = TimeGrid(1e-9, 60)
        u = propagate_unitary(rabi(omega), 2, grid)
        final = propagate_closed(rabi(omega), GROUND, grid).final
        assert np.allclose(u @ GROUND.data, final.data, atol=1e-12)
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12)


class TestOpenPropagation:
    """Tests for Lindblad and Monte-Carlo evolution."""

    def test_amplitude_decay(self):
        gamma = 1e6
        grid = TimeGrid(10e-9, 100)
        collapse = CollapseSet((Jump(gamma, operator=LOWER, label='decay'),))
        rho = propagate_lindblad(constant(np.zeros((2, 2))), collapse, EXCITED, grid).final
        assert rho.data[1, 1].real == pytest.approx(np.exp(-gamma * grid.duration), rel=1e-10)
        assert np.trace(rho.data).real == pytest.approx(1.0, abs=1e-12)

    def test_lindblad_generator(self):
        gamma = 2e5
        rng = np.random.default_rng(4)
        m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        c = np.sqrt(gamma) * np.array([[0, 1], [0, 0]], dtype=complex)
        gen = lindblad_superoperator(hz(1e6) * (m + m.conj().T), [c])
        # trace preserving
        assert np.allclose(np.eye(2).reshape(-1) @ gen, 0.0, atol=1e-6)
        decay = lindblad_superoperator(np.zeros((2, 2)), [c]) @ np.diag([0.0, 1.0]).astype(complex).reshape(-1)
        assert np.allclose(decay.reshape(2, 2), np.diag([gamma, -gamma]))

    def test_lindblad_dimension_limit(self):
        psi0 = QuantumState.ket(np.eye(65)[0], (65,))
        with pytest.raises(UseMonteCarloError):
            propagate_lindblad(constant(np.zeros((65, 65))), CollapseSet(), psi0, TimeGrid(1e-9, 1))

    def test_superoperator_without_noise_is_unitary_map(self):
        omega = hz(5e6)
        grid = TimeGrid(1e-9, 50)
        superop = propagate_superoperator(rabi(omega), CollapseSet(), 2, grid)
        u = propagate_unitary(rabi(omega), 2, grid)
        assert np.allclose(superop, np.kron(u, u.conj()), atol=1e-12)

    def test_negative_jump_rate_is_rejected(self):
        with pytest.raises(InvalidArgumentError):
            CollapseSet((Jump(-1.0, operator=LOWER),))

    def test_standard_collapse_skips_zero_rates(self):
        ops = mode_operators((2, 3, 3))
        collapse = CollapseSet.standard(ops, DecoherenceRates.from_times(T1=50e-6))
        assert collapse.labels() == ['ancilla-decay']

    def test_monte_carlo_matches_lindblad(self):
        gamma = 1e6
        grid = TimeGrid(10e-9, 70)
        collapse = CollapseSet((Jump(gamma, operator=LOWER, label='decay'),))
        h = constant(np.zeros((2, 2)))
        result = monte_carlo(h, collapse, EXCITED, grid, n_traj=2000, seed=11, workers=1)
        exact = propagate_lindblad(h, collapse, EXCITED, grid).final
        assert result.final.data[1, 1].real == pytest.approx(exact.data[1, 1].real, abs=0.04)
        assert len(result.seeds) == 2000
        assert all(label == 'decay' for record in result.jumps for _, label in record)

    @pytest.mark.slow
    def test_monte_carlo_matches_lindblad_on_ancilla_and_cavity(self):
        ops = mode_operators((3, 4, 1))
        a = ops.a[0]
        h = (hz(2e6) * (ops.q + ops.q.conj().T) + hz(1e6) * (a + a.conj().T)
             + hz(-1e6) * ops.n_q @ ops.n[0] + 0.5 * hz(-200e6) * ops.kerr_q)
        collapse = CollapseSet((
            Jump(5e4, operator=ops.q, label='ancilla-decay'),
            Jump(5e4, operator=ops.n_q, label='ancilla-dephasing'),
            Jump(5e3, operator=a, label='cavity-decay'),
        ))
        psi0 = QuantumState.ket(np.eye(ops.dim)[0], ops.dims)
        grid = TimeGrid(1e-9, 200)
        result = monte_carlo(constant(h), collapse, psi0, grid, n_traj=20000, seed=3)
        exact = propagate_lindblad(constant(h), collapse, psi0, grid).final
        assert ops.dim == 12
        assert np.max(np.abs(result.final.data - exact.data)) < 5e-3

    def test_monte_carlo_is_independent_of_workers(self):
        grid = TimeGrid(10e-9, 40)
        collapse = CollapseSet((Jump(2e6, operator=LOWER, label='decay'),))
        args = (rabi(hz(2e6)), collapse, EXCITED, grid)
        serial = monte_carlo(*args, n_traj=40, seed=5, workers=1)
        parallel = monte_carlo(*args, n_traj=40, seed=5, workers=3)
        assert np.allclose(serial.final.data, parallel.final.data, atol=1e-14)
        assert serial.jumps == parallel.jumps

    def test_monte_carlo_rejects_zero_trajectories(self):
        with pytest.raises(InvalidArgumentError):
            monte_carlo(rabi(1.0), CollapseSet(), GROUND, TimeGrid(1e-9, 1), n_traj=0, seed=0)

    @pytest.mark.parametrize("value, expected", [(0.0, 0.0), (1.0, 0.0), (0.5, 0.005), (-1e-3, 0.0)])
    def test_monte_carlo_stderr(self, value, expected):
        assert monte_carlo_stderr(value, 10000) == pytest.approx(expected, abs=1e-15)

    def test_monte_carlo_stderr_needs_trajectories(self):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_stderr(0.1, 0)


class TestMetrics:
    """Tests for gate and state-transfer metrics."""

    def test_closed_gate_infidelity(self):
        p = qubit_projector(3)
        x = np.eye(3, dtype=complex)
        x[:2, :2] = SIGMA_X
        assert gate_infidelity_closed(x, x, p) == pytest.approx(0.0, abs=1e-15)
        assert gate_infidelity_closed(np.eye(3), x, p) == pytest.approx(1.0)

    def test_global_phase_is_ignored(self):
        p = qubit_projector(2)
        assert gate_infidelity_closed(1j * SIGMA_X, SIGMA_X, p) == pytest.approx(0.0, abs=1e-15)

    def test_open_gate_infidelity_without_noise(self):
        omega = hz(5e6)
        grid = TimeGrid(np.pi / omega / 50, 50)
        superop = propagate_superoperator(rabi(omega), CollapseSet(), 2, grid)
        target = -1j * SIGMA_X
        assert gate_infidelity_open(superop, target, qubit_projector(2)) == pytest.approx(0.0, abs=1e-10)

    def test_open_gate_infidelity_level_limit(self):
        with pytest.raises(InvalidArgumentError):
            gate_infidelity_open(np.eye(36), np.eye(6), qubit_projector(6))

    def test_composite_gate_infidelity(self):
        u = np.kron(SIGMA_X, np.eye(4))
        assert composite_gate_infidelity(u, SIGMA_X, 4) == pytest.approx(0.0, abs=1e-15)

    def test_state_transfer_infidelity(self):
        plus = QuantumState.ket(np.array([1, 1]) / np.sqrt(2), (2,))
        assert state_transfer_infidelity(plus, GROUND) == pytest.approx(0.5)
        assert state_transfer_infidelity(plus.to_density(), GROUND) == pytest.approx(0.5)
        assert state_transfer_infidelity(GROUND, GROUND) == 0.0

    def test_robustness_metrics(self):
        mean, std = robustness_metrics([1.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert std == pytest.approx(1.0)
        mean, _ = robustness_metrics([1.0, 3.0], weights=[0.75, 0.25])
        assert mean == pytest.approx(1.5)


class TestWorkersAndCheckpoints:
    """Tests for the worker budget and checkpoint files."""

    def test_default_workers_from_env(self, monkeypatch):
        monkeypatch.setenv('BOSONIC_CTRL_WORKERS', '3')
        assert default_workers() == 3

    def test_default_workers_rejects_garbage(self, monkeypatch):
        monkeypatch.setenv('BOSONIC_CTRL_WORKERS', 'many')
        with pytest.raises(InvalidArgumentError):
            default_workers()

    def test_checkpoint_file(self, tmp_path):
        result = propagate_closed(rabi(hz(1e6)), GROUND, TimeGrid(1e-9, 4), checkpoints=[2])
        path = write_checkpoints(tmp_path / 'run' / 'checkpoints.json', result, 1e-9, seed=4)
        payload = read_checkpoints(path)
        assert payload['header']['seed'] == 4
        assert payload['checkpoints'][0][0] == 2
        assert np.allclose(payload['final'].data, result.final.data)
