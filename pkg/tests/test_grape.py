"""Tests for robust ancilla pulse optimization."""

import numpy as np
import pytest

from services.errors import InvalidArgumentError, NotRobustError
from services.grape import (
    ComplexEnvelope,
    DetuningGrid,
    OptimizationReport,
    PulseConstraints,
    PulseLibrary,
    TransmonControl,
    bandwidth_filter,
    cost_closed,
    drag_pulse,
    extract_linear_phase,
    initial_ansatz,
    optimize_pulse,
    robustness_curve,
    select_duration,
)
from services.grape.envelopes import band_limited_basis, sample_count
from services.grape.optimizer import PulseProblem, cost_closed_gradient
from services.grape.phase import LinearPhase, linear_phase_from_propagators, phase_profile
from services.model import DecoherenceRates, hz

K_Q = hz(-200e6)
SMALL_GRID = DetuningGrid.equal([hz(-2e6), 0.0, hz(3e6)])


@pytest.fixture
def control():
    return TransmonControl(K_Q, levels=3, dt=0.5e-9)


def quick_constraints(**overrides):
    values = {'max_iterations': 30, 'polish_iterations': 10}
    values.update(overrides)
    return PulseConstraints(**values)


class TestEnvelopes:
    """Tests for envelope construction and storage."""

    def test_sample_count_needs_multiple(self):
        assert sample_count(20e-9, 0.5e-9) == 40
        with pytest.raises(InvalidArgumentError):
            sample_count(20.2e-9, 0.5e-9)

    @pytest.mark.parametrize("theta", [np.pi, np.pi / 2])
    @pytest.mark.parametrize("abc", [(0, 0, 0), (4, -2, 6)])
    def test_initial_ansatz(self, theta, abc):
        env = initial_ansatz(theta, 20e-9, *abc, K_Q, 0.5e-9)
        assert env.rotation_angle() == pytest.approx(theta, rel=1e-12)
        assert env.samples[0].real == pytest.approx(0.0, abs=1e-3 * np.pi / 20e-9)

    def test_drag_area(self):
        env = drag_pulse(np.pi / 2, 20e-9, K_Q, 0.5e-9)
        assert env.rotation_angle() == pytest.approx(np.pi / 2, rel=1e-12)
        assert np.all(env.eps_i >= -1e-9)

    def test_drag_zero_angle(self):
        assert drag_pulse(0.0, 10e-9, K_Q, 0.5e-9).peak() == 0.0

    @pytest.mark.slow
    def test_calibrated_drag_is_accurate(self):
        control = TransmonControl(K_Q, levels=4, dt=0.5e-9)
        env = drag_pulse(np.pi, 20e-9, K_Q, control.dt, control)
        assert control.infidelity(env, 0.0, np.pi) < 1e-3

    def test_csv_keeps_full_precision(self, tmp_path):
        rng = np.random.default_rng(2)
        env = ComplexEnvelope(hz(1e6) * (rng.standard_normal(16) + 1j * rng.standard_normal(16)), 0.5e-9)
        loaded = ComplexEnvelope.from_csv(env.to_csv(tmp_path / 'env.csv'))
        assert np.allclose(loaded.samples, env.samples, rtol=1e-15, atol=0)
        assert loaded.dt == pytest.approx(env.dt, rel=1e-15)

    def test_csv_missing_columns(self, tmp_path):
        path = tmp_path / 'bad.csv'
        path.write_text('t_s,eps_I_hz\n0,1\n')
        with pytest.raises(InvalidArgumentError):
            ComplexEnvelope.from_csv(path)

    def test_band_limited_basis(self):
        basis = band_limited_basis(40, 20e-9, 5 / 20e-9)
        assert np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-12)
        assert np.allclose(basis[0], 0.0, atol=1e-12)

    def test_basis_is_filter_fixed_point(self):
        rng = np.random.default_rng(3)
        t_g, dt = 20e-9, 0.5e-9
        eps_i = band_limited_basis(40, t_g, 5 / t_g) @ rng.standard_normal(10)
        eps_q = band_limited_basis(40, t_g, 10 / t_g) @ rng.standard_normal(20)
        env = ComplexEnvelope.from_quadratures(eps_i, eps_q, dt)
        filtered = bandwidth_filter(env, 5 / t_g, 10 / t_g)
        assert np.allclose(filtered.samples, env.samples, atol=1e-12)


class TestTransmonControl:
    """Tests for the driven transmon model."""

    def test_target_is_unitary(self, control):
        u = control.target(np.pi / 3)
        assert np.allclose(u.conj().T @ u, np.eye(3))

    def test_idle_is_identity(self, control):
        env = ComplexEnvelope.zeros(10e-9, control.dt)
        assert control.infidelity(env, 0.0, 0.0) == pytest.approx(0.0, abs=1e-14)
        assert control.infidelity(env, 0.0, np.pi) == pytest.approx(1.0)

    def test_zero_anharmonicity_is_rejected(self):
        with pytest.raises(InvalidArgumentError):
            TransmonControl(0.0)

    def test_open_infidelity_exceeds_closed(self, control):
        env = drag_pulse(np.pi, 20e-9, K_Q, control.dt)
        rates = DecoherenceRates.from_times(T1=50e-6, Tphi=50e-6)
        closed = control.infidelities(env, [0.0], np.pi)[0]
        opened = control.open_infidelities(env, [0.0], np.pi, rates)[0]
        assert opened > closed


class TestOptimizer:
    """Tests for the cost, its gradient and the optimizer."""

    def test_gradient_matches_central_differences(self, control):
        rng = np.random.default_rng(4)
        problem = PulseProblem(control, np.pi, 10e-9, SMALL_GRID, PulseConstraints())
        z = 0.3 * rng.standard_normal(problem.size)
        _, grad = problem(z)
        h = 1e-6 * max(1.0, np.linalg.norm(z))
        numeric = []
        analytic = []
        for _ in range(8):
            d = rng.standard_normal(problem.size)
            d /= np.linalg.norm(d)
            numeric.append((problem(z + h * d)[0] - problem(z - h * d)[0]) / (2 * h))
            analytic.append(grad @ d)
        error = np.linalg.norm(np.array(numeric) - np.array(analytic)) / np.linalg.norm(analytic)
        assert error < 1e-5

    def test_sample_gradient_cost_matches_closed_cost(self, control):
        env = initial_ansatz(np.pi, 10e-9, 2, 0, -2, K_Q, control.dt)
        cost, g_i, g_q = cost_closed_gradient(env, SMALL_GRID, np.pi, control)
        assert cost == pytest.approx(cost_closed(env, SMALL_GRID, np.pi, control), rel=1e-10)
        assert g_i.shape == g_q.shape == (env.n_samples,)

    def test_penalty_only_above_limit(self, control):
        constraints = PulseConstraints(max_amplitude=hz(50e6))
        problem = PulseProblem(control, np.pi, 10e-9, SMALL_GRID, constraints)
        value, grad = problem.penalty(np.full(problem.n_samples, hz(40e6), dtype=complex))
        assert value == 0.0
        assert not np.any(grad)
        value, _ = problem.penalty(np.full(problem.n_samples, hz(60e6), dtype=complex))
        assert value == pytest.approx(problem.n_samples * (10 / 50) ** 2)

    def test_optimize_improves_on_start(self, control):
        report = optimize_pulse(np.pi, 10e-9, SMALL_GRID, control, quick_constraints(),
                                starts=[(0, 0, 0), (2, 0, -2)], workers=1)
        assert report.best_cost <= min(report.start_costs.values()) + 1e-15
        assert report.best_cost < report.cost_trace[0]
        assert set(report.start_costs) == {(0, 0, 0), (2, 0, -2)}
        assert report.envelope.duration == pytest.approx(10e-9)

    def test_optimized_envelope_respects_bandwidth(self, control):
        report = optimize_pulse(np.pi, 10e-9, SMALL_GRID, control, quick_constraints(), starts=[(0, 0, 0)], workers=1)
        env = report.envelope
        filtered = bandwidth_filter(env, 5 / env.duration, 10 / env.duration)
        assert np.allclose(filtered.samples, env.samples, atol=1e-6 * env.peak())
        assert abs(env.samples[0]) < 1e-6 * env.peak()

    def test_report_json(self, control, tmp_path):
        report = optimize_pulse(np.pi / 2, 10e-9, SMALL_GRID, control, quick_constraints(), starts=[(0, 0, 0)],
                                workers=1)
        loaded = OptimizationReport.from_json(report.to_json(tmp_path / 'report.json'))
        assert np.array_equal(loaded.envelope.samples, report.envelope.samples)
        assert loaded.theta == report.theta
        assert loaded.best_start == (0, 0, 0)

    def test_resume_from_envelope(self, control):
        start = initial_ansatz(np.pi, 10e-9, 0, 0, 0, K_Q, control.dt)
        report = optimize_pulse(np.pi, 10e-9, SMALL_GRID, control, quick_constraints(), initial=start)
        assert report.start_costs == {}
        assert len(report.cost_trace) == 1

    def test_grid_weights_must_sum_to_one(self):
        with pytest.raises(InvalidArgumentError):
            DetuningGrid((0.0, 1.0), (0.5, 0.6))

    def test_standard_grid(self):
        grid = DetuningGrid.standard()
        assert len(grid.deltas) == 10
        assert grid.span == pytest.approx((hz(-10e6), hz(10e6)))

    def test_fast_start_lattice(self):
        assert len(PulseConstraints(fast=True).start_values()) == 5
        assert len(PulseConstraints().start_values()) == 11


class TestSelection:
    """Tests for duration selection, robustness curves and the pulse library."""

    def test_select_duration(self, control):
        rates = DecoherenceRates.from_times(T1=50e-6, Tphi=50e-6)
        durations = [8e-9, 10e-9]
        report = select_duration(durations, rates, np.pi, SMALL_GRID, control, quick_constraints(),
                                 workers=1, starts=[(0, 0, 0)])
        assert report.selected_duration in durations
        assert report.duration == pytest.approx(report.selected_duration)
        assert set(report.open_costs) == set(durations)
        best = min(report.open_costs.values())
        assert report.open_costs[report.selected_duration] == best

    def test_select_duration_needs_durations(self, control):
        with pytest.raises(InvalidArgumentError):
            select_duration([], DecoherenceRates(), np.pi, SMALL_GRID, control)

    def test_robustness_curve(self, control):
        env = drag_pulse(np.pi, 20e-9, K_Q, control.dt)
        deltas = np.linspace(hz(-5e6), hz(5e6), 5)
        curve = robustness_curve(env, deltas, np.pi, control, DecoherenceRates.from_times(T1=50e-6))
        assert set(curve.metrics) == {'closed_mean', 'closed_std', 'open_mean', 'open_std'}
        assert np.all(curve.open >= 0)
        assert curve.metrics['closed_mean'] == pytest.approx(np.mean(curve.closed))
        frame = curve.to_frame()
        assert list(frame.columns) == ['delta_hz', 'closed', 'open']

    def test_library_lookup(self, control):
        library = PulseLibrary.drag(control, 20e-9)
        assert library.scheme == 'drag'
        assert library.x_pi.rotation_angle() == pytest.approx(np.pi, rel=0.2)
        with pytest.raises(InvalidArgumentError):
            library.get(np.pi / 4)

    def test_library_rejects_unknown_scheme(self):
        with pytest.raises(InvalidArgumentError):
            PulseLibrary('gaussian', {})


class TestLinearPhase:
    """Tests for the detuning slope of the global phase."""

    def test_slope_of_pure_phase(self):
        tau = 3e-9
        target = np.eye(2, dtype=complex)
        slope = linear_phase_from_propagators(lambda d: np.exp(-1j * d * tau) * target, target, np.eye(2))
        assert slope == pytest.approx(-tau, rel=1e-9)

    def test_cavity_phase(self):
        assert LinearPhase(slope=2e-9, offset=0.0, max_infidelity=0.0).cavity_phase(hz(-300e3)) == \
            pytest.approx(hz(-300e3) * 2e-9)

    def test_drag_is_not_robust(self, control):
        env = drag_pulse(np.pi, 20e-9, K_Q, control.dt)
        with pytest.raises(NotRobustError):
            extract_linear_phase(env, np.pi, control)
        forced = extract_linear_phase(env, np.pi, control, force=True)
        assert np.isfinite(forced.slope)

    def test_phase_profile_keeps_input_order(self, control):
        env = drag_pulse(np.pi, 20e-9, K_Q, control.dt)
        deltas = np.array([hz(2e6), hz(-2e6), 0.0])
        profile = phase_profile(env, deltas, np.pi, control)
        reference = phase_profile(env, np.sort(deltas), np.pi, control)
        assert profile[2] == pytest.approx(reference[1])
