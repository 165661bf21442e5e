"""Tests for benchmark specs, spectator grading, sweeps and tomography export."""

import numpy as np
import pandas as pd
import pytest

import services.experiments as experiments
from services.errors import ConfigError, MissingParameterError
from services.experiments import (
    BenchmarkResult,
    BenchmarkSpec,
    CompileSettings,
    TomographySettings,
    compile_target,
    export_tomography,
    fock_cutoff,
    load_state,
    run_bellcat,
    run_fock_spectator,
    save_state,
    schedule_options,
    spectator_overlap,
    spurious_phase_study,
    sweep,
    sweep_frame,
)
from services.grape import PulseLibrary, TransmonControl
from services.hilbert import QuantumState, bellcat_state, coherent_state, cutoff_for
from services.model import DecoherenceRates, SystemParams, hz
from tests.conftest import PHYSICS


def spec_for(scenario, **overrides):
    values = {'scenario': scenario, 'params': SystemParams.from_config(PHYSICS), 'schemes': ('drag',)}
    values.update(overrides)
    return BenchmarkSpec(**values)


class TestBenchmarkSpec:
    """Tests for scenario validation and sweep points."""

    @pytest.mark.parametrize("overrides", [
        {'scenario': 'cat-state'},
        {'photon_numbers': ()},
        {'photon_numbers': (-1.0,)},
        {'schemes': ('gaussian',)},
        {'n_traj': 0},
        {'fock_n': -1},
    ])
    def test_invalid_spec(self, overrides):
        with pytest.raises(ConfigError):
            spec_for(overrides.pop('scenario', 'bell-cat'), **overrides)

    def test_open_system_needs_rates(self):
        with pytest.raises(MissingParameterError):
            spec_for('bell-cat', open_system=True)

    def test_from_config(self, identity_config):
        config = dict(identity_config, scenario=dict(identity_config['scenario'], type='bell-cat',
                                                     photon_numbers=[1.0, 4.0]))
        spec = BenchmarkSpec.from_config(config)
        assert spec.chis == (hz(-300e3),)
        assert spec.photon_numbers == (1.0, 4.0)
        assert spec.dt == pytest.approx(0.5e-9)
        assert spec.compile.n_starts == 2
        assert spec.seed == 3

    def test_from_config_needs_scenario(self):
        with pytest.raises(ConfigError):
            BenchmarkSpec.from_config({'physics': PHYSICS})

    def test_points_order(self):
        spec = spec_for('bell-cat', schemes=('qoc', 'drag'), chis=(hz(-1e5), hz(-2e5)), photon_numbers=(0.0, 4.0))
        points = spec.points()
        assert len(points) == 8
        assert points[0] == ('qoc', hz(-1e5), 0.0)
        assert points[1] == ('qoc', hz(-1e5), 4.0)
        assert points[-1] == ('drag', hz(-2e5), 4.0)

    def test_device_is_tuned_to_chi(self):
        _, nl = spec_for('bell-cat').device(hz(-200e3))
        assert nl.chi[0] == pytest.approx(hz(-200e3), rel=1e-10)

    def test_device_can_drop_nonlinearities(self):
        _, nl = spec_for('bell-cat', nonlinearities=(False, True, False)).device(hz(-200e3))
        assert nl.K == (0.0, 0.0)
        assert nl.K12 != 0.0

    def test_tomography_axis_contains_origin(self):
        axis = TomographySettings(eta_max=2.0, points=4).axis()
        assert 0.0 in axis
        assert axis[0] == -2.0 and axis[-1] == 2.0
        assert len(TomographySettings(points=5).axis(eta_max=1.0)) == 5


class TestCompileTargets:
    """Tests for the ideal-gate state-transfer tasks."""

    def test_fock_target(self):
        spec = spec_for('fock-spectator', fock_n=2, cavity_dim=7)
        target = compile_target(spec, 4.0)
        assert target.initial.dims == (2, 7, 1)
        assert target.active_modes == (0,)
        assert abs(target.target.data[2]) == pytest.approx(1.0)

    def test_fock_cutoff(self):
        assert fock_cutoff(spec_for('fock-spectator', fock_n=3)) >= 7
        assert fock_cutoff(spec_for('fock-spectator', cavity_dim=9)) == 9

    def test_bellcat_target(self):
        target = compile_target(spec_for('bell-cat'), 1.0)
        d = cutoff_for(1.0)
        assert target.target.dims == (2, d, d)
        assert np.allclose(target.target.data[d * d:], 0.0)
        assert target.target.norm() == pytest.approx(1.0)

    def test_identity_target(self):
        target = compile_target(spec_for('identity', cavity_dim=5), 0.0)
        assert np.array_equal(target.initial.data, target.target.data)


class TestSpectatorOverlap:
    """Tests for the full-state overlap over spectator rotations."""

    def test_single_block(self):
        fidelity, _ = spectator_overlap(np.array([1.0]), np.array([0.9j]), np.array([0]))
        assert fidelity == pytest.approx(0.81)

    def test_rotation_aligns_blocks(self):
        fidelity, angle = spectator_overlap(np.array([0.5, 0.5]), np.array([1.0, -1.0]), np.array([0, 1]))
        assert fidelity == pytest.approx(1.0, abs=1e-12)
        assert abs(np.exp(1j * angle) + 1) < 1e-6

    def test_refinement_beats_scan(self):
        photons = np.array([0, 3])
        phase = 0.123456
        fidelity, angle = spectator_overlap(np.array([0.5, 0.5]), np.array([1.0, np.exp(-3j * phase)]), photons)
        assert fidelity == pytest.approx(1.0, abs=1e-12)
        assert np.exp(3j * angle) == pytest.approx(np.exp(3j * phase), abs=1e-6)


class TestResults:
    """Tests for sweep tables and state files."""

    def test_sweep_frame_order(self):
        results = [BenchmarkResult(index=i, scenario='bell-cat', scheme='drag', photon_number=float(i),
                                   chi=hz(-300e3), open_system=False, infidelity=0.01 * i) for i in (2, 0, 1)]
        frame = sweep_frame(results)
        assert frame['index'].tolist() == [0, 1, 2]
        assert frame['chi_hz'].tolist() == pytest.approx([-300e3] * 3)
        assert set(frame['status']) == {'ok'}

    def test_failed_row(self):
        result = BenchmarkResult(index=0, scenario='bell-cat', scheme='qoc', photon_number=4.0, chi=hz(-1e5),
                                 open_system=True, error='no circuit', error_kind='optimization')
        row = result.to_row()
        assert not result.ok
        assert row['status'] == 'failed'
        assert row['system'] == 'open'
        assert np.isnan(row['infidelity'])

    def test_state_file(self, tmp_path):
        state = bellcat_state(1.0, (8, 8)).to_density()
        path = save_state(state, tmp_path / 'states' / 'point_000.csv')
        loaded = load_state(path, (8, 8))
        assert loaded.dims == (8, 8)
        assert np.array_equal(loaded.data, state.to_density().data)

    def test_sweep_rejects_identity(self):
        with pytest.raises(ConfigError):
            sweep(spec_for('identity'))


class TestTomographyExport:
    """Tests for phase-space exports."""

    def test_bellcat_overlay(self, tmp_path):
        alpha = 1.5
        state = bellcat_state(alpha, (40, 40)).to_density()
        settings = TomographySettings(eta_max=2.0, points=41, grid_points=0)
        written = export_tomography(state, tmp_path, settings, alpha=alpha)
        assert set(written) == {'real_cut', 'imag_cut'}
        for name in ('real_cut', 'imag_cut'):
            frame = pd.read_csv(written[name], float_precision='round_trip')
            assert list(frame.columns) == ['eta', 're_value', 'im_value', 'ideal']
            assert np.allclose(frame['re_value'], frame['ideal'], atol=1e-8)

    def test_grids(self, tmp_path):
        state = bellcat_state(0.8, (12, 12)).to_density()
        written = export_tomography(state, tmp_path, TomographySettings(eta_max=1.0, points=5, grid_points=3))
        assert set(written) == {'real_cut', 'imag_cut', 'real_grid', 'imag_grid'}
        frame = pd.read_csv(written['real_cut'])
        assert 'ideal' not in frame.columns

    def test_single_mode_gets_wigner(self, tmp_path):
        state = coherent_state(0.5, 10).to_density()
        written = export_tomography(state, tmp_path, TomographySettings(wigner_extent=2.0, wigner_points=5))
        assert list(written) == ['wigner']
        assert written['wigner'].exists()


class TestBenchmarkRuns:
    """Small end-to-end benchmark points."""

    @pytest.fixture
    def drag_library(self):
        control = TransmonControl(hz(-200e6), levels=3, dt=0.5e-9)
        return PulseLibrary.drag(control, 20e-9)

    def test_drag_options_skip_robust_correction(self, drag_library):
        spec = spec_for('bell-cat', transmon_levels=3, dt=0.5e-9)
        options = schedule_options(spec, drag_library)
        assert not options.robust_linear
        assert options.slopes == {'echo': None, 'x90': None}

    def test_spurious_phase_variants(self, drag_library, monkeypatch):
        calls = []

        def fake_run(spec, photon_number, chi, scheme, library, options, workers):
            calls.append((spec.nonlinearities, options.spurious))
            return BenchmarkResult(index=0, scenario='bell-cat', scheme=scheme, photon_number=photon_number,
                                   chi=chi, open_system=False, infidelity=0.01 * len(calls))

        monkeypatch.setattr(experiments, 'run_bellcat', fake_run)
        spec = spec_for('bell-cat', transmon_levels=3, dt=0.5e-9, chis=(hz(-100e3), hz(-300e3)),
                        nonlinearities=(False, False, False))
        table = spurious_phase_study(spec, scheme='drag', photon_number=4.0, library=drag_library, workers=1)
        assert list(table.columns) == ['chi_hz', 'reference', 'k12', 'k12_k', 'uncorrected', 'corrected']
        assert table['chi_hz'].tolist() == pytest.approx([-100e3, -300e3])
        # (self-Kerr, cross-Kerr, chi') switched on one at a time; only the last run is corrected
        assert calls[:5] == [
            ((False, False, False), False),
            ((False, True, False), False),
            ((True, True, False), False),
            ((True, True, True), False),
            ((True, True, True), True),
        ]
        assert len(calls) == 10

    @pytest.mark.slow
    def test_vacuum_bellcat(self, drag_library):
        spec = spec_for('bell-cat', photon_numbers=(0.0,), transmon_levels=3, dt=0.5e-9)
        result = run_bellcat(spec, library=drag_library, workers=1)
        assert result.ok
        assert result.metadata['n_blocks'] == 1
        assert result.infidelity < 0.05
        assert set(result.tomography) == {'real_cut', 'imag_cut'}

    @pytest.mark.slow
    def test_fock_spectator_point(self, drag_library):
        spec = spec_for('fock-spectator', fock_n=1, photon_numbers=(1.0,), cavity_dim=6, transmon_levels=3,
                        dt=0.5e-9, compile=CompileSettings(n_starts=4, max_blocks=5))
        result = run_fock_spectator(spec, library=drag_library, workers=1)
        assert 0.0 <= result.infidelity <= 1.0
        assert 0.0 <= result.metrics['target_mode_fidelity'] <= 1.0 + 1e-9
        assert result.metadata['spectator_blocks'] == int(np.sum(np.abs(coherent_state(1.0, cutoff_for(1.0)).data) ** 2 > 1e-12))

    @pytest.mark.slow
    def test_open_run_needs_no_extra_state(self, drag_library):
        spec = spec_for('bell-cat', photon_numbers=(0.0,), transmon_levels=3, dt=0.5e-9, open_system=True,
                        intrinsic=DecoherenceRates.from_times(T1=50e-6, Tphi=50e-6), n_traj=20)
        result = run_bellcat(spec, library=drag_library, workers=1)
        assert result.state.kind == 'dm'
        assert result.metadata['n_traj'] == 20
        assert isinstance(result.state, QuantumState)
