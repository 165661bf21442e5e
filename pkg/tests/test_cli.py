"""Tests for the command-line surface."""

import json
from pathlib import Path

import pytest

from services.experiments import save_state
from services.hilbert import bellcat_state


def payload(result):
    return json.loads(result.stdout.strip().splitlines()[-1])


class TestConfigErrors:
    """Bad inputs exit with code 2 before any work is done."""

    def test_missing_config(self, runner, tmp_path):
        result = runner.invoke(args=['run', '--config', str(tmp_path / 'missing.json')])
        assert result.exit_code == 2
        assert 'not found' in result.stderr

    def test_unknown_key(self, runner, write_config, identity_config):
        path = write_config(dict(identity_config, colour='blue'))
        result = runner.invoke(args=['run', '--config', str(path)])
        assert result.exit_code == 2
        assert 'colour' in result.stderr

    def test_exclusive_scales(self, runner, write_config, identity_config, tmp_path):
        path = write_config(identity_config)
        result = runner.invoke(args=['run', '--config', str(path), '--fast', '--paper-scale',
                                     '--output', str(tmp_path)])
        assert result.exit_code == 2

    def test_run_rejects_compile_only_target(self, runner, write_config, identity_config, tmp_path):
        result = runner.invoke(args=['run', '--config', str(write_config(identity_config)),
                                     '--output', str(tmp_path / 'runs')])
        assert result.exit_code == 2

    def test_bad_durations(self, runner, tmp_path):
        result = runner.invoke(args=['optimize-pulse', '--durations', '20,abc', '--output', str(tmp_path)])
        assert result.exit_code == 2

    def test_tomography_needs_run_dir(self, runner, tmp_path):
        result = runner.invoke(args=['tomography', '--run', str(tmp_path)])
        assert result.exit_code == 2


class TestVerify:
    """Tests for the in-process invariant suites."""

    def test_identities_suite(self, runner):
        result = runner.invoke(args=['verify', '--suite', 'identities'])
        assert result.exit_code == 0
        checks = payload(result)['checks']
        assert checks and all(c['passed'] for c in checks)
        assert 'rotation_decomposition' in [c['check'] for c in checks]

    @pytest.mark.slow
    def test_model_suite(self, runner):
        result = runner.invoke(args=['verify', '--suite', 'model', '--suite', 'hilbert'])
        assert result.exit_code == 0
        frames = [c for c in payload(result)['checks'] if c['check'].startswith('frame_equivalence')]
        assert len(frames) == 10
        assert all(c['value'] < 1e-6 for c in frames)


class TestCompile:
    """Tests for the compile command."""

    def test_identity_compile(self, runner, write_config, identity_config, tmp_path):
        args = ['compile', '--config', str(write_config(identity_config)), '--output', str(tmp_path),
                '--workers', '1']
        first = runner.invoke(args=args)
        assert first.exit_code == 0, first.stderr
        run_dir = Path(payload(first)['run_dir'])
        assert run_dir.parent == tmp_path and run_dir.name.startswith('compile-')
        manifest = json.loads((run_dir / 'manifest.json').read_text())
        assert 'compile.json' in manifest['files']
        assert 'circuit.json' in manifest['files']
        assert manifest['seed'] == 3
        circuit = (run_dir / 'circuit.json').read_text()

        second = runner.invoke(args=args)
        assert second.exit_code == 0
        assert payload(second)['run_dir'] == payload(first)['run_dir']
        assert (run_dir / 'circuit.json').read_text() == circuit


class TestTomography:
    """Tests for exporting stored states."""

    def test_exports_stored_point(self, runner, tmp_path):
        run_dir = tmp_path / 'run-0123'
        save_state(bellcat_state(0.8, (12, 12)).to_density(), run_dir / 'states' / 'point_000.csv')
        summary = {
            'format_version': 1,
            'scenario': 'bell-cat',
            'tomography': {'eta_max': 1.0, 'points': 5, 'grid_points': 0},
            'points': [{'index': 0, 'photon_number': 0.64, 'state_file': 'states/point_000.csv',
                        'state_dims': [12, 12]}],
        }
        (run_dir / 'summary.json').write_text(json.dumps(summary))

        result = runner.invoke(args=['tomography', '--run', str(run_dir)])
        assert result.exit_code == 0, result.stderr
        out = run_dir / 'tomography'
        assert (out / 'manifest.json').exists()
        assert sorted(p.name for p in (out / 'point_000').iterdir()) == payload(result)['exported']['0']

    def test_unknown_point(self, runner, tmp_path):
        run_dir = tmp_path / 'run-0123'
        run_dir.mkdir()
        (run_dir / 'summary.json').write_text(json.dumps({'scenario': 'bell-cat', 'points': []}))
        result = runner.invoke(args=['tomography', '--run', str(run_dir), '--point', '3'])
        assert result.exit_code == 2
