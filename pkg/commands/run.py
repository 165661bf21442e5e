"""
Benchmark run command blueprint.
"""
from dataclasses import asdict

import click
from flask import Blueprint, current_app

from middleware.config import load_run_config
from middleware.decorators import handle_exit_code
from services.errors import ConfigError, OptimizationError, SimulationError
from services.experiments import (
    RESULT_FORMAT_VERSION,
    BenchmarkSpec,
    save_state,
    spurious_phase_study,
    sweep,
    sweep_frame,
)
from services.hilbert import export_grid_csv
from services.model import TWO_PI
from services.storage import RunStore

run_bp = Blueprint('run', __name__, cli_group=None)

STUDIES = ('spurious-phase',)


def point_summary(result, state_file=None):
    """JSON-ready record of one sweep point."""
    return {
        'index': result.index,
        'scheme': result.scheme,
        'photon_number': result.photon_number,
        'chi_hz': result.chi / TWO_PI,
        'system': 'open' if result.open_system else 'closed',
        'infidelity': result.infidelity,
        'reference_infidelity': result.reference_infidelity,
        'metrics': result.metrics,
        'metadata': result.metadata,
        'state_file': state_file,
        'state_dims': list(result.state.dims) if result.state is not None else None,
        'error': result.error,
        'error_kind': result.error_kind,
    }


@run_bp.cli.command('run')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True,
              help='Run configuration JSON with a scenario section')
@click.option('--output', default=None, help='Output root directory')
@click.option('--seed', type=int, default=None)
@click.option('--workers', type=int, default=None, help='Worker budget (overrides BOSONIC_CTRL_WORKERS)')
@click.option('--fast', is_flag=True, help='Substitute CI-scale settings')
@click.option('--paper-scale', 'paper_scale', is_flag=True, help='Substitute paper-scale settings')
@handle_exit_code
def run_command(config_path, output, seed, workers, fast, paper_scale):
    """
    Run a benchmark sweep into a run directory named by the config hash.

    Writes sweep.csv, summary.json, the reduced cavity state and the phase-space
    grids of every completed point, and manifest.json. Exits with the code of the
    first failure kind once every point has been attempted.
    """
    config = load_run_config(config_path, {'output': output, 'seed': seed, 'workers': workers},
                             fast=fast, paper_scale=paper_scale)
    current_app.config['RUN_CONFIG'] = config
    study = config.scenario.get('study')
    if study is not None and study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}, expected one of {STUDIES}")

    spec = BenchmarkSpec.from_config(config.to_dict())
    manifest_config = {'command': 'run', **config.to_dict()}
    store = RunStore.for_config(manifest_config, root=config.output, prefix='run-')
    store.clear()
    current_app.logger.info("run: %s with %d points into %s", spec.scenario, len(spec.points()), store.path)

    results = sweep(spec, workers=config.workers)
    store.write_frame('sweep.csv', sweep_frame(results))
    points = []
    for result in results:
        state_file = None
        if result.ok:
            state_file = f'states/point_{result.index:03d}.csv'
            save_state(result.state, store.file(state_file))
            for name, grid in result.tomography.items():
                export_grid_csv(grid, store.file(f'grids/point_{result.index:03d}_{name}.csv'))
        points.append(point_summary(result, state_file))

    if study == 'spurious-phase':
        store.write_frame('study.csv', spurious_phase_study(spec, scheme=spec.schemes[0], workers=config.workers))

    store.write_json('summary.json', {
        'format_version': RESULT_FORMAT_VERSION,
        'scenario': spec.scenario,
        'tomography': asdict(spec.tomography),
        'points': points,
    })
    store.write_manifest(manifest_config, config.seed, config.substitutions)

    failed = [r for r in results if not r.ok]
    if any(r.error_kind == 'simulation' for r in failed):
        raise SimulationError(f"{len(failed)} of {len(results)} points failed; see {store.path / 'summary.json'}")
    if failed:
        raise OptimizationError(f"{len(failed)} of {len(results)} points failed; see {store.path / 'summary.json'}")
    return {'run_dir': str(store.path), 'points': len(results),
            'infidelities': [r.infidelity for r in results]}
