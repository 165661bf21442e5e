"""
Tomography export command blueprint.
"""
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
from flask import Blueprint, current_app

from middleware.decorators import handle_exit_code
from services.errors import ConfigError
from services.experiments import TomographySettings, export_tomography, load_state
from services.storage import RunStore

tomography_bp = Blueprint('tomography', __name__, cli_group=None)


@tomography_bp.cli.command('tomography')
@click.option('--run', 'run_dir', type=click.Path(file_okay=False), required=True,
              help='Run directory written by the run command')
@click.option('--point', type=int, default=None, help='Sweep index to export (all completed points by default)')
@click.option('--eta-max', 'eta_max', type=float, default=None, help='Half-width of the cuts and grids')
@click.option('--points', type=int, default=None, help='Samples along each diagonal cut')
@click.option('--grid-points', 'grid_points', type=int, default=None, help='Samples per axis of the 2D grids (0 skips)')
@handle_exit_code
def tomography_command(run_dir, point, eta_max, points, grid_points):
    """
    Export phase-space data of stored final states into <run>/tomography.

    Two-mode states get real and imaginary diagonal cuts of the joint characteristic
    function with the ideal Bell-cat overlay column, plus the 2D grids; single-mode
    states get the Wigner grid.
    """
    run = RunStore(root=Path(run_dir).parent, name=Path(run_dir).name)
    try:
        summary = run.read_json('summary.json')
    except FileNotFoundError as e:
        raise ConfigError(f"{run_dir} is not a run directory: {e}") from e

    settings = TomographySettings(**summary.get('tomography', {}))
    flags = {'eta_max': eta_max, 'points': points, 'grid_points': grid_points}
    settings = replace(settings, **{k: v for k, v in flags.items() if v is not None})
    if settings.eta_max <= 0 or settings.points < 2 or settings.grid_points < 0:
        raise ConfigError(f"invalid tomography sampling {settings}")

    selected = [p for p in summary['points'] if p.get('state_file')]
    if point is not None:
        selected = [p for p in selected if p['index'] == point]
        if not selected:
            raise ConfigError(f"run has no completed point {point}")

    out = RunStore(root=run.path, name='tomography')
    out.clear()
    current_app.logger.info("tomography: %d points of %s", len(selected), run.path)
    exported = {}
    for record in selected:
        state = load_state(run.file(record['state_file']), record['state_dims'])
        alpha = float(np.sqrt(record['photon_number'])) if summary.get('scenario') == 'bell-cat' else None
        written = export_tomography(state, out.ensure() / f"point_{record['index']:03d}", settings, alpha)
        exported[record['index']] = sorted(p.name for p in written.values())

    manifest_config = {'command': 'tomography', 'run': run.name, 'point': point,
                       'settings': {k: getattr(settings, k) for k in ('eta_max', 'points', 'grid_points',
                                                                      'wigner_extent', 'wigner_points')}}
    out.write_manifest(manifest_config, seed=0)
    return {'tomography_dir': str(out.path), 'exported': exported}
