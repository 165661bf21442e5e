"""
Circuit compilation command blueprint.
"""
import click
from flask import Blueprint, current_app

from middleware.config import load_run_config
from middleware.decorators import handle_exit_code
from services.ecd.schedule import segment_durations
from services.errors import ConfigError
from services.experiments import BenchmarkSpec, compile_schedule, library_for, schedule_options
from services.grape.selection import PulseLibrary
from services.model import TWO_PI
from services.storage import RunStore

compile_bp = Blueprint('compile', __name__, cli_group=None)


@compile_bp.cli.command('compile')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Run configuration JSON with a scenario section')
@click.option('--scheme', type=click.Choice(PulseLibrary.SCHEMES), default=None,
              help='Source of the echo and rotation pulses')
@click.option('--pulse-file', 'pulse_files', multiple=True, type=click.Path(dir_okay=False),
              help='Optimization report with a QOC pulse (repeat for X_pi and X_pi/2)')
@click.option('--output', default=None, help='Output root directory')
@click.option('--seed', type=int, default=None)
@click.option('--workers', type=int, default=None, help='Worker budget (overrides BOSONIC_CTRL_WORKERS)')
@handle_exit_code
def compile_command(config_path, scheme, pulse_files, output, seed, workers):
    """
    Compile the scenario's target state transfer and write its pulse schedule.

    The first |alpha|^2 and chi of the scenario are used. Writes circuit.json, the
    schedule directory (one CSV per channel plus events.json) and compile.json with
    the pulse scheme and timing.
    """
    config = load_run_config(config_path, {'output': output, 'seed': seed, 'workers': workers})
    if pulse_files:
        config.pulse['files'] = list(pulse_files)
    current_app.config['RUN_CONFIG'] = config
    if not config.scenario:
        raise ConfigError("compile needs a scenario section (type: identity, fock-spectator or bell-cat)")

    spec = BenchmarkSpec.from_config(config.to_dict())
    scheme = scheme or spec.schemes[0]
    photon_number, chi = spec.photon_numbers[0], spec.chis[0]
    manifest_config = {'command': 'compile', 'scheme': scheme, **config.to_dict()}
    store = RunStore.for_config(manifest_config, root=config.output, prefix='compile-')
    store.clear()
    current_app.logger.info("compile: %s target with %s pulses into %s", spec.scenario, scheme, store.path)

    library = library_for(spec, scheme, config.workers)
    circuit, schedule = compile_schedule(spec, photon_number, chi, library, schedule_options(spec, library),
                                         config.workers)
    circuit.to_json(store.file('circuit.json'))
    schedule.to_files(store.file('schedule/events.json').parent)
    store.write_json('compile.json', {
        'scenario': spec.scenario,
        'scheme': scheme,
        'photon_number': photon_number,
        'chi_hz': chi / TWO_PI,
        'n_blocks': circuit.n_blocks,
        'ideal_infidelity': circuit.infidelity,
        'n_steps': schedule.n_steps,
        'segment_durations_s': segment_durations(schedule),
        'n_events': len(schedule.events),
    })
    store.write_manifest(manifest_config, config.seed, config.substitutions)
    return {'run_dir': str(store.path), 'scheme': scheme, 'n_blocks': circuit.n_blocks,
            'ideal_infidelity': circuit.infidelity}
