"""
Pulse optimization command blueprint.
"""
import click
import numpy as np
from flask import Blueprint, current_app

from middleware.config import load_run_config
from middleware.decorators import handle_exit_code
from services.errors import ConfigError, OptimizationError
from services.grape import DetuningGrid, PulseConstraints, TransmonControl, drag_pulse, robustness_curve, select_duration
from services.model import DecoherenceRates, hz
from services.storage import RunStore

optimize_bp = Blueprint('optimize', __name__, cli_group=None)

ANGLES = {'x_pi': np.pi, 'x_half_pi': np.pi / 2}
DEFAULT_K_Q_HZ = -200e6


def parse_durations(value):
    """Comma-separated durations in ns -> list of floats."""
    try:
        durations = [float(v) for v in value.split(',') if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--durations must be comma-separated numbers, got {value!r}") from e
    if not durations or any(d <= 0 for d in durations):
        raise ConfigError(f"--durations needs positive values, got {value!r}")
    return durations


@optimize_bp.cli.command('optimize-pulse')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Run configuration JSON')
@click.option('--durations', default=None, help='Comma-separated candidate durations in ns')
@click.option('--output', default=None, help='Output root directory')
@click.option('--seed', type=int, default=None)
@click.option('--workers', type=int, default=None, help='Worker budget (overrides BOSONIC_CTRL_WORKERS)')
@click.option('--fast', is_flag=True, help='Coarse start lattice')
@handle_exit_code
def optimize_pulse_command(config_path, durations, output, seed, workers, fast):
    """
    Optimize robust ancilla rotations and pick the duration with the lowest open-system cost.

    Writes per angle: the optimization report, the envelope CSV and, when a
    robustness range is configured, the robustness curves of the pulse and of a
    DRAG pulse of the same duration.
    """
    config = load_run_config(config_path, {'output': output, 'seed': seed, 'workers': workers}, fast=fast)
    current_app.config['RUN_CONFIG'] = config
    physics, pulse = config.physics, config.pulse

    if durations:
        candidates = parse_durations(durations)
    else:
        candidates = pulse.get('durations_ns') or [pulse.get('duration_ns', 20.0)]
    angles = pulse.get('angles', ['x_pi'])
    unknown = [a for a in angles if a not in ANGLES]
    if unknown:
        raise ConfigError(f"unknown pulse angles {unknown}, expected {sorted(ANGLES)}")

    control = TransmonControl.from_config(pulse, hz(physics.get('K_q_hz', DEFAULT_K_Q_HZ)))
    grid = DetuningGrid.from_config(pulse.get('detuning', {}))
    constraints = PulseConstraints.from_config(pulse.get('constraints', {}), fast=config.fast)
    rates = DecoherenceRates.from_config(physics.get('decoherence', {}))

    manifest_config = {'command': 'optimize-pulse', 'durations_ns': candidates, **config.to_dict()}
    store = RunStore.for_config(manifest_config, root=config.output, prefix='optimize-')
    store.clear()
    current_app.logger.info("optimize-pulse: %s over %s ns into %s", angles, candidates, store.path)

    selected = {}
    for name in angles:
        theta = ANGLES[name]
        report = select_duration([d * 1e-9 for d in candidates], rates, theta, grid, control, constraints,
                                 workers=config.workers)
        if not np.isfinite(report.best_cost):
            raise OptimizationError(f"{name} optimization produced a non-finite cost")
        report.to_json(store.file(f'{name}_report.json'))
        report.envelope.to_csv(store.file(f'{name}_envelope.csv'))
        selected[name] = {
            'duration_ns': report.duration * 1e9,
            'closed_cost': report.best_cost,
            'converged': report.converged,
        }
        robustness = pulse.get('robustness')
        if robustness:
            lo, hi = robustness.get('range_hz', [-10e6, 10e6])
            deltas = np.linspace(hz(lo), hz(hi), int(robustness.get('points', 201)))
            open_rates = None if rates.is_zero else rates
            curve = robustness_curve(report.envelope, deltas, theta, control, open_rates)
            curve.to_csv(store.file(f'{name}_robustness.csv'))
            drag = drag_pulse(theta, report.duration, control.K_q, control.dt, control)
            robustness_curve(drag, deltas, theta, control, open_rates).to_csv(store.file(f'{name}_drag_robustness.csv'))
            selected[name]['closed_mean'] = curve.metrics['closed_mean']

    store.write_manifest(manifest_config, config.seed, config.substitutions)
    return {'run_dir': str(store.path), 'selected': selected}
