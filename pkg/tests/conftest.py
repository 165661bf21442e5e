"""Shared fixtures for the test suite."""

import json

import pytest

from app import create_app
from services.model import SystemParams, derive_nonlinearities, hz

PHYSICS = {
    'omega_q_hz': 5.0e9,
    'K_q_hz': -200.0e6,
    'omega_c_hz': [7.0e9, 7.0e9],
    'd_q': 3,
    'ej_ec_ratio': 50,
}


@pytest.fixture
def params():
    """Default device tuned to chi/2pi = -300 kHz on both modes."""
    return SystemParams.default_device(chi=hz(-300e3))


@pytest.fixture
def nonlinearities(params):
    return derive_nonlinearities(params)


@pytest.fixture
def app():
    return create_app()


@pytest.fixture
def runner(app):
    return app.test_cli_runner(mix_stderr=False)


@pytest.fixture
def write_config(tmp_path):
    """Write a run config to tmp_path and return its path."""
    def write(data, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return write


@pytest.fixture
def identity_config():
    """Cheapest compile target: a single block on a small cavity with DRAG pulses."""
    return {
        'physics': dict(PHYSICS),
        'pulse': {'duration_ns': 20, 'dt_ns': 0.5},
        'scenario': {
            'type': 'identity',
            'photon_numbers': [0.0],
            'chis_hz': [-300e3],
            'schemes': ['drag'],
            'cavity_dim': 6,
            'compile': {'n_blocks': 1, 'n_starts': 2, 'max_blocks': 1, 'max_iter': 200},
        },
        'seed': 3,
    }
