"""Tests for the exit-code decorator."""

import json

import click
import pytest
from click.testing import CliRunner

from middleware.decorators import handle_exit_code
from services.errors import CompilationError, ConfigError, OptimizationError, SimulationError


def command_raising(error):
    @click.command()
    @handle_exit_code
    def command():
        if error is not None:
            raise error
        return {'answer': 42}
    return command


class TestHandleExitCode:
    """Tests for the JSON envelope and exit-code mapping."""

    def test_success(self):
        result = CliRunner(mix_stderr=False).invoke(command_raising(None))
        assert result.exit_code == 0
        assert json.loads(result.stdout) == {'status': 'success', 'answer': 42}

    @pytest.mark.parametrize("error,code", [
        (ConfigError('bad key'), 2),
        (ValueError('bad value'), 2),
        (OptimizationError('no convergence'), 3),
        (CompilationError('budget exhausted'), 3),
        (SimulationError('diverged'), 4),
        (RuntimeError('boom'), 4),
    ])
    def test_error_codes(self, error, code):
        result = CliRunner(mix_stderr=False).invoke(command_raising(error))
        assert result.exit_code == code
        payload = json.loads(result.stderr.strip().splitlines()[-1])
        assert payload['status'] == 'error'
        assert str(error) in payload['message']
        assert result.stdout == ''
