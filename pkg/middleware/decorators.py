"""
Decorators for handling command results and errors.
"""
import json
import logging
from functools import wraps

import click

from services.errors import OptimizationError, SimulationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_OPTIMIZATION = 3
EXIT_SIMULATION = 4

logger = logging.getLogger(__name__)


def _emit(payload: dict, err: bool = False) -> None:
    click.echo(json.dumps(payload, sort_keys=True, default=str), err=err)


def handle_exit_code(func):
    """
    Decorator to handle standard error reporting for CLI commands.

    Wraps the command and maps exceptions onto exit codes:
    - ValueError (config and argument errors) -> 2
    - OptimizationError (pulse, circuit or fragment optimization) -> 3
    - SimulationError -> 4
    - Exception -> 4

    The decorated function should return a dict with the success data.
    The decorator prints it in the standard envelope on stdout; errors go
    to stderr as {"status": "error", "message": ...}.
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            result = func(*args, **kwargs)
            _emit({'status': 'success', **(result or {})})
            return EXIT_OK

        except ValueError as e:
            code, message = EXIT_CONFIG, str(e)

        except OptimizationError as e:
            code, message = EXIT_OPTIMIZATION, str(e)

        except SimulationError as e:
            code, message = EXIT_SIMULATION, str(e)

        except Exception as e:
            logger.exception("unexpected error in %s", func.__name__)
            code, message = EXIT_SIMULATION, f'An unexpected error occurred: {str(e)}'

        _emit({'status': 'error', 'message': message}, err=True)
        raise click.exceptions.Exit(code)

    return wrapper
