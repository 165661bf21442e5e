"""
Middleware package for configuration loading and command result handling.
"""

from .config import RunConfig, load_run_config
from .decorators import handle_exit_code

__all__ = ['RunConfig', 'load_run_config', 'handle_exit_code']
