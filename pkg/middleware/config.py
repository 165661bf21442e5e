"""
Run configuration loading and schema validation.
"""
import copy
import json
import numbers
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from services.errors import ConfigError

NUMBER = 'number'
INTEGER = 'integer'
BOOLEAN = 'boolean'
STRING = 'string'
NUMBER_OR_PAIR = 'number-or-pair'
NUMBERS = 'numbers'
STRINGS = 'strings'

DECOHERENCE_SCHEMA = {
    'T1_s': NUMBER, 'Tphi_s': NUMBER, 'cavity_T1_s': NUMBER_OR_PAIR, 'cavity_Tphi_s': NUMBER_OR_PAIR,
}

PHYSICS_SCHEMA = {
    'omega_q_hz': NUMBER, 'K_q_hz': NUMBER, 'omega_c_hz': NUMBER_OR_PAIR, 'g_hz': NUMBER_OR_PAIR,
    'chi_hz': NUMBER, 'd_q': INTEGER, 'd_c': NUMBER_OR_PAIR, 'ej_ec_ratio': NUMBER,
    'decoherence': DECOHERENCE_SCHEMA,
}

PULSE_SCHEMA = {
    'duration_ns': NUMBER, 'durations_ns': NUMBERS, 'dt_ns': NUMBER, 'transmon_levels': INTEGER,
    'angles': STRINGS, 'files': STRINGS,
    'detuning': {'deltas_hz': NUMBERS, 'range_hz': NUMBERS, 'points': INTEGER},
    'robustness': {'range_hz': NUMBERS, 'points': INTEGER},
    'constraints': {
        'max_amplitude_hz': NUMBER, 'cutoff_i': NUMBER, 'cutoff_q': NUMBER, 'penalty': NUMBER,
        'max_iterations': INTEGER, 'tolerance': NUMBER, 'patience': INTEGER, 'learning_rate': NUMBER,
        'polish_iterations': INTEGER,
    },
}

SCENARIO_SCHEMA = {
    'type': STRING, 'study': STRING, 'fock_n': INTEGER, 'photon_numbers': NUMBERS, 'chis_hz': NUMBERS,
    'schemes': STRINGS, 'open_system': BOOLEAN, 'n_traj': INTEGER, 'cavity_dim': INTEGER,
    'compile': {
        'n_blocks': INTEGER, 'threshold': NUMBER, 'max_blocks': INTEGER, 'n_starts': INTEGER,
        'max_iter': INTEGER, 'beta_scale': NUMBER,
    },
    'corrections': {
        'spurious_correction': BOOLEAN, 'robust_linear_correction': BOOLEAN,
        'synthesis': {
            'sigma_ns': NUMBER, 'max_amplitude_hz': NUMBER, 'max_wait_us': NUMBER, 'truncation': NUMBER,
            'fragment_tol': NUMBER, 'return_tol': NUMBER, 'verify': BOOLEAN,
        },
    },
    'nonlinearities': {'self_kerr': BOOLEAN, 'cross_kerr': BOOLEAN, 'second_order': BOOLEAN},
    'tomography': {
        'eta_max': NUMBER, 'points': INTEGER, 'grid_points': INTEGER, 'wigner_extent': NUMBER,
        'wigner_points': INTEGER,
    },
}

RUN_SCHEMA = {
    'physics': PHYSICS_SCHEMA, 'pulse': PULSE_SCHEMA, 'scenario': SCENARIO_SCHEMA, 'output': STRING,
    'seed': INTEGER, 'workers': INTEGER, 'fast': BOOLEAN, 'paper_scale': BOOLEAN,
}

# Values substituted by --fast and --paper-scale, keyed by scenario type.
FAST_SUBSTITUTIONS = {
    'fock-spectator': {('scenario', 'fock_n'): 3, ('scenario', 'n_traj'): 500, ('scenario', 'compile', 'n_starts'): 4},
    'bell-cat': {('scenario', 'photon_numbers'): [4.0], ('scenario', 'n_traj'): 500,
                 ('scenario', 'compile', 'n_starts'): 4},
}
PAPER_SUBSTITUTIONS = {
    'fock-spectator': {('scenario', 'fock_n'): 5, ('scenario', 'photon_numbers'): [0.0, 4.0, 9.0, 16.0],
                       ('scenario', 'n_traj'): 2000},
    'bell-cat': {('scenario', 'photon_numbers'): [16.0], ('scenario', 'n_traj'): 2000},
}
POSITIVE_KEYS = ('duration_ns', 'dt_ns', 'n_traj', 'workers', 'transmon_levels')


def _type_ok(kind: str, value: Any) -> bool:
    is_number = isinstance(value, numbers.Real) and not isinstance(value, bool)
    if kind == NUMBER:
        return is_number
    if kind == INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == BOOLEAN:
        return isinstance(value, bool)
    if kind == STRING:
        return isinstance(value, str)
    if kind == NUMBERS:
        return isinstance(value, list) and all(_type_ok(NUMBER, v) for v in value)
    if kind == STRINGS:
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == NUMBER_OR_PAIR:
        return _type_ok(NUMBER, value) or (_type_ok(NUMBERS, value) and len(value) == 2) or (
            isinstance(value, list) and len(value) == 2 and all(v is None or _type_ok(NUMBER, v) for v in value))
    raise ConfigError(f"unknown schema type {kind!r}")


def validate_section(data: Any, schema: Mapping[str, Any], path: str = '') -> None:
    """
    Check a config mapping against a nested schema.

    Args:
        data: Parsed JSON object
        schema: Key -> type name, or key -> nested schema
        path: Dotted prefix for messages

    Raises:
        ConfigError: On unknown keys, wrong types or non-positive sizes
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        kind = schema[key]
        if isinstance(kind, dict):
            validate_section(value, kind, where)
            continue
        if value is None and kind != BOOLEAN:
            continue
        if not _type_ok(kind, value):
            raise ConfigError(f"{where} must be of type {kind}, got {value!r}")
        if key in POSITIVE_KEYS and value <= 0:
            raise ConfigError(f"{where} must be positive, got {value!r}")
        if kind == NUMBERS and key != 'range_hz' and not value:
            raise ConfigError(f"{where} must not be empty")


@dataclass
class RunConfig:
    """
    Validated run configuration.

    Attributes:
        physics: Device parameters and decoherence (frequencies in Hz)
        pulse: Ancilla pulse settings (times in ns)
        scenario: Benchmark or compile target description
        output: Output root directory
        seed: Root seed
        workers: Worker budget
        fast: CI-scale substitutions applied
        paper_scale: Paper-scale substitutions applied
        substitutions: Dotted key -> {'from', 'to'} for every substituted value
    """
    physics: Dict[str, Any] = field(default_factory=dict)
    pulse: Dict[str, Any] = field(default_factory=dict)
    scenario: Dict[str, Any] = field(default_factory=dict)
    output: str = field(default_factory=lambda: os.getenv('BOSONIC_CTRL_OUTPUT', 'runs'))
    seed: int = 0
    workers: Optional[int] = None
    fast: bool = False
    paper_scale: bool = False
    substitutions: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Config as written to the manifest (no output root, no substitution log)."""
        data = asdict(self)
        for key in ('output', 'substitutions', 'workers'):
            data.pop(key)
        return data


def _set_path(data: Dict[str, Any], path: Tuple[str, ...], value: Any) -> Any:
    node = data
    for key in path[:-1]:
        node = node.setdefault(key, {})
    previous = node.get(path[-1])
    node[path[-1]] = copy.deepcopy(value)
    return previous


def apply_scale(data: Dict[str, Any], fast: bool = False, paper_scale: bool = False) -> Dict[str, Any]:
    """
    Substitute CI-scale or paper-scale defaults in place.

    Returns:
        Dotted key -> {'from': old value, 'to': new value} for every change

    Raises:
        ConfigError: If both scales are requested
    """
    if fast and paper_scale:
        raise ConfigError("--fast and --paper-scale are mutually exclusive")
    if not (fast or paper_scale):
        return {}
    kind = data.get('scenario', {}).get('type')
    table = (FAST_SUBSTITUTIONS if fast else PAPER_SUBSTITUTIONS).get(kind, {})
    changes: Dict[str, Any] = {}
    for path, value in table.items():
        previous = _set_path(data, path, value)
        if previous != value:
            changes['.'.join(path)] = {'from': previous, 'to': value}
    data['fast' if fast else 'paper_scale'] = True
    return changes


def load_run_config(
    path: Union[str, Path, None] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    fast: bool = False,
    paper_scale: bool = False
) -> RunConfig:
    """
    Load, validate and scale a JSON run configuration.

    Args:
        path: Config file; None starts from an empty config
        overrides: Top-level values from command-line flags (None values are ignored)
        fast: Apply CI-scale substitutions
        paper_scale: Apply paper-scale substitutions

    Returns:
        RunConfig

    Raises:
        ConfigError: If the file is missing, not JSON, or fails validation
    """
    data: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            data = json.loads(config_path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from e
    validate_section(data, RUN_SCHEMA)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    validate_section(data, RUN_SCHEMA)

    fast = fast or bool(data.get('fast'))
    paper_scale = paper_scale or bool(data.get('paper_scale'))
    substitutions = apply_scale(data, fast=fast, paper_scale=paper_scale)
    config = RunConfig(**{k: v for k, v in data.items() if v is not None})
    config.substitutions = substitutions
    return config


__all__ = ['RunConfig', 'load_run_config', 'validate_section', 'apply_scale', 'RUN_SCHEMA']
