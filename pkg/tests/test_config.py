"""Tests for run configuration loading."""

import pytest

from middleware.config import RUN_SCHEMA, RunConfig, apply_scale, load_run_config, validate_section
from services.errors import ConfigError


class TestValidation:
    """Tests for the config schema."""

    @pytest.mark.parametrize("data", [
        {'physics': {'omega_q': 5e9}},
        {'physics': {'d_q': 3.5}},
        {'pulse': {'dt_ns': 0}},
        {'pulse': {'duration_ns': -20}},
        {'scenario': {'n_traj': 0}},
        {'scenario': {'photon_numbers': []}},
        {'scenario': {'open_system': 'yes'}},
        {'seed': True},
        {'scenario': []},
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            validate_section(data, RUN_SCHEMA)

    def test_accepts_pairs_and_empty_range(self, identity_config):
        config = dict(identity_config, pulse={'robustness': {'range_hz': []}})
        config['physics'] = dict(config['physics'], decoherence={'T1_s': 50e-6, 'cavity_T1_s': [1e-3, None]})
        validate_section(config, RUN_SCHEMA)


class TestLoadRunConfig:
    """Tests for reading config files with overrides and scale flags."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match='not found'):
            load_run_config(tmp_path / 'missing.json')

    def test_bad_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"seed": ')
        with pytest.raises(ConfigError, match='not valid JSON'):
            load_run_config(path)

    def test_overrides(self, write_config, identity_config):
        config = load_run_config(write_config(identity_config), {'seed': 11, 'output': 'out', 'workers': None})
        assert isinstance(config, RunConfig)
        assert config.seed == 11
        assert config.output == 'out'
        assert config.workers is None
        assert config.scenario['type'] == 'identity'

    def test_to_dict_drops_run_location(self, write_config, identity_config):
        config = load_run_config(write_config(identity_config), {'output': 'somewhere', 'workers': 2})
        data = config.to_dict()
        assert 'output' not in data and 'workers' not in data
        assert data['seed'] == 3

    def test_fast_substitutions_are_recorded(self, write_config, identity_config):
        scenario = dict(identity_config['scenario'], type='bell-cat', photon_numbers=[16.0])
        config = load_run_config(write_config(dict(identity_config, scenario=scenario)), fast=True)
        assert config.fast
        assert config.scenario['photon_numbers'] == [4.0]
        assert config.substitutions['scenario.photon_numbers'] == {'from': [16.0], 'to': [4.0]}
        assert config.scenario['compile']['n_starts'] == 4

    def test_paper_scale(self, write_config, identity_config):
        scenario = dict(identity_config['scenario'], type='fock-spectator')
        config = load_run_config(write_config(dict(identity_config, scenario=scenario)), paper_scale=True)
        assert config.paper_scale
        assert config.scenario['fock_n'] == 5
        assert config.scenario['n_traj'] == 2000
        assert config.to_dict()['paper_scale'] is True

    def test_scales_are_exclusive(self, write_config, identity_config):
        with pytest.raises(ConfigError):
            load_run_config(write_config(identity_config), fast=True, paper_scale=True)

    def test_unscaled_is_untouched(self):
        data = {'scenario': {'type': 'bell-cat'}}
        assert apply_scale(data) == {}
        assert data == {'scenario': {'type': 'bell-cat'}}
