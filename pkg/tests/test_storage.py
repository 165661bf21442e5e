"""Tests for the run-directory store."""

import json

import pandas as pd
import pytest

from services.errors import InvalidArgumentError
from services.storage import MANIFEST_NAME, RunStore, content_hash


class TestContentHash:
    """Tests for canonical config hashing."""

    def test_key_order_is_ignored(self):
        assert content_hash({'a': 1, 'b': {'c': 2, 'd': 3}}) == content_hash({'b': {'d': 3, 'c': 2}, 'a': 1})

    def test_values_change_the_hash(self):
        assert content_hash({'seed': 1}) != content_hash({'seed': 2})


class TestRunStore:
    """Tests for file placement, listing and the manifest."""

    def test_for_config_name(self, tmp_path):
        store = RunStore.for_config({'seed': 1}, root=tmp_path, prefix='run-')
        assert store.name.startswith('run-')
        assert len(store.name) == len('run-') + 16
        assert store.path == tmp_path / store.name
        assert RunStore.for_config({'seed': 1}, root=tmp_path, prefix='run-').name == store.name

    @pytest.mark.parametrize("name", ['a/b', '..', '.'])
    def test_rejects_nested_names(self, tmp_path, name):
        with pytest.raises(InvalidArgumentError):
            RunStore(root=tmp_path, name=name)

    def test_rejects_escaping_keys(self, tmp_path):
        store = RunStore(root=tmp_path, name='run')
        with pytest.raises(InvalidArgumentError):
            store.file('../outside.json')

    def test_file_creates_parents(self, tmp_path):
        store = RunStore(root=tmp_path, name='run')
        path = store.file('states/point_000.csv')
        assert path.parent.is_dir()

    def test_json_and_frames(self, tmp_path):
        store = RunStore(root=tmp_path, name='run')
        store.write_json('summary.json', {'b': 1, 'a': [0.1]})
        assert store.read_json('summary.json') == {'a': [0.1], 'b': 1}
        frame = pd.DataFrame({'x': [0.1, 1 / 3], 'y': [1, 2]})
        store.write_frame('table.csv', frame)
        pd.testing.assert_frame_equal(store.read_frame('table.csv'), frame)
        with pytest.raises(FileNotFoundError):
            store.read_json('missing.json')

    def test_list_and_delete(self, tmp_path):
        store = RunStore(root=tmp_path, name='run')
        assert store.list_files() == []
        store.write_json('grids/a.json', {})
        store.write_json('summary.json', {})
        assert [f['Key'] for f in store.list_files()] == ['grids/a.json', 'summary.json']
        assert [f['Key'] for f in store.list_files('grids/')] == ['grids/a.json']
        assert store.delete_file('summary.json')
        assert not store.delete_file('summary.json')
        store.clear()
        assert not store.path.exists()

    def test_manifest_hashes_files(self, tmp_path):
        store = RunStore(root=tmp_path, name='run')
        store.write_json('summary.json', {'points': []})
        config = {'seed': 5, 'scenario': {'type': 'bell-cat'}}
        store.write_manifest(config, seed=5, substitutions={'scenario.n_traj': {'from': 2000, 'to': 500}})
        # a second write must not hash the previous manifest
        store.write_manifest(config, seed=5)
        manifest = json.loads((store.path / MANIFEST_NAME).read_text())
        assert manifest['config_hash'] == content_hash(config)
        assert manifest['seed'] == 5
        assert list(manifest['files']) == ['summary.json']
        assert manifest['files']['summary.json'] == store.list_files('summary')[0]['Sha256']
        assert store.read_manifest() == manifest
