"""
Run-directory store for command outputs.
"""

import hashlib
import json
import os
import shutil
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import pandas as pd

from services.errors import InvalidArgumentError

MANIFEST_NAME = 'manifest.json'
MANIFEST_FORMAT_VERSION = 1
CODE_VERSION = '1.0.0'


def canonical_json(data: Any) -> str:
    """Key-sorted, whitespace-free JSON used for content hashes."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), allow_nan=True)


def content_hash(data: Any) -> str:
    """sha256 of the canonical JSON of data."""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


class RunStore:
    """Writes, lists and deletes files of one run directory under an output root."""

    def __init__(
        self,
        root: Union[str, Path] = os.getenv('BOSONIC_CTRL_OUTPUT', 'runs'),
        name: Optional[str] = None
    ):
        """
        Initialize the store.

        Args:
            root: Output root (default: BOSONIC_CTRL_OUTPUT or 'runs')
            name: Run directory name; usually a content hash from for_config

        Raises:
            InvalidArgumentError: If name would escape the output root
        """
        self.root = Path(root)
        self.name = name or 'default'
        if Path(self.name).name != self.name or self.name in ('.', '..'):
            raise InvalidArgumentError(f"run name must be a plain directory name, got {self.name!r}")
        self.path = self.root / self.name

    @classmethod
    def for_config(cls, config: Mapping[str, Any], root: Union[str, Path, None] = None,
                   prefix: str = '') -> "RunStore":
        """Store named by the content hash of a run configuration."""
        name = f"{prefix}{content_hash(config)[:16]}"
        return cls(root=root, name=name) if root is not None else cls(name=name)

    def _resolve(self, key: str) -> Path:
        target = (self.path / key).resolve()
        if not target.is_relative_to(self.path.resolve()):
            raise InvalidArgumentError(f"{key!r} is outside the run directory")
        return target

    def ensure(self) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        return self.path

    def file(self, key: str) -> Path:
        """
        Path of a run file, creating parent folders.

        Args:
            key: Path relative to the run directory

        Returns:
            Absolute path inside the run directory

        Raises:
            InvalidArgumentError: If key points outside the run directory
        """
        target = self._resolve(key)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_json(self, key: str, data: Any) -> Path:
        """Write data as indented, key-sorted JSON."""
        target = self.file(key)
        target.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return target

    def read_json(self, key: str) -> Any:
        target = self._resolve(key)
        if not target.exists():
            raise FileNotFoundError(f"File not found: {target}")
        return json.loads(target.read_text(encoding='utf-8'))

    def write_frame(self, key: str, frame: pd.DataFrame) -> Path:
        """Write a table as CSV with round-trip float precision."""
        target = self.file(key)
        frame.to_csv(target, index=False, float_format='%.17g')
        return target

    def read_frame(self, key: str) -> pd.DataFrame:
        target = self._resolve(key)
        if not target.exists():
            raise FileNotFoundError(f"File not found: {target}")
        return pd.read_csv(target, float_precision='round_trip')

    def list_files(self, prefix: str = '') -> List[Dict[str, Any]]:
        """
        List files of the run directory.

        Args:
            prefix: Relative path prefix to filter by

        Returns:
            List of dictionaries sorted by key:
            - Key: Path relative to the run directory (POSIX separators)
            - Size: File size in bytes
            - Sha256: Content hash
        """
        if not self.path.exists():
            return []
        files = []
        for path in sorted(p for p in self.path.rglob('*') if p.is_file()):
            key = path.relative_to(self.path).as_posix()
            if key.startswith(prefix):
                files.append({'Key': key, 'Size': path.stat().st_size, 'Sha256': file_hash(path)})
        return files

    def delete_file(self, key: str) -> bool:
        """
        Delete one run file.

        Returns:
            True if a file was removed, False if it did not exist
        """
        target = self._resolve(key)
        if not target.exists():
            return False
        target.unlink()
        return True

    def clear(self) -> None:
        """Remove the whole run directory."""
        if self.path.exists():
            shutil.rmtree(self.path)

    def write_manifest(self, config: Mapping[str, Any], seed: int,
                       substitutions: Optional[Mapping[str, Any]] = None,
                       extra: Optional[Mapping[str, Any]] = None) -> Path:
        """
        Record what produced the run: config, its hash, seed, code version and file hashes.

        The manifest is written last and hashes every other file in the directory.
        """
        files = {f['Key']: f['Sha256'] for f in self.list_files() if f['Key'] != MANIFEST_NAME}
        manifest = {
            'format_version': MANIFEST_FORMAT_VERSION,
            'code_version': CODE_VERSION,
            'seed': seed,
            'config_hash': content_hash(config),
            'config': dict(config),
            'substitutions': dict(substitutions or {}),
            'files': files,
        }
        manifest.update(extra or {})
        return self.write_json(MANIFEST_NAME, manifest)

    def read_manifest(self) -> Dict[str, Any]:
        return self.read_json(MANIFEST_NAME)


__all__ = ['RunStore', 'canonical_json', 'content_hash', 'file_hash', 'MANIFEST_NAME', 'CODE_VERSION']
