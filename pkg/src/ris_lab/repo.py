import hashlib
import json
import logging
import os
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

import pandas as pd

from ris_lab.errors import RepoException

_logger = logging.getLogger(__name__)


def config_hash(values: dict[str, Any]) -> str:
    """
    Stable digest of the experiment settings; the output location does not count.
    """
    payload = {k: v for k, v in values.items() if k != 'out'}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def manifest_line(digest: str, seed: int) -> str:
    return f"# config_hash={digest} seed={seed}"


class IRunRepo(ABC):
    """
    Interface for the artifact store of one experiment run.
    """

    @abstractmethod
    def write_table(self, name: str, frame: pd.DataFrame):
        """
        Write a CSV table preceded by the provenance line.
        """
        raise NotImplementedError

    @property
    @abstractmethod
    def manifest(self) -> str:
        """
        Provenance line of the run.
        """
        raise NotImplementedError

    @abstractmethod
    def write_text(self, name: str, text: str):
        raise NotImplementedError

    @abstractmethod
    def write_script(self, name: str, text: str):
        """
        Write a plot script with the provenance line as its first comment.
        """
        raise NotImplementedError

    @abstractmethod
    def write_bytes(self, name: str, data: bytes):
        raise NotImplementedError

    @abstractmethod
    def read_bytes(self, name: str) -> bytes:
        raise NotImplementedError

    @abstractmethod
    def list(self, pattern: str) -> list[str]:
        """
        Names under the run matching a glob pattern, sorted.
        """
        raise NotImplementedError

    @abstractmethod
    def path(self, name: str) -> Path:
        raise NotImplementedError


class DirectoryRunRepo(IRunRepo):
    """
    Run artifacts in a directory; every write goes to a temp file renamed into place.
    """

    def __init__(self, root: Path, manifest: str):
        self._root = Path(root)
        self._manifest = manifest

    @property
    def manifest(self) -> str:
        return self._manifest

    def path(self, name: str) -> Path:
        return self._root / name

    def _write(self, name: str, data: bytes):
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f'.{target.name}.')
            try:
                with os.fdopen(fd, 'wb') as f:
                    f.write(data)
                os.replace(tmp, target)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        except OSError as e:
            raise RepoException(f"Error while writing {target}") from e
        _logger.debug("Wrote %s (%d bytes)", target, len(data))

    def write_table(self, name: str, frame: pd.DataFrame):
        body = frame.to_csv(index=False, lineterminator='\n')
        self._write(name, f"{self._manifest}\n{body}".encode('utf-8'))

    def write_text(self, name: str, text: str):
        self._write(name, text.encode('utf-8'))

    def write_script(self, name: str, text: str):
        self._write(name, f"{self._manifest}\n{text}".encode('utf-8'))

    def write_bytes(self, name: str, data: bytes):
        self._write(name, data)

    def read_bytes(self, name: str) -> bytes:
        try:
            return self.path(name).read_bytes()
        except OSError as e:
            raise RepoException(f"Error while reading {self.path(name)}") from e

    def list(self, pattern: str) -> list[str]:
        return sorted(p.relative_to(self._root).as_posix() for p in self._root.glob(pattern))
