"""On-disk cache of cavity/bath decompositions keyed by (array, partition, format)."""
from __future__ import annotations

import logging
import os
import tempfile
import warnings
from pathlib import Path

from .cavity import ModeDecomposition, config_key

log = logging.getLogger(__name__)


def default_dir() -> Path:
    root = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(root) / "phonon-forge"


class DecompositionCache:
    def __init__(self, directory=None, enabled: bool = True):
        self.dir = Path(directory) if directory else default_dir()
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.phfd"

    def lookup(self, key: str) -> ModeDecomposition | None:
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            modes = ModeDecomposition.load(path)
        except Exception as exc:
            warnings.warn(f"ignoring corrupt cache entry {path.name}: {exc}", stacklevel=2)
            self.misses += 1
            return None
        self.hits += 1
        return modes

    def store(self, key: str, modes: ModeDecomposition) -> None:
        if not self.enabled:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        # write then rename so concurrent workers never see half a file
        fd, tmp = tempfile.mkstemp(dir=self.dir, suffix=".part")
        os.close(fd)
        try:
            modes.save(tmp)
            os.replace(tmp, self._path(key))
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def get_or_compute(self, spec, part, compute) -> ModeDecomposition:
        key = config_key(spec, part)
        modes = self.lookup(key)
        if modes is None:
            modes = compute()
            self.store(key, modes)
        return modes
