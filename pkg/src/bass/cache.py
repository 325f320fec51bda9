"""Content-addressed response cache for backend calls.

Keys are digests of (backend identity, operation, canonical request); values
are the raw serialized response payloads, so a hit replays the original
response bit-identically.  The disk layout shards by digest prefix and every
write goes through a temp file + rename, which keeps concurrent writers safe.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from pathlib import Path

DIGEST_ALGORITHM = "sha256"


def content_digest(data: bytes) -> str:
    """Hex digest of raw bytes under the repo-wide content hash."""

    return hashlib.sha256(data).hexdigest()


def cache_key(identity: str, operation: str, *parts: str) -> str:
    canonical = "\x1f".join([identity, operation, *parts])
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Bytes-valued cache, in-memory with an optional disk tier."""

    def __init__(self, directory: str | os.PathLike | None = None):
        self._dir = Path(directory) if directory is not None else None
        self._memory: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path_for(self, key: str) -> Path:
        return self._dir / key[:2] / key

    def get(self, key: str) -> bytes | None:
        with self._lock:
            value = self._memory.get(key)
        if value is None and self._dir is not None:
            path = self._path_for(key)
            if path.is_file():
                value = path.read_bytes()
                with self._lock:
                    self._memory[key] = value
        with self._lock:
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
        return value

    def set(self, key: str, value: bytes) -> None:
        with self._lock:
            self._memory[key] = value
        if self._dir is not None:
            path = self._path_for(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(value)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
