"""Filesystem persistence: content-addressed blobs plus an append-only log.

Layout under the store directory::

    tee.key      simulated enclave secret (sealing and derivation root)
    meta.jsonl   one JSON record per metadata event, replayed at startup
    blobs/       ciphertexts named by the SHA-256 of their bytes

Appends go through a single lock; readers work on in-memory snapshots that
the owning service rebuilds from the log.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from ..errors import NotFound
from ..program.ir import dumps_canonical
from .crypto import KEY_BYTES, generate_key


class Store:
    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self.blobs = self.root / "blobs"
        self.log_path = self.root / "meta.jsonl"
        self._lock = threading.Lock()
        self.blobs.mkdir(parents=True, exist_ok=True)
        self.secret = self._load_secret()

    def _load_secret(self) -> bytes:
        path = self.root / "tee.key"
        if path.exists():
            data = bytes.fromhex(path.read_text().strip())
            if len(data) != KEY_BYTES:
                raise ValueError(f"{path} is not a 256-bit key")
            return data
        key = generate_key()
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(key.hex() + "\n")
        return key

    # -- blobs ---------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        path = self.blobs / f"{ref}.bin"
        if not path.exists():
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return ref

    def get_blob(self, ref: str) -> bytes:
        if not all(c in "0123456789abcdef" for c in ref) or len(ref) != 64:
            raise NotFound(f"bad blob reference {ref!r}")
        path = self.blobs / f"{ref}.bin"
        if not path.exists():
            raise NotFound(f"blob {ref} is missing")
        return path.read_bytes()

    # -- metadata log ----------------------------------------------------------

    def append(self, record: dict[str, Any]) -> None:
        line = dumps_canonical(record) + "\n"
        with self._lock:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def replay(self) -> Iterator[dict[str, Any]]:
        if not self.log_path.exists():
            return
        lines = self.log_path.read_text(encoding="utf-8").splitlines()
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except ValueError:
                if n == len(lines):
                    return  # torn final append from a crash
                raise ValueError(f"{self.log_path}:{n}: corrupt metadata record") from None
