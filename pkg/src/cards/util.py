"""Small shared helpers: hashing, transparent gzip, chunking."""

from __future__ import annotations

import gzip
import hashlib
import io
import json
from typing import Any, Iterable, Iterator, TextIO


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def open_text(path: str) -> TextIO:
    """Open a text file for reading, decompressing transparently if gzipped."""
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def chunked(items: Iterable[Any], size: int) -> Iterator[list[Any]]:
    """Yield consecutive lists of at most `size` items."""
    if size < 1:
        raise ValueError(f"chunk size must be >= 1, got {size}")
    block: list[Any] = []
    for item in items:
        block.append(item)
        if len(block) == size:
            yield block
            block = []
    if block:
        yield block


def config_digest(config: dict[str, Any]) -> str:
    """Stable hash of a JSON-serializable config mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return sha256_bytes(canonical.encode("utf-8"))[:16]
