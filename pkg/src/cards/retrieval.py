"""Exact nearest-neighbor retrieval for hard-negative mining.

The index holds unit-normalized vectors keyed by sentence id and answers
top-k cosine queries with a blocked exact scan; no approximation, no updates
after build.  Three sampling strategies draw negatives for a query: uniform
over the top-k (the default), the top-s head of the ranking, and uniform over
the whole index.  The query itself is always excluded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .util import sha256_bytes

_INDEX_MAGIC = b"NIDX"
_INDEX_VERSION = 1
_SCAN_BLOCK = 4096

STRATEGIES = ("r_uniform", "r_top", "d_uniform")


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 8
    s: int = 1
    strategy: str = "r_uniform"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.s < 1:
            raise ValidationError(f"s must be >= 1, got {self.s}")
        if self.strategy in ("r_uniform", "r_top") and self.s > self.k:
            raise ValidationError(f"s must be <= k for {self.strategy}, got s={self.s}, k={self.k}")


class NegativeIndex:
    """Immutable exact-cosine index; safe for concurrent queries."""

    def __init__(self, ids: np.ndarray, vectors: np.ndarray, source_hash: str):
        if ids.ndim != 1 or vectors.ndim != 2 or ids.shape[0] != vectors.shape[0]:
            raise ValidationError("ids and vectors must align row for row")
        self.ids = ids
        self.vectors = vectors
        self.source_hash = source_hash
        self._row_of = {int(i): r for r, i in enumerate(ids)}
        if len(self._row_of) != ids.shape[0]:
            raise ValidationError("duplicate ids in index")

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row_for(self, query_id: int) -> int:
        row = self._row_of.get(int(query_id))
        if row is None:
            raise ValidationError(f"id {query_id} is not in the index")
        return row


def build_index(ids, vectors) -> NegativeIndex:
    """Normalize rows to unit L2 norm and freeze them into an index.

    The stored source hash covers the raw inputs (ids as int64, vectors as
    float32), so rebuilding from identical inputs reproduces it.
    """
    ids_arr = np.asarray(ids, dtype=np.int64)
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError("vectors must be a 2-D matrix")
    if ids_arr.ndim != 1 or ids_arr.shape[0] != mat.shape[0]:
        raise ValidationError("need one id per vector row")
    if mat.shape[0] < 2:
        raise ValidationError(f"an index needs at least 2 vectors, got {mat.shape[0]}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError("vectors contain non-finite values")
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"vector for id {int(ids_arr[zero[0]])} has zero norm")
    source_hash = sha256_bytes(
        ids_arr.astype("<i8").tobytes() + np.asarray(vectors, dtype="<f4").tobytes()
    )
    return NegativeIndex(ids_arr, mat / norms[:, None], source_hash)


def top_k(index: NegativeIndex, query_id: int, k: int) -> list[tuple[int, float]]:
    """The k nearest neighbors of a stored vector, excluding itself.

    Results are ordered by descending cosine, ties broken by ascending id.
    """
    n = len(index)
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k must be in [1, {n - 1}] for an index of {n} vectors, got {k}")
    row = index.row_for(query_id)
    query = index.vectors[row]

    cand_rows: list[np.ndarray] = []
    cand_scores: list[np.ndarray] = []
    for start in range(0, n, _SCAN_BLOCK):
        block = index.vectors[start : start + _SCAN_BLOCK]
        scores = block @ query
        take = min(k + 1, scores.shape[0])  # +1 allows for the query itself
        part = np.argpartition(scores, scores.shape[0] - take)[-take:]
        # keep every candidate tied with the block cutoff so the global
        # id tie-break sees all of them
        top = np.flatnonzero(scores >= scores[part].min())
        cand_rows.append(top + start)
        cand_scores.append(scores[top])
    rows = np.concatenate(cand_rows)
    scores = np.concatenate(cand_scores)
    keep = rows != row
    rows, scores = rows[keep], scores[keep]
    order = np.lexsort((index.ids[rows], -scores))
    chosen = order[:k]
    return [(int(index.ids[rows[i]]), float(scores[i])) for i in chosen]


def sample_negatives(
    index: NegativeIndex,
    query_id: int,
    config: RetrievalConfig,
    rng: np.random.Generator,
) -> list[int]:
    """Draw s negative ids for one query according to the configured strategy."""
    if config.strategy == "r_top":
        return [nid for nid, _ in top_k(index, query_id, config.k)[: config.s]]
    if config.strategy == "r_uniform":
        pool = np.asarray([nid for nid, _ in top_k(index, query_id, config.k)], dtype=np.int64)
    else:  # d_uniform
        row = index.row_for(query_id)
        pool = np.delete(index.ids, row)
        if config.s > pool.shape[0]:
            raise ValidationError(
                f"cannot draw {config.s} distinct negatives from {pool.shape[0]} candidates"
            )
    picks = rng.choice(pool, size=config.s, replace=False)
    return [int(p) for p in picks]


def attach_negatives(
    batch_ids,
    index: NegativeIndex,
    config: RetrievalConfig,
    rng: np.random.Generator,
) -> list[list[int]]:
    """Sample negatives for every id in a batch, preserving batch order."""
    return [sample_negatives(index, query_id, config, rng) for query_id in batch_ids]


def save_index(path: str, index: NegativeIndex) -> None:
    """Write the index: header (magic, version, n, d, source hash), then ids
    as little-endian int64 and normalized rows as float32."""
    with open(path, "wb") as f:
        f.write(_INDEX_MAGIC)
        f.write(struct.pack("<IQI", _INDEX_VERSION, len(index), index.dim))
        f.write(index.source_hash.encode("ascii"))
        f.write(index.ids.astype("<i8").tobytes())
        f.write(index.vectors.astype("<f4").tobytes())


def load_index(path: str) -> NegativeIndex:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _INDEX_MAGIC:
            raise ValidationError(f"{path}: not an index file (bad magic {magic!r})")
        header = f.read(16)
        if len(header) != 16:
            raise ValidationError(f"{path}: truncated header")
        version, n, d = struct.unpack("<IQI", header)
        if version != _INDEX_VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        source_hash = f.read(64).decode("ascii")
        ids_bytes = f.read(8 * n)
        data = f.read(4 * n * d)
        if len(source_hash) != 64 or len(ids_bytes) != 8 * n or len(data) != 4 * n * d:
            raise ValidationError(f"{path}: truncated index data")
    ids = np.frombuffer(ids_bytes, dtype="<i8").copy()
    vectors = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(n, d)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValidationError(f"{path}: stored rows are not unit-normalized")
    return NegativeIndex(ids, vectors, source_hash)
