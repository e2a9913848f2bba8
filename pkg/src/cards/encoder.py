"""A small deterministic sentence encoder with a hand-written backward pass.

The forward map is: embedding lookup -> elementwise inverted dropout (seeded)
-> mean pool over tokens -> affine projection -> tanh.  It is deliberately
tiny; the point is an encoder whose gradients can be verified numerically and
whose dropout noise is reproducible, so two forward passes of one sentence
with different dropout seeds give the two views needed by the contrastive
objectives.

Sentence vectors can be saved and loaded in two equivalent formats: a text
format (header line "n d", then one "id v1 .. vd" row per vector) and a
binary format (magic "SVEC", version, counts, int64 ids, float32 rows).
Values are float32 in both; a save/load cycle is value-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .tokenizer import TokenSeq

_VECTOR_MAGIC = b"SVEC"
_VECTOR_VERSION = 1


@dataclass
class EncoderParams:
    """Model weights, kept in float64 for gradient checks."""

    token_embeddings: np.ndarray  # [vocab, dim]
    projection: np.ndarray  # [dim, dim]
    bias: np.ndarray  # [dim]

    def __post_init__(self) -> None:
        self.token_embeddings = np.asarray(self.token_embeddings, dtype=np.float64)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.token_embeddings.ndim != 2:
            raise ValidationError("token_embeddings must be a [vocab, dim] matrix")
        dim = self.token_embeddings.shape[1]
        if self.projection.shape != (dim, dim):
            raise ValidationError(
                f"projection must be [{dim}, {dim}], got {self.projection.shape}"
            )
        if self.bias.shape != (dim,):
            raise ValidationError(f"bias must be [{dim}], got {self.bias.shape}")
        for name, arr in (
            ("token_embeddings", self.token_embeddings),
            ("projection", self.projection),
            ("bias", self.bias),
        ):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")

    @property
    def vocab_size(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.token_embeddings.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.token_embeddings.copy(), self.projection.copy(), self.bias.copy()
        )


def init_encoder_params(vocab_size: int, dim: int, seed: int) -> EncoderParams:
    """Uniform(-0.1, 0.1) embeddings, near-identity projection, zero bias."""
    if vocab_size < 1 or dim < 1:
        raise ValidationError(f"vocab_size and dim must be >= 1, got {vocab_size}, {dim}")
    rng = np.random.default_rng(seed)
    embeddings = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
    projection = np.eye(dim) + rng.normal(0.0, 0.01, size=(dim, dim))
    bias = np.zeros(dim)
    return EncoderParams(embeddings, projection, bias)


@dataclass
class _ForwardCache:
    token_ids: np.ndarray
    dropped: np.ndarray  # embeddings after dropout, [T, dim]
    mask: np.ndarray | None  # inverted-dropout multiplier, [T, dim]
    pooled: np.ndarray  # [dim]
    output: np.ndarray  # [dim]


def _as_id_array(token_ids: TokenSeq | Sequence[int], vocab_size: int) -> np.ndarray:
    ids = np.asarray(
        token_ids.ids if isinstance(token_ids, TokenSeq) else list(token_ids), dtype=np.int64
    )
    if ids.size == 0:
        raise ValidationError("cannot encode an empty token sequence")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValidationError(f"token id out of range [0, {vocab_size})")
    return ids


def _forward_cached(
    params: EncoderParams,
    token_ids: TokenSeq | Sequence[int],
    dropout_rate: float,
    dropout_seed: int | None,
) -> _ForwardCache:
    if not 0.0 <= dropout_rate < 1.0:
        raise ValidationError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    ids = _as_id_array(token_ids, params.vocab_size)
    gathered = params.token_embeddings[ids]
    mask = None
    if dropout_rate > 0.0:
        if dropout_seed is None:
            raise ValidationError("dropout_rate > 0 requires a dropout_seed")
        rng = np.random.default_rng(dropout_seed)
        keep = rng.random(gathered.shape) >= dropout_rate
        mask = keep / (1.0 - dropout_rate)
        gathered = gathered * mask
    pooled = gathered.mean(axis=0)
    output = np.tanh(params.projection @ pooled + params.bias)
    return _ForwardCache(ids, gathered, mask, pooled, output)


def forward(
    params: EncoderParams,
    token_ids: TokenSeq | Sequence[int],
    dropout_rate: float = 0.0,
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Encode one token sequence to a [dim] vector.

    With dropout_rate 0 the result is a pure function of params and ids; with
    dropout on, it is a pure function of those plus dropout_seed.
    """
    return _forward_cached(params, token_ids, dropout_rate, dropout_seed).output


def forward_pair(
    params: EncoderParams,
    token_ids: TokenSeq | Sequence[int],
    dropout_rate: float,
    seed_a: int,
    seed_b: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Two dropout views of one sequence; the seeds must differ."""
    if seed_a == seed_b:
        raise ValidationError("forward_pair requires two distinct dropout seeds")
    return (
        forward(params, token_ids, dropout_rate, seed_a),
        forward(params, token_ids, dropout_rate, seed_b),
    )


@dataclass
class GradBuffer:
    """Accumulated parameter gradients.

    Embedding gradients are kept as (ids, rows) pieces because each step only
    touches a small slice of the vocabulary.
    """

    projection: np.ndarray
    bias: np.ndarray
    embedding_rows: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @classmethod
    def zeros(cls, params: EncoderParams) -> "GradBuffer":
        return cls(np.zeros_like(params.projection), np.zeros_like(params.bias))

    def dense_embedding_grad(self, params: EncoderParams) -> np.ndarray:
        dense = np.zeros_like(params.token_embeddings)
        for ids, rows in self.embedding_rows:
            np.add.at(dense, ids, rows)
        return dense

    def apply_sgd(self, params: EncoderParams, lr: float) -> None:
        """In-place SGD step: params -= lr * grads."""
        params.projection -= lr * self.projection
        params.bias -= lr * self.bias
        for ids, rows in self.embedding_rows:
            np.subtract.at(params.token_embeddings, ids, lr * rows)


def backward(
    params: EncoderParams, cache: _ForwardCache, d_output: np.ndarray, grads: GradBuffer
) -> None:
    """Accumulate d(loss)/d(params) given d(loss)/d(encoder output)."""
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != cache.output.shape:
        raise ValidationError("d_output shape does not match the forward output")
    dz = d_output * (1.0 - cache.output**2)
    grads.bias += dz
    grads.projection += np.outer(dz, cache.pooled)
    d_pooled = params.projection.T @ dz
    count = cache.token_ids.shape[0]
    d_rows = np.tile(d_pooled / count, (count, 1))
    if cache.mask is not None:
        d_rows = d_rows * cache.mask
    grads.embedding_rows.append((cache.token_ids, d_rows))


def encode_batch(
    params: EncoderParams,
    sequences: Iterable[TokenSeq | Sequence[int]],
    dropout_rate: float = 0.0,
    dropout_seeds: Sequence[int] | None = None,
) -> tuple[np.ndarray, list[_ForwardCache]]:
    """Stack per-sequence encodings into an [N, dim] matrix, keeping caches."""
    sequences = list(sequences)
    if dropout_rate > 0.0:
        if dropout_seeds is None or len(dropout_seeds) != len(sequences):
            raise ValidationError("dropout needs one seed per sequence")
    caches = []
    for i, seq in enumerate(sequences):
        seed = dropout_seeds[i] if dropout_rate > 0.0 else None
        caches.append(_forward_cached(params, seq, dropout_rate, seed))
    return np.stack([c.output for c in caches]), caches


# -- sentence-vector files -------------------------------------------------


def save_vectors(path: str, ids: Sequence[int], matrix: np.ndarray, binary: bool = True) -> None:
    """Write vectors with stable ids; float32 values in either format."""
    ids_arr = np.asarray(ids, dtype=np.int64)
    mat = np.asarray(matrix, dtype=np.float32)
    if mat.ndim != 2 or ids_arr.ndim != 1 or ids_arr.shape[0] != mat.shape[0]:
        raise ValidationError("need one id per matrix row")
    if len(set(ids_arr.tolist())) != ids_arr.shape[0]:
        raise ValidationError("vector ids must be unique")
    n, d = mat.shape
    if binary:
        with open(path, "wb") as f:
            f.write(_VECTOR_MAGIC)
            f.write(struct.pack("<III", _VECTOR_VERSION, n, d))
            f.write(ids_arr.astype("<i8").tobytes())
            f.write(mat.astype("<f4").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{n} {d}\n")
            for row_id, row in zip(ids_arr, mat):
                # %.9g round-trips float32 exactly
                values = " ".join(f"{v:.9g}" for v in row)
                f.write(f"{row_id} {values}\n")


def load_vectors(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a vector file (either format) as (ids int64, matrix float32)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic == _VECTOR_MAGIC:
            header = f.read(12)
            if len(header) != 12:
                raise ValidationError(f"{path}: truncated binary header")
            version, n, d = struct.unpack("<III", header)
            if version != _VECTOR_VERSION:
                raise ValidationError(f"{path}: unsupported version {version}")
            ids_bytes = f.read(8 * n)
            data_bytes = f.read(4 * n * d)
            if len(ids_bytes) != 8 * n or len(data_bytes) != 4 * n * d:
                raise ValidationError(f"{path}: truncated vector data")
            ids_arr = np.frombuffer(ids_bytes, dtype="<i8").copy()
            mat = np.frombuffer(data_bytes, dtype="<f4").reshape(n, d).copy()
        else:
            ids_arr, mat = _load_vectors_text(path)
    if mat.shape[0] == 0:
        raise ValidationError(f"{path}: no vectors")
    if len(set(ids_arr.tolist())) != ids_arr.shape[0]:
        raise ValidationError(f"{path}: duplicate vector ids")
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{path}: non-finite vector values")
    return ids_arr, mat


def _load_vectors_text(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValidationError(f"{path}: line 1: expected header 'n d'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError as e:
            raise ValidationError(f"{path}: line 1: expected integer header 'n d'") from e
        ids: list[int] = []
        rows = np.empty((n, d), dtype=np.float32)
        for i in range(n):
            lineno = i + 2
            fields = f.readline().split()
            if len(fields) != d + 1:
                raise ValidationError(
                    f"{path}: line {lineno}: expected {d + 1} fields, got {len(fields)}"
                )
            try:
                ids.append(int(fields[0]))
                rows[i] = np.array([float(v) for v in fields[1:]], dtype=np.float32)
            except ValueError as e:
                raise ValidationError(f"{path}: line {lineno}: malformed number") from e
    return np.asarray(ids, dtype=np.int64), rows
