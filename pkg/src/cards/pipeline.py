"""Training and evaluation glue.

`train` runs seeded SGD over a cleaned corpus: each step builds two views per
sentence (augmented text and raw text by default, always with independent
dropout noise), optionally attaches retrieved hard negatives from a static
index, backpropagates the contrastive loss through the toy encoder, and
periodically scores a held-out similarity set.  Every random stream derives
from the run seed, so a repeated run is bitwise identical.

Similarity scoring uses Spearman correlation on fractional ranks, computed
here from scratch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import augment, objective, retrieval
from .corpus import Sentence, StsExample, truncate_tokens
from .encoder import (
    EncoderParams,
    GradBuffer,
    _forward_cached,
    backward,
    forward,
    init_encoder_params,
)
from .errors import ValidationError
from .tokenizer import Tokenizer
from .util import config_digest

_CKPT_MAGIC = b"CDCK"
_CKPT_VERSION = 1


# -- rank correlation -------------------------------------------------------


def fractional_ranks(values: Sequence[float]) -> np.ndarray:
    """Average ranks, 1-based; tied values share the mean of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("ranks need a non-empty 1-D input")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("ranks need finite input values")
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman correlation: Pearson correlation of fractional ranks.

    Constant input has no rank ordering and raises.  Equal (or exactly
    reversed) rank vectors return +-1.0 exactly.
    """
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    if rx.size != ry.size:
        raise ValidationError(f"length mismatch: {rx.size} vs {ry.size}")
    if rx.size < 2:
        raise ValidationError("need at least 2 observations")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValidationError("constant input: rank correlation is undefined")
    if np.array_equal(rx, ry):
        return 1.0
    if np.array_equal(rx, rx.size + 1.0 - ry):
        return -1.0
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    return float((cx @ cy) / np.sqrt((cx @ cx) * (cy @ cy)))


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run; defaults follow the reference setup."""

    p_sc: float = 0.1
    variant: str = "default"
    one_view_augment: bool = True
    lowercase_train: bool = False
    tau: float = 0.05
    dropout: float = 0.1
    max_tokens: int = 32
    batch_size: int = 32
    epochs: int = 1
    lr: float = 0.1
    dim: int = 32
    eval_every: int = 125
    seed: int = 0
    use_retrieval: bool = True
    k: int = 8
    s: int = 1
    strategy: str = "r_uniform"
    exclude_self_negative: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_sc <= 1.0:
            raise ValidationError(f"p_sc must be in [0, 1], got {self.p_sc}")
        if self.tau <= 0.0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.batch_size < 2:
            raise ValidationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.use_retrieval:
            retrieval.RetrievalConfig(self.k, self.s, self.strategy)
        augment.AugmentConfig(self.p_sc, self.variant, self.seed)

    def retrieval_config(self) -> retrieval.RetrievalConfig:
        return retrieval.RetrievalConfig(self.k, self.s, self.strategy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Checkpoint:
    params: EncoderParams
    step: int
    dev_score: float

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValidationError(f"step must be >= 0, got {self.step}")
        if not -1.0 <= self.dev_score <= 1.0:
            raise ValidationError(f"dev_score must be in [-1, 1], got {self.dev_score}")


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    metrics: list[dict] = field(default_factory=list)


# -- evaluation -------------------------------------------------------------


def evaluate_sts(
    params: EncoderParams,
    tokenizer: Tokenizer,
    examples: Sequence[StsExample],
    max_tokens: int = 32,
    transform: Callable[[str], str] | None = None,
) -> float:
    """Spearman correlation between pair cosines and gold scores.

    Encoding runs without dropout; `transform` is applied to each sentence
    first (evaluation-time case ablations plug in here).
    """
    if not examples:
        raise ValidationError("evaluation needs at least one example")
    preds = np.empty(len(examples))
    golds = np.empty(len(examples))
    cache: dict[str, np.ndarray] = {}

    def embed(sentence: str) -> np.ndarray:
        if sentence not in cache:
            text = transform(sentence) if transform is not None else sentence
            tokens = truncate_tokens(tokenizer.encode(text), max_tokens)
            cache[sentence] = forward(params, tokens)
        return cache[sentence]

    for i, example in enumerate(examples):
        a = embed(example.sent_a)
        b = embed(example.sent_b)
        preds[i] = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        golds[i] = example.gold
    return spearman(preds, golds)


@dataclass(frozen=True)
class EvalReport:
    per_set: dict[str, float]
    average: float


def evaluate_sts_suite(
    params: EncoderParams,
    tokenizer: Tokenizer,
    datasets: Sequence[tuple[str, Sequence[StsExample]]],
    max_tokens: int = 32,
    transform: Callable[[str], str] | None = None,
) -> EvalReport:
    """Score several similarity sets; the average is their unweighted mean."""
    if not datasets:
        raise ValidationError("need at least one dataset")
    per_set = {
        name: evaluate_sts(params, tokenizer, examples, max_tokens, transform)
        for name, examples in datasets
    }
    return EvalReport(per_set, float(np.mean(list(per_set.values()))))


def encode_corpus(
    params: EncoderParams,
    tokenizer: Tokenizer,
    corpus: Sequence[Sentence],
    max_tokens: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Dropout-free sentence vectors for indexing: (ids, [n, dim] matrix)."""
    ids = np.asarray([s.id for s in corpus], dtype=np.int64)
    rows = np.empty((len(corpus), params.dim))
    for i, sentence in enumerate(corpus):
        tokens = truncate_tokens(tokenizer.encode(sentence.text), max_tokens)
        rows[i] = forward(params, tokens)
    return ids, rows


# -- training ---------------------------------------------------------------


def _dropout_seed(run_seed: int, step: int, slot: int, view: int) -> int:
    ss = np.random.SeedSequence([run_seed, 0x5EED, step, slot, view])
    return int(ss.generate_state(1, np.uint64)[0])


def _augment_tokens(
    sentence: str,
    tokenizer: Tokenizer,
    config: TrainConfig,
    rng: np.random.Generator,
):
    cfg = augment.AugmentConfig(config.p_sc, config.variant, config.seed)
    if config.variant == "default":
        return tokenizer.encode(augment.switch_case(sentence, cfg, rng))
    if config.variant == "substitution_only":
        return tokenizer.encode(augment.augment_substitution_only(sentence, tokenizer, cfg, rng))
    if config.variant == "re_tokenization":
        return augment.augment_retokenization(sentence, tokenizer, cfg, rng)
    if config.variant == "lowercase_all":
        return tokenizer.encode(augment.lowercase_transform(sentence))
    # word_repetition: p_sc doubles as the per-word repeat probability
    return tokenizer.encode(augment.word_repetition(sentence, config.p_sc, rng))


def train(
    corpus: Sequence[Sentence],
    tokenizer: Tokenizer,
    config: TrainConfig,
    dev: Sequence[StsExample],
    index: retrieval.NegativeIndex | None = None,
) -> TrainResult:
    """Seeded contrastive training; returns best and final checkpoints.

    With retrieval enabled, every corpus id must be present in `index`; the
    index is static and its vectors never change during the run.  Metrics are
    recorded before the first step, every `eval_every` steps, and after the
    last step, each record carrying the step, the latest loss, and the dev
    Spearman under the current parameters.
    """
    corpus = list(corpus)
    if len(corpus) < config.batch_size:
        raise ValidationError(
            f"corpus of {len(corpus)} sentences is smaller than batch_size {config.batch_size}"
        )
    if config.use_retrieval:
        if index is None:
            raise ValidationError("retrieval is enabled but no index was given")
        if len(index) - 1 < config.k:
            raise ValidationError(
                f"k={config.k} exceeds the {len(index)} - 1 candidates in the index"
            )
        for sentence in corpus:
            index.row_for(sentence.id)

    text_of = {s.id: s.text for s in corpus}
    params = init_encoder_params(tokenizer.vocab_size, config.dim, config.seed)

    root = np.random.SeedSequence(config.seed)
    shuffle_ss, augment_ss, negative_ss = root.spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    augment_rng = np.random.default_rng(augment_ss)
    negative_rng = np.random.default_rng(negative_ss)
    retr_cfg = config.retrieval_config() if config.use_retrieval else None

    def prepare(sentence: str) -> str:
        return augment.lowercase_transform(sentence) if config.lowercase_train else sentence

    config_hash = config_digest(config.to_dict())

    def record(step: int, loss: float | None) -> dict:
        score = evaluate_sts(params, tokenizer, dev, config.max_tokens)
        return {
            "step": step,
            "loss": None if loss is None else float(loss),
            "dev_spearman": float(score),
            "config": config_hash,
        }

    metrics = [record(0, None)]
    best = Checkpoint(params.copy(), 0, metrics[0]["dev_spearman"])

    step = 0
    last_loss: float | None = None
    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(len(corpus))
        for start in range(0, len(corpus), config.batch_size):
            batch = [corpus[i] for i in perm[start : start + config.batch_size]]
            if len(batch) < 2:
                continue
            step += 1

            seq_a, seq_b = [], []
            for slot, sentence in enumerate(batch):
                text = prepare(sentence.text)
                tokens_a = _augment_tokens(text, tokenizer, config, augment_rng)
                if config.one_view_augment:
                    tokens_b = tokenizer.encode(text)
                else:
                    tokens_b = _augment_tokens(text, tokenizer, config, augment_rng)
                seq_a.append(truncate_tokens(tokens_a, config.max_tokens))
                seq_b.append(truncate_tokens(tokens_b, config.max_tokens))

            caches_a = [
                _forward_cached(
                    params, seq, config.dropout, _dropout_seed(config.seed, step, i, 0)
                )
                for i, seq in enumerate(seq_a)
            ]
            caches_b = [
                _forward_cached(
                    params, seq, config.dropout, _dropout_seed(config.seed, step, i, 1)
                )
                for i, seq in enumerate(seq_b)
            ]
            h = np.stack([c.output for c in caches_a])
            h_pos = np.stack([c.output for c in caches_b])

            caches_n = []
            h_neg = None
            if retr_cfg is not None:
                negative_ids = retrieval.attach_negatives(
                    [s.id for s in batch], index, retr_cfg, negative_rng
                )
                flat = [nid for per_query in negative_ids for nid in per_query]
                # negatives need no pairing, so one dropout seed per step
                neg_seed = _dropout_seed(config.seed, step, 0, 2)
                for nid in flat:
                    tokens = truncate_tokens(
                        tokenizer.encode(prepare(text_of[nid])), config.max_tokens
                    )
                    caches_n.append(_forward_cached(params, tokens, config.dropout, neg_seed))
                h_neg = np.stack([c.output for c in caches_n])

            loss, d_h, d_pos, d_neg = objective.loss_and_grads(
                h, h_pos, h_neg, config.tau, config.exclude_self_negative
            )
            last_loss = loss.total

            grads = GradBuffer.zeros(params)
            for i, cache in enumerate(caches_a):
                backward(params, cache, d_h[i], grads)
            for i, cache in enumerate(caches_b):
                backward(params, cache, d_pos[i], grads)
            if d_neg is not None:
                for j, cache in enumerate(caches_n):
                    backward(params, cache, d_neg[j], grads)
            grads.apply_sgd(params, config.lr)

            if step % config.eval_every == 0:
                metrics.append(record(step, last_loss))
                if metrics[-1]["dev_spearman"] > best.dev_score:
                    best = Checkpoint(params.copy(), step, metrics[-1]["dev_spearman"])

    if not metrics or metrics[-1]["step"] != step:
        metrics.append(record(step, last_loss))
        if metrics[-1]["dev_spearman"] > best.dev_score:
            best = Checkpoint(params.copy(), step, metrics[-1]["dev_spearman"])
    final = Checkpoint(params.copy(), step, metrics[-1]["dev_spearman"])
    return TrainResult(best=best, final=final, metrics=metrics)


def write_metrics(path: str, metrics: Sequence[dict]) -> None:
    """One JSON object per line; key order is fixed for byte-stable output."""
    with open(path, "w", encoding="utf-8") as f:
        for row in metrics:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Binary checkpoint: header, then float32 parameter blocks."""
    params = checkpoint.params
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(
            struct.pack(
                "<IIIQd",
                _CKPT_VERSION,
                params.vocab_size,
                params.dim,
                checkpoint.step,
                checkpoint.dev_score,
            )
        )
        f.write(params.token_embeddings.astype("<f4").tobytes())
        f.write(params.projection.astype("<f4").tobytes())
        f.write(params.bias.astype("<f4").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        header = f.read(28)
        if len(header) != 28:
            raise ValidationError(f"{path}: truncated checkpoint header")
        version, vocab_size, dim, step, dev_score = struct.unpack("<IIIQd", header)
        if version != _CKPT_VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        emb = np.frombuffer(f.read(4 * vocab_size * dim), dtype="<f4")
        proj = np.frombuffer(f.read(4 * dim * dim), dtype="<f4")
        bias = np.frombuffer(f.read(4 * dim), dtype="<f4")
        if emb.size != vocab_size * dim or proj.size != dim * dim or bias.size != dim:
            raise ValidationError(f"{path}: truncated checkpoint data")
    params = EncoderParams(
        emb.astype(np.float64).reshape(vocab_size, dim),
        proj.astype(np.float64).reshape(dim, dim),
        bias.astype(np.float64),
    )
    return Checkpoint(params, int(step), float(dev_score))
