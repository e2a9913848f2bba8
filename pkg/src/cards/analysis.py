"""Token-embedding bias analysis.

Labels every vocabulary token by its surface case and projects token
embeddings to 2-D with PCA so case-correlated structure becomes visible.
PCA is computed by power iteration with deflation; components follow a fixed
sign convention (the entry with the largest magnitude is positive) so output
is reproducible across runs.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .tokenizer import Tokenizer


class CaseClass(enum.Enum):
    LOWER_BEGINNING = "lower_beginning"
    UPPER_BEGINNING = "upper_beginning"
    SUB_TOKEN = "sub_token"
    NON_ALPHA = "non_alpha"


@dataclass(frozen=True)
class TokenLabel:
    token_id: int
    case_class: CaseClass
    frequency: int


def _classify_token(decoded: str) -> CaseClass:
    begins_word = decoded.startswith(" ")
    body = decoded[1:] if begins_word else decoded
    first_cased = next((c for c in body if c.islower() or c.isupper()), None)
    if first_cased is None:
        return CaseClass.NON_ALPHA
    if not begins_word:
        return CaseClass.SUB_TOKEN
    return CaseClass.LOWER_BEGINNING if first_cased.islower() else CaseClass.UPPER_BEGINNING


def label_tokens(tokenizer: Tokenizer, corpus: Iterable[str] = ()) -> list[TokenLabel]:
    """Label every vocabulary id exactly once, in id order.

    Word-beginning tokens (leading word marker) are split by the case of
    their first cased character; marker-less tokens with cased characters are
    word-internal continuations; everything else is non-alphabetic.
    Frequencies count occurrences when tokenizing `corpus`.
    """
    freq: Counter[int] = Counter()
    for sentence in corpus:
        freq.update(tokenizer.encode(sentence).ids)
    labels = []
    for token_id in range(tokenizer.vocab_size):
        decoded = tokenizer.decode([token_id])
        labels.append(TokenLabel(token_id, _classify_token(decoded), freq.get(token_id, 0)))
    return labels


def _power_component(
    cov: np.ndarray,
    deflated: list[np.ndarray],
    tol: float = 1e-9,
    max_iter: int = 20000,
) -> tuple[np.ndarray, float]:
    """Dominant eigenpair of cov restricted to the complement of `deflated`."""
    dim = cov.shape[0]
    annihilated = None
    for attempt in range(4):
        if attempt == 0:
            vec = np.ones(dim) / np.sqrt(dim)
        else:
            vec = np.random.default_rng(attempt).normal(size=dim)
        for prev in deflated:
            vec -= (prev @ vec) * prev
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            continue
        vec /= norm
        for _ in range(max_iter):
            step = cov @ vec
            for prev in deflated:
                step -= (prev @ step) * prev
            value = float(vec @ step)
            step_norm = np.linalg.norm(step)
            if step_norm < 1e-15:
                # the operator annihilates this start; retry from a seeded
                # random vector in case the start was merely unlucky
                annihilated = vec
                break
            residual = np.linalg.norm(step - value * vec)
            vec = step / step_norm
            if residual <= tol * max(abs(value), 1.0):
                return vec, value
        else:
            raise ValidationError("power iteration failed to converge")
    if annihilated is not None:
        # zero on the whole remaining subspace: eigenvalue 0
        return annihilated, 0.0
    raise ValidationError("power iteration failed to converge")


def pca_2d(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows onto the top two principal components.

    Returns ([n, 2] projections, [2] explained variances in non-increasing
    order).  The input must have at least 3 rows, at least 2 columns, and
    rank >= 2 after centering.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 3 or mat.shape[1] < 2:
        raise ValidationError(f"need at least 3 rows and 2 columns, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError("matrix contains non-finite values")
    centered = mat - mat.mean(axis=0)
    cov = (centered.T @ centered) / (mat.shape[0] - 1)
    first, var1 = _power_component(cov, [])
    second, var2 = _power_component(cov, [first])
    scale = max(var1, abs(var2), 1e-30)
    if var1 <= 0.0 or var2 / scale < 1e-12:
        raise ValidationError("matrix has rank < 2 after centering")
    components = []
    for vec in (first, second):
        anchor = int(np.argmax(np.abs(vec)))
        components.append(-vec if vec[anchor] < 0.0 else vec)
    basis = np.stack(components, axis=1)
    return centered @ basis, np.array([var1, var2])


def bias_report(
    tokenizer: Tokenizer, embeddings: np.ndarray, labels: list[TokenLabel]
) -> str:
    """TSV of per-token 2-D projections plus per-class summary footers.

    Rows carry token string, x, y, case class, and corpus frequency; footers
    give class centroids and the mean pairwise centroid distance.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != len(labels):
        raise ValidationError(
            f"embeddings rows ({emb.shape[0]}) must match labels ({len(labels)})"
        )
    projected, variances = pca_2d(emb)
    lines = ["token\tx\ty\tcase_class\tfrequency"]
    for label, (x, y) in zip(labels, projected):
        token = tokenizer.token_string(label.token_id)
        lines.append(f"{token}\t{x:.6f}\t{y:.6f}\t{label.case_class.value}\t{label.frequency}")
    lines.append(f"# explained_variance\t{variances[0]:.6f}\t{variances[1]:.6f}")
    centroids: dict[CaseClass, np.ndarray] = {}
    for case_class in CaseClass:
        rows = [i for i, label in enumerate(labels) if label.case_class is case_class]
        if rows:
            members = projected[rows]
            centroid = members.mean(axis=0)
            centroids[case_class] = centroid
            spread = float(np.mean(np.linalg.norm(members - centroid, axis=1)))
            lines.append(
                f"# class\t{case_class.value}\t{centroid[0]:.6f}\t{centroid[1]:.6f}"
                f"\t{len(rows)}\t{spread:.6f}"
            )
    present = list(centroids.values())
    if len(present) >= 2:
        gaps = [
            float(np.linalg.norm(a - b))
            for i, a in enumerate(present)
            for b in present[i + 1 :]
        ]
        lines.append(f"# mean_centroid_distance\t{float(np.mean(gaps)):.6f}")
    return "\n".join(lines) + "\n"
