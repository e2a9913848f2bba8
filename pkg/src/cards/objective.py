"""Contrastive objectives over cosine similarity, with analytic gradients.

The batch loss treats each row of H and the matching row of H' as a positive
pair and every other H' row as an in-batch negative.  The hard-negative
variant appends extra encoded negatives, s per query, whose similarity terms
enter every query's denominator.  All log-sum-exp reductions subtract the row
maximum first, so losses stay finite at any temperature.

Gradients are derived by hand through the softmax, the cosine, and the row
normalizations; tests check them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LossValue:
    total: float
    per_sample: np.ndarray


def _check_matrix(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got ndim {m.ndim}")
    if m.shape[0] == 0:
        raise ValidationError(f"{name} has no rows")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite values")
    return m


def _unit_rows(name: str, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError(f"{name} contains a zero-norm row")
    return m / norms[:, None], norms


def _logsumexp_rows(scores: np.ndarray) -> np.ndarray:
    # row maxima are finite: the positive-pair column is never masked
    m = np.max(scores, axis=1)
    return m + np.log(np.exp(scores - m[:, None]).sum(axis=1))


def _prepare(
    h: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray | None,
    tau: float,
    exclude_self_negative: bool,
):
    if tau <= 0.0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    h = _check_matrix("H", h)
    h_pos = _check_matrix("H_pos", h_pos)
    if h.shape != h_pos.shape:
        raise ValidationError(f"H and H_pos shapes differ: {h.shape} vs {h_pos.shape}")
    n = h.shape[0]
    u, _ = _unit_rows("H", h)
    v, _ = _unit_rows("H_pos", h_pos)
    scores = (u @ v.T) / tau
    neg_scores = None
    w = None
    if h_neg is not None:
        h_neg = _check_matrix("H_neg", h_neg)
        if h_neg.shape[1] != h.shape[1]:
            raise ValidationError("H_neg dimensionality differs from H")
        if h_neg.shape[0] % n != 0:
            raise ValidationError(
                f"H_neg must hold the same number of negatives per query; "
                f"{h_neg.shape[0]} rows is not a multiple of batch size {n}"
            )
        w, _ = _unit_rows("H_neg", h_neg)
        neg_scores = (u @ w.T) / tau
        if exclude_self_negative:
            s = h_neg.shape[0] // n
            for i in range(n):
                neg_scores[i, i * s : (i + 1) * s] = -np.inf
    return h, h_pos, h_neg, u, v, w, scores, neg_scores


def _loss_from_scores(scores: np.ndarray, neg_scores: np.ndarray | None) -> LossValue:
    full = scores if neg_scores is None else np.concatenate([scores, neg_scores], axis=1)
    per = _logsumexp_rows(full) - np.diag(scores)
    return LossValue(float(per.mean()), per)


def info_nce(h: np.ndarray, h_pos: np.ndarray, tau: float) -> LossValue:
    """In-batch contrastive loss; row i of h_pos is the positive for row i of h."""
    _, _, _, _, _, _, scores, _ = _prepare(h, h_pos, None, tau, False)
    return _loss_from_scores(scores, None)


def info_nce_hard(
    h: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray,
    tau: float,
    exclude_self_negative: bool = False,
) -> LossValue:
    """In-batch loss plus retrieved negatives shared in every denominator.

    h_neg stacks s negatives per query: rows [i*s, (i+1)*s) belong to query i.
    With exclude_self_negative, each query's own block is masked out.
    """
    if h_neg is None:
        raise ValidationError("h_neg is required; use info_nce without negatives")
    _, _, _, _, _, _, scores, neg_scores = _prepare(h, h_pos, h_neg, tau, exclude_self_negative)
    return _loss_from_scores(scores, neg_scores)


def _grad_through_normalization(
    g_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    inner = np.sum(g_unit * unit, axis=1, keepdims=True)
    return (g_unit - inner * unit) / norms[:, None]


def _loss_and_grads(
    h: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray | None,
    tau: float,
    exclude_self_negative: bool,
):
    h, h_pos, h_neg, u, v, w, scores, neg_scores = _prepare(
        h, h_pos, h_neg, tau, exclude_self_negative
    )
    n = h.shape[0]
    full = scores if neg_scores is None else np.concatenate([scores, neg_scores], axis=1)
    lse = _logsumexp_rows(full)
    probs = np.exp(full - lse[:, None])
    loss = LossValue(float((lse - np.diag(scores)).mean()), lse - np.diag(scores))

    g_pos = probs[:, :n].copy()
    g_pos[np.arange(n), np.arange(n)] -= 1.0
    g_pos /= n * tau
    g_u = g_pos @ v
    g_v = g_pos.T @ u
    g_w = None
    if neg_scores is not None:
        g_neg = probs[:, n:] / (n * tau)
        g_u = g_u + g_neg @ w
        g_w = g_neg.T @ u

    _, h_norms = _unit_rows("H", h)
    _, p_norms = _unit_rows("H_pos", h_pos)
    d_h = _grad_through_normalization(g_u, u, h_norms)
    d_pos = _grad_through_normalization(g_v, v, p_norms)
    d_neg = None
    if g_w is not None:
        _, n_norms = _unit_rows("H_neg", h_neg)
        d_neg = _grad_through_normalization(g_w, w, n_norms)
    return loss, d_h, d_pos, d_neg


def grad_info_nce(
    h: np.ndarray, h_pos: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """d(total loss)/dH and d(total loss)/dH_pos."""
    _, d_h, d_pos, _ = _loss_and_grads(h, h_pos, None, tau, False)
    return d_h, d_pos


def grad_info_nce_hard(
    h: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray,
    tau: float,
    exclude_self_negative: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the hard-negative loss w.r.t. all three matrices."""
    if h_neg is None:
        raise ValidationError("h_neg is required; use grad_info_nce without negatives")
    _, d_h, d_pos, d_neg = _loss_and_grads(h, h_pos, h_neg, tau, exclude_self_negative)
    return d_h, d_pos, d_neg


def loss_and_grads(
    h: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray | None,
    tau: float,
    exclude_self_negative: bool = False,
):
    """One-pass loss plus gradients, for training loops."""
    return _loss_and_grads(h, h_pos, h_neg, tau, exclude_self_negative)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0.0
    if np.any(q[support] == 0.0):
        return float("inf")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def symmetric_kl(p: np.ndarray, q: np.ndarray) -> float:
    """(KL(p||q) + KL(q||p)) / 2 for two discrete distributions.

    Zero probabilities follow the 0*log(0)=0 convention; mass where the other
    distribution has none yields infinity.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.shape != q.shape or p.size == 0:
        raise ValidationError("p and q must be 1-D distributions of equal size")
    for name, dist in (("p", p), ("q", q)):
        if not np.all(np.isfinite(dist)) or np.any(dist < 0.0):
            raise ValidationError(f"{name} must be non-negative and finite")
        if abs(dist.sum() - 1.0) > 1e-9:
            raise ValidationError(f"{name} must sum to 1 within 1e-9, got {dist.sum()!r}")
    return 0.5 * _kl(p, q) + 0.5 * _kl(q, p)
