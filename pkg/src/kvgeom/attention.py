"""Reference attention, compression-quality metrics, and score agreement.

Attention here is prefill-style: no causal mask, every query attends to the
full key set. The softmax is always computed with per-row max subtraction;
this is part of the numerical contract, not an optimization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor import KeyTensor


@dataclass(frozen=True)
class AttentionOutput:
    """values: (batch, heads, queries, head_dim); weights: (batch, heads, queries, keys)."""

    values: np.ndarray
    weights: np.ndarray


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Stabilized softmax along the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(queries: KeyTensor, keys: KeyTensor) -> np.ndarray:
    """softmax(Q K^T / sqrt(d)) per (batch, head, query) row, float64."""
    if (
        queries.batch != keys.batch
        or queries.heads != keys.heads
        or queries.head_dim != keys.head_dim
    ):
        raise ValidationError(
            f"query shape {queries.shape} incompatible with key shape {keys.shape}"
        )
    q = queries.data.astype(np.float64)
    k = keys.data.astype(np.float64)
    logits = q @ k.transpose(0, 1, 3, 2) / np.sqrt(keys.head_dim)
    return softmax_rows(logits)


def attention(q: KeyTensor, k: KeyTensor, v: KeyTensor) -> AttentionOutput:
    """Full attention output: weights and weighted values."""
    if k.batch != v.batch or k.heads != v.heads or k.seq_len != v.seq_len:
        raise ValidationError(f"key shape {k.shape} incompatible with value shape {v.shape}")
    weights = attention_weights(q, k)
    values = weights @ v.data.astype(np.float64)
    return AttentionOutput(values=values, weights=weights)


def preservation_error(q: KeyTensor, k: KeyTensor, v: KeyTensor, retained) -> float:
    """Relative Frobenius error of attention outputs after eviction.

    ||attention(Q,K,V) - attention(Q,K',V')||_F / ||attention(Q,K,V)||_F,
    where K'/V' keep only the rows `retained` selects per (batch, head).
    Zero when everything is retained.
    """
    full = attention(q, k, v).values
    if retained.batch != k.batch or retained.heads != k.heads or retained.seq_len != k.seq_len:
        raise ValidationError("retention set frame does not match tensors")
    kept = np.empty_like(full)
    qd = q.data.astype(np.float64)
    kd = k.data.astype(np.float64)
    vd = v.data.astype(np.float64)
    scale = np.sqrt(k.head_dim)
    for bi in range(k.batch):
        for hi in range(k.heads):
            idx = retained.indices[bi][hi]
            logits = qd[bi, hi] @ kd[bi, hi, idx].T / scale
            kept[bi, hi] = softmax_rows(logits) @ vd[bi, hi, idx]
    denom = np.linalg.norm(full)
    num = np.linalg.norm(full - kept)
    if denom == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / denom)


def _as_score_vector(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64).ravel()
    if arr.size < 2:
        raise ValidationError(f"{name} needs at least 2 entries, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def pearson(a, b) -> float:
    """Sample Pearson correlation; constant input is defined as 0 (with a warning)."""
    x = _as_score_vector(a, "a")
    y = _as_score_vector(b, "b")
    if x.size != y.size:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        warnings.warn("constant input to pearson; correlation defined as 0", RuntimeWarning)
        return 0.0
    return float((xc @ yc) / np.sqrt(sx * sy))


def average_ranks(x) -> np.ndarray:
    """Ranks starting at 1; ties receive the average of their rank span."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Pearson correlation of average-ranked vectors."""
    x = _as_score_vector(a, "a")
    y = _as_score_vector(b, "b")
    if x.size != y.size:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    return pearson(average_ranks(x), average_ranks(y))


def selection_overlap(ra, rb) -> float:
    """Mean |intersection| / budget over (batch, head) pairs; budgets must match."""
    if (ra.batch, ra.heads, ra.seq_len) != (rb.batch, rb.heads, rb.seq_len):
        raise ValidationError("retention sets cover different frames")
    fractions = []
    for bi in range(ra.batch):
        for hi in range(ra.heads):
            ia = ra.indices[bi][hi]
            ib = rb.indices[bi][hi]
            if len(ia) != len(ib):
                raise ValidationError(
                    f"budget mismatch at (batch={bi}, head={hi}): {len(ia)} vs {len(ib)}"
                )
            inter = np.intersect1d(ia, ib, assume_unique=True)
            fractions.append(len(inter) / len(ia))
    return float(np.mean(fractions))
