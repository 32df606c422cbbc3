"""Multi-interest guidance extraction from interaction histories.

Two interchangeable extractors produce K interest vectors per user:

* self-attentive: K-head additive attention over the encoded history,
  attention scores computed from position-enriched rows, interest vectors
  from the raw item rows;
* rule-based: the last K item embeddings (earliest item repeated at the
  front when the history is short).

Selection picks the single interest most aligned with a target embedding by
hard argmax; gradients flow only through the chosen row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import Tensor
from .numerics import ops

# additive mask pushes padded positions to -inf before the softmax
_MASK_OFFSET = 1e9


@dataclass
class GuidanceParams:
    """Attention weights plus the positional table (max_len x d)."""

    w1: Tensor  # (d, 4d)
    b1: Tensor  # (4d,)
    w2: Tensor  # (4d, K)
    b2: Tensor  # (K,)
    positional: Tensor  # (max_len, d)


@dataclass
class GuidanceSequence:
    """K interest vectors, with attention weights when applicable."""

    g: Tensor  # (K, d) or (B, K, d)
    attention: Tensor | None  # (N, K) or (B, N, K)


def encode_history(history, item_table: Tensor, positional: Tensor) -> Tensor:
    """Embed a history as item rows plus positional rows (the attention
    score input). Row i is item_table[history[i]] + positional[i]."""
    ids = np.asarray(history)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError(f"history must be a non-empty id sequence, got shape {ids.shape}")
    emb = ops.embedding_lookup(item_table, ids)
    pos = ops.embedding_lookup(positional, np.arange(ids.size))
    return ops.add(emb, pos)


def self_attentive_guidance(
    h: Tensor, params: GuidanceParams, mask: np.ndarray | None = None
) -> GuidanceSequence:
    """Extract K interests from raw encoded rows h: (N, d) or (B, N, d).

    Scores come from tanh((h + P) W1 + b1) W2 + b2 and are softmaxed over the
    sequence axis per interest; interests are the attention-weighted sums of
    the RAW rows (positions only steer the scores). mask marks real positions
    with 1.0 (batched input only); padded rows of h must already be zeroed.
    """
    single = h.ndim == 2
    if single:
        if mask is not None:
            raise ContractError("mask only applies to batched input")
        h = ops.reshape(h, (1,) + h.shape)
    if h.ndim != 3:
        raise ShapeError(f"guidance input must be (N, d) or (B, N, d), got {h.shape}")
    n = h.shape[1]
    if n > params.positional.shape[0]:
        raise ContractError(
            f"history length {n} exceeds positional table of {params.positional.shape[0]}"
        )

    pos = ops.embedding_lookup(params.positional, np.arange(n))
    hp = ops.add(h, pos)  # (B, N, d) + (N, d)
    hidden = ops.tanh(ops.add(ops.matmul(hp, params.w1), params.b1))
    scores = ops.add(ops.matmul(hidden, params.w2), params.b2)  # (B, N, K)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != h.shape[:2]:
            raise ShapeError(f"mask shape {mask.shape} does not match rows {h.shape[:2]}")
        scores = ops.add(scores, Tensor((mask - 1.0)[:, :, None] * _MASK_OFFSET))
    attn = ops.softmax(scores, axis=1)  # over sequence positions
    g = ops.matmul(ops.swap_last_axes(attn), h)  # (B, K, N) @ (B, N, d)

    if single:
        g = ops.reshape(g, g.shape[1:])
        attn = ops.reshape(attn, attn.shape[1:])
    return GuidanceSequence(g=g, attention=attn)


def rule_based_ids(history, k: int) -> np.ndarray:
    """Last k item ids, front-padded by repeating the earliest item."""
    ids = list(history)
    if not ids:
        raise ContractError("history must be non-empty")
    if k < 1:
        raise ContractError(f"need k >= 1 interests, got {k}")
    if len(ids) >= k:
        return np.asarray(ids[-k:])
    return np.asarray([ids[0]] * (k - len(ids)) + ids)


def rule_based_guidance(history, k: int, item_table: Tensor) -> GuidanceSequence:
    """Interests are simply the last k item embeddings (padded if short)."""
    g = ops.embedding_lookup(item_table, rule_based_ids(history, k))
    return GuidanceSequence(g=g, attention=None)


def rule_based_guidance_batch(histories, k: int, item_table: Tensor) -> GuidanceSequence:
    ids = np.stack([rule_based_ids(h, k) for h in histories])
    g = ops.embedding_lookup(item_table, ids)  # (B, K, d)
    return GuidanceSequence(g=g, attention=None)


def select_guidance(g: Tensor, target_embedding: Tensor):
    """Pick the interest with the largest inner product against the target.

    Ties go to the lowest index. Returns (selected, index); the argmax is a
    hard routing decision, so gradients reach only the selected rows.
    """
    if g.ndim == 2:
        if target_embedding.ndim != 1:
            raise ShapeError(
                f"target must be a vector for a single sequence, got {target_embedding.shape}"
            )
        scores = g.data @ target_embedding.data
        idx = int(np.argmax(scores))
        return ops.take_rows(g, idx), idx
    if g.ndim == 3:
        if target_embedding.ndim != 2 or target_embedding.shape[0] != g.shape[0]:
            raise ShapeError(
                f"targets {target_embedding.shape} do not match interests {g.shape}"
            )
        scores = np.einsum("bkd,bd->bk", g.data, target_embedding.data)
        idx = scores.argmax(axis=1)
        return ops.take_rows(g, idx), idx
    raise ShapeError(f"interests must be (K, d) or (B, K, d), got {g.shape}")


def guidance_loss(selected: Tensor, target_embedding: Tensor, negative_embeddings: Tensor) -> Tensor:
    """Sampled-softmax loss driving the selected interest toward the target."""
    return ops.sampled_softmax(selected, target_embedding, negative_embeddings)
