"""Differentiable operations over Tensors.

Each op computes its result eagerly with numpy and registers a closure that
maps the upstream gradient to per-input gradients. Shapes follow numpy
broadcasting; gradients of broadcast inputs are summed back to the input
shape.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..errors import (
    ContractError,
    DegenerateInputError,
    IdLookupError,
    NumericError,
    ShapeError,
)
from .tensor import Tensor, record_op

_EPS_NORM = 1e-12


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return record_op(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return record_op(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return record_op(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return ((a, g * c),)

    return record_op(out, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with optional broadcast batch dimensions (ndim >= 2)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        out = Tensor(a.data @ b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}") from exc

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return record_op(out, (a, b), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(g):
        return ((a, g * (1.0 - y * y)),)

    return record_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shaping


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return record_op(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g / count, a.shape).copy()),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg / count, a.shape).copy()),)

    return record_op(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return ((a, g.reshape(a.shape)),)

    return record_op(out, (a,), bwd)


def swap_last_axes(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"swap_last_axes needs ndim >= 2, got {a.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2).copy())

    def bwd(g):
        return ((a, np.swapaxes(g, -1, -2)),)

    return record_op(out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ContractError("concat of an empty sequence")
    arrs = [p.data for p in parts]
    out = Tensor(np.concatenate(arrs, axis=axis))
    widths = [arr.shape[axis] for arr in arrs]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        pairs = []
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            pairs.append((part, g[tuple(idx)]))
        return pairs

    return record_op(out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Tensor, axis: int) -> Tensor:
    if not np.isfinite(a.data).all():
        raise NumericError("softmax over non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return record_op(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    if not np.isfinite(a.data).all():
        raise NumericError("log_softmax over non-finite input")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def bwd(g):
        return ((a, g - np.exp(y) * g.sum(axis=axis, keepdims=True)),)

    return record_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# norms and sphere geometry


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Project rows onto the unit sphere. Idempotent up to rounding."""
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if (n < _EPS_NORM).any():
        raise DegenerateInputError("l2_normalize of a vector with norm < 1e-12")
    y = a.data / n
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, (g - y * dot) / n),)

    return record_op(out, (a,), bwd)


def tangent_project(v: Tensor, x: Tensor) -> Tensor:
    """Remove from v its component along x (rows of x assumed unit norm)."""
    if v.shape != x.shape:
        raise ShapeError(f"tangent_project shapes disagree: {v.shape} vs {x.shape}")
    s = (v.data * x.data).sum(axis=-1, keepdims=True)
    out = Tensor(v.data - s * x.data)

    def bwd(g):
        gdx = (g * x.data).sum(axis=-1, keepdims=True)
        gv = g - gdx * x.data
        gx = -(gdx * v.data + s * g)
        return ((v, gv), (x, gx))

    return record_op(out, (v, x), bwd)


def exp_map(x: Tensor, v: Tensor) -> Tensor:
    """Sphere exponential map: follow the geodesic from unit x along tangent v.

    exp_x[v] = cos(|v|) x + sin(|v|) v/|v|; returns x exactly when |v| < 1e-12.
    """
    if v.shape != x.shape:
        raise ShapeError(f"exp_map shapes disagree: {x.shape} vs {v.shape}")
    xn = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (np.abs(xn - 1.0) > 1e-9).any():
        raise ContractError("exp_map base point is not unit norm")
    tdot = np.abs((x.data * v.data).sum(axis=-1, keepdims=True))
    if (tdot > 1e-6).any():
        raise ContractError("exp_map direction is not tangent to the base point")

    r = np.sqrt((v.data * v.data).sum(axis=-1, keepdims=True))
    small = r < _EPS_NORM
    r_safe = np.where(small, 1.0, r)
    cos_r = np.cos(r)
    sinc = np.where(small, 1.0, np.sin(r) / r_safe)
    y = np.where(small, x.data, cos_r * x.data + sinc * v.data)
    out = Tensor(y)

    def bwd(g):
        gdx = (g * x.data).sum(axis=-1, keepdims=True)
        gdv = (g * v.data).sum(axis=-1, keepdims=True)
        gx = np.where(small, g, cos_r * g)
        # d sinc/dr = (r cos r - sin r)/r^2; chain through r = |v| gives the
        # rank-one correction along v. The small-r limit of the bracket is
        # finite, and it multiplies v -> 0, so the branch select is exact.
        coef = np.where(
            small, 0.0, (-sinc * gdx + (r_safe * cos_r - np.sin(r)) / r_safe**3 * gdv)
        )
        gv = np.where(small, g, sinc * g + coef * v.data)
        return ((x, gx), (v, gv))

    return record_op(out, (x, v), bwd)


# ---------------------------------------------------------------------------
# lookups and gathers


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; gradient scatters back additively."""
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("embedding ids must be integers")
    if ids.size:
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= table.shape[0]:
            bad = lo if lo < 0 else hi
            raise IdLookupError(f"id {bad} outside table with {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, gt),)

    return record_op(out, (table,), bwd)


def take_rows(a: Tensor, index) -> Tensor:
    """Select one row along the second-to-last axis.

    (K, d) with scalar index -> (d,); (B, K, d) with (B,) indices -> (B, d).
    Gradient flows only into the selected rows.
    """
    if a.ndim == 2:
        i = int(index)
        if not 0 <= i < a.shape[0]:
            raise IdLookupError(f"row {i} outside axis of length {a.shape[0]}")
        out = Tensor(a.data[i])

        def bwd(g):
            ga = np.zeros_like(a.data)
            ga[i] = g
            return ((a, ga),)

        return record_op(out, (a,), bwd)

    if a.ndim == 3:
        idx = np.asarray(index)
        if idx.shape != (a.shape[0],):
            raise ShapeError(f"need {a.shape[0]} row indices, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
            raise IdLookupError(f"row index outside axis of length {a.shape[1]}")
        rows = np.arange(a.shape[0])
        out = Tensor(a.data[rows, idx])

        def bwd(g):
            ga = np.zeros_like(a.data)
            ga[rows, idx] = g
            return ((a, ga),)

        return record_op(out, (a,), bwd)

    raise ShapeError(f"take_rows supports 2-D or 3-D input, got {a.shape}")


# ---------------------------------------------------------------------------
# composites


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product along the last axis."""
    return tensor_sum(mul(a, b), axis=-1)


def sampled_softmax(query: Tensor, positive: Tensor, negatives: Tensor) -> Tensor:
    """Mean sampled-softmax loss: -log p(positive | positive + negatives).

    query, positive: (B, d) or (d,); negatives: (B, k, d) or (k, d), k >= 1.
    """
    single = query.ndim == 1
    if single:
        query = reshape(query, (1,) + query.shape)
        positive = reshape(positive, (1,) + positive.shape)
        negatives = reshape(negatives, (1,) + negatives.shape)
    if negatives.ndim != 3 or negatives.shape[1] < 1:
        raise ContractError(f"need at least one negative row, got shape {negatives.shape}")
    b, d = query.shape
    k = negatives.shape[1]
    pos_logit = reshape(rowwise_dot(query, positive), (b, 1))
    neg_logits = reshape(matmul(reshape(query, (b, 1, d)), swap_last_axes(negatives)), (b, k))
    logits = concat([pos_logit, neg_logits], axis=1)
    logp = log_softmax(logits, axis=1)
    # column 0 holds the positive; pick it out with a constant mask
    mask = np.zeros((b, 1 + k))
    mask[:, 0] = 1.0
    picked = tensor_sum(mul(logp, Tensor(mask)), axis=1)
    return neg(mean(picked))
