"""Conditional denoiser and the training losses it feeds.

The denoiser maps (noised embedding, step, K guidance vectors) to a
prediction of the clean next-interest embedding. Input is the concatenation
[x_t, step_embedding(t), flattened guidance], i.e. (2 + K) * d features; the
body is two tanh layers of width 4d; the output is L2-normalized when the
model lives on the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor
from .numerics import ops


@dataclass
class DenoiserParams:
    w1: Tensor  # ((2+K)d, 4d)
    b1: Tensor
    w2: Tensor  # (4d, 4d)
    b2: Tensor
    w3: Tensor  # (4d, d)
    b3: Tensor


@dataclass
class DenoiserOutput:
    x0_hat: Tensor
    raw: Tensor
    normalized: bool


def step_embedding(t, d: int) -> np.ndarray:
    """Sinusoidal step features: component 2i is sin(t / 10000^(2i/d)),
    component 2i+1 the matching cos. d must be even."""
    if d % 2 != 0:
        raise ConfigError(f"step embedding needs an even width, got {d}")
    t = np.asarray(t, dtype=np.float64)
    i = np.arange(d // 2)
    freq = 10000.0 ** (-(2.0 * i) / d)
    ang = t[..., None] * freq
    out = np.empty(t.shape + (d,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def denoise(
    x_t: Tensor,
    t,
    guidance: Tensor,
    params: DenoiserParams,
    normalize: bool = True,
) -> DenoiserOutput:
    """Predict the clean embedding from x_t at step t under K guidance rows.

    x_t: (d,) or (B, d); guidance: (K, d) or (B, K, d) to match.
    """
    single = x_t.ndim == 1
    if single:
        x_t = ops.reshape(x_t, (1,) + x_t.shape)
        if guidance.ndim != 2:
            raise ShapeError(f"guidance for one sample must be (K, d), got {guidance.shape}")
        guidance = ops.reshape(guidance, (1,) + guidance.shape)
    if x_t.ndim != 2 or guidance.ndim != 3 or guidance.shape[0] != x_t.shape[0]:
        raise ShapeError(f"inputs disagree: x_t {x_t.shape}, guidance {guidance.shape}")
    b, d = x_t.shape
    if guidance.shape[2] != d:
        raise ShapeError(f"guidance width {guidance.shape[2]} does not match d={d}")

    se = np.broadcast_to(step_embedding(t, d), (b, d)).copy()
    flat_g = ops.reshape(guidance, (b, guidance.shape[1] * d))
    inp = ops.concat([x_t, Tensor(se), flat_g], axis=1)
    if inp.shape[1] != params.w1.shape[0]:
        raise ShapeError(
            f"denoiser was built for {params.w1.shape[0]} input features, got {inp.shape[1]}"
        )
    h1 = ops.tanh(ops.add(ops.matmul(inp, params.w1), params.b1))
    h2 = ops.tanh(ops.add(ops.matmul(h1, params.w2), params.b2))
    raw = ops.add(ops.matmul(h2, params.w3), params.b3)
    if single:
        raw = ops.reshape(raw, (d,))
    out = ops.l2_normalize(raw) if normalize else raw
    return DenoiserOutput(x0_hat=out, raw=raw, normalized=normalize)


def recon_loss(x0_hat: Tensor, x0: Tensor) -> Tensor:
    """Mean squared Euclidean distance between prediction and target rows."""
    if x0_hat.shape != x0.shape:
        raise ShapeError(f"reconstruction shapes disagree: {x0_hat.shape} vs {x0.shape}")
    diff = ops.sub(x0_hat, x0)
    per_row = ops.tensor_sum(ops.mul(diff, diff), axis=-1)
    return ops.mean(per_row) if per_row.ndim else per_row


def ssm_loss(x0_hat: Tensor, target_embedding: Tensor, negative_embeddings: Tensor) -> Tensor:
    """Sampled softmax of the prediction against raw item embeddings."""
    return ops.sampled_softmax(x0_hat, target_embedding, negative_embeddings)


def total_loss(l_guidance: Tensor, l_recon: Tensor, l_ssm: Tensor, lam: float, mu: float) -> Tensor:
    """Weighted sum L_guidance + lam * L_recon + mu * L_ssm."""
    if lam < 0 or mu < 0:
        raise ConfigError(f"loss weights must be non-negative, got lam={lam}, mu={mu}")
    return ops.add(ops.add(l_guidance, ops.scale(l_recon, lam)), ops.scale(l_ssm, mu))
