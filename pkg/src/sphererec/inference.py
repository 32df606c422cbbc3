"""Serving: reverse-process generation of user embeddings and top-N retrieval.

Generation starts from sphere-projected Gaussian noise and runs the reverse
step loop down to t=1, conditioning every denoiser call on the user's
guidance vectors. The guidance is input-invariant across the loop, so it is
computed once per request. Retrieval is brute-force inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import denoiser, diffusion, guidance
from .errors import ConfigError, ContractError, DataError
from .numerics import Tensor
from .model import ModelParams
from .trainer import TrainConfig

# retrieval mode for guidance-only models: max over the K interest channels


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable brute-force inner-product index over the item table."""

    items: np.ndarray  # (|I|, d), raw embeddings

    @property
    def size(self) -> int:
        return self.items.shape[0]


def build_index(item_table) -> RetrievalIndex:
    arr = item_table.data if isinstance(item_table, Tensor) else np.asarray(item_table)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError(f"index needs a non-empty (n, d) table, got {arr.shape}")
    return RetrievalIndex(items=arr.copy())


def top_n(index: RetrievalIndex, query: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n item ids with the largest inner product, descending; ties by lower id."""
    if index.size == 0:
        raise DataError("empty index")
    if n < 1 or n > index.size:
        raise ContractError(f"n must be in 1..{index.size}, got {n}")
    scores = index.items @ np.asarray(query, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")[:n]
    return order, scores[order]


def extract_guidance_rows(
    histories, params: ModelParams, config: TrainConfig
) -> np.ndarray:
    """Guidance vectors (B, K, d) for a list of histories, without gradients."""
    if not histories:
        raise ContractError("no histories given")
    for h in histories:
        if not h:
            raise ContractError("history must be non-empty")
    if config.guidance_kind == "rule_based":
        return guidance.rule_based_guidance_batch(
            histories, config.k, params.item_table
        ).g.data

    n = min(max(len(h) for h in histories), config.max_len)
    b = len(histories)
    ids = np.zeros((b, n), dtype=np.int64)
    mask = np.zeros((b, n))
    for row, h in enumerate(histories):
        h = list(h)[-config.max_len :]
        ids[row, : len(h)] = h
        mask[row, : len(h)] = 1.0
    h_raw = Tensor(params.item_table.data[ids] * mask[:, :, None])
    return guidance.self_attentive_guidance(h_raw, params.guidance, mask=mask).g.data


def generate_user_embeddings(
    histories,
    params: ModelParams,
    schedule: diffusion.NoiseSchedule,
    config: TrainConfig,
    rng,
    steps: int | None = None,
    return_trajectory: bool = False,
):
    """Reverse-process generation for a batch of histories.

    Returns (B, d) embeddings; with return_trajectory also the list of
    intermediate states after each reverse step (earliest first). steps
    defaults to the schedule length and must not exceed it.
    """
    if steps is None:
        steps = schedule.steps
    if not 1 <= steps <= schedule.steps:
        raise ConfigError(f"steps must be in 1..{schedule.steps}, got {steps}")
    spherical = config.use_grw
    normalize = config.normalize_resolved()
    g_rows = Tensor(extract_guidance_rows(histories, params, config))
    b, d = len(histories), params.d

    x = rng.standard_normal((b, d))
    if spherical:
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
    trajectory: list[np.ndarray] = []
    for t in range(steps, 0, -1):
        out = denoiser.denoise(
            Tensor(x), np.full(b, t), g_rows, params.denoiser, normalize=normalize
        )
        x = diffusion.reverse_step(
            Tensor(x),
            out.x0_hat,
            np.full(b, t),
            schedule,
            rng=rng,
            spherical=spherical,
            noise_scale=config.reverse_noise_scale,
        ).data
        if return_trajectory:
            trajectory.append(x.copy())
    if return_trajectory:
        return x, trajectory
    return x


def generate_user_embedding(
    history,
    params: ModelParams,
    schedule: diffusion.NoiseSchedule,
    config: TrainConfig,
    rng,
    steps: int | None = None,
    return_trajectory: bool = False,
):
    """Single-history wrapper around generate_user_embeddings."""
    out = generate_user_embeddings(
        [list(history)], params, schedule, config, rng,
        steps=steps, return_trajectory=return_trajectory,
    )
    if return_trajectory:
        emb, traj = out
        return emb[0], [state[0] for state in traj]
    return out[0]


def guidance_queries(histories, params: ModelParams, config: TrainConfig) -> np.ndarray:
    """(B, K, d) guidance used directly as retrieval queries (no diffusion)."""
    return extract_guidance_rows(histories, params, config)


def top_n_multi(index: RetrievalIndex, queries: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Top n under the max over several query rows (K-interest retrieval)."""
    if queries.ndim != 2:
        raise ContractError(f"queries must be (K, d), got {queries.shape}")
    scores = (index.items @ queries.T).max(axis=1)
    order = np.argsort(-scores, kind="stable")[:n]
    return order, scores[order]


def _exclude_and_truncate(ids, scores, exclude: frozenset, n: int):
    keep = [i for i, item in enumerate(ids) if int(item) not in exclude]
    kept = keep[:n]
    return ids[kept], scores[kept]


def recommend(
    history,
    params: ModelParams,
    schedule: diffusion.NoiseSchedule,
    config: TrainConfig,
    index: RetrievalIndex,
    n: int,
    rng,
    steps: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-n items for one history, never repeating the history itself."""
    exclude = frozenset(int(i) for i in history)
    if n > index.size - len(exclude):
        raise ContractError(
            f"cannot return {n} items from {index.size} with {len(exclude)} excluded"
        )
    mode = config.serve_mode_resolved()
    if mode == "guidance":
        queries = guidance_queries([list(history)], params, config)[0]
        ids, scores = top_n_multi(index, queries, min(index.size, n + len(exclude)))
    else:
        emb = generate_user_embedding(history, params, schedule, config, rng, steps=steps)
        ids, scores = top_n(index, emb, min(index.size, n + len(exclude)))
    return _exclude_and_truncate(ids, scores, exclude, n)
