"""Synthetic clustered interaction data for experiments and tests.

Items are split into contiguous clusters with Zipf popularity inside each
cluster; every user mixes a small number of clusters with Dirichlet weights.
Cluster membership doubles as a category label, which gives probe and
diversity metrics a ground truth.
"""

from __future__ import annotations

import numpy as np

from .datapipe import InteractionLog
from .errors import ConfigError


def clustered_interactions(
    n_users: int = 1000,
    n_items: int = 500,
    n_clusters: int = 8,
    events_low: int = 12,
    events_high: int = 24,
    clusters_per_user: tuple[int, int] = (2, 3),
    zipf_exponent: float = 1.0,
    stickiness: float = 0.0,
    seed: int = 0,
) -> tuple[InteractionLog, dict[str, list[str]]]:
    """Build an InteractionLog plus an item -> [category] table.

    stickiness adds session structure: after the first event, each next
    event stays in the current cluster with that probability and otherwise
    redraws from the user's mixture. 0 keeps every draw independent.
    """
    if n_items % n_clusters != 0:
        raise ConfigError(
            f"n_items={n_items} must be divisible by n_clusters={n_clusters}"
        )
    if events_low < 2 or events_high < events_low:
        raise ConfigError("need events_high >= events_low >= 2")
    if not 0.0 <= stickiness < 1.0:
        raise ConfigError(f"stickiness must be in [0, 1), got {stickiness}")
    rng = np.random.default_rng(seed)
    per_cluster = n_items // n_clusters

    # within-cluster popularity: p(rank r) ~ 1 / r^s
    ranks = np.arange(1, per_cluster + 1, dtype=np.float64)
    pop = 1.0 / ranks**zipf_exponent
    pop /= pop.sum()

    sequences: list[list[int]] = []
    timestamps: list[list[int]] = []
    lo, hi = clusters_per_user
    for _ in range(n_users):
        k = int(rng.integers(lo, hi + 1))
        clusters = rng.choice(n_clusters, size=k, replace=False)
        weights = rng.dirichlet(np.ones(k))
        length = int(rng.integers(events_low, events_high + 1))
        chosen_clusters = rng.choice(clusters, size=length, p=weights)
        if stickiness > 0.0:
            stay = rng.random(length) < stickiness
            for j in range(1, length):
                if stay[j]:
                    chosen_clusters[j] = chosen_clusters[j - 1]
        offsets = rng.choice(per_cluster, size=length, p=pop)
        seq = [int(c) * per_cluster + int(o) for c, o in zip(chosen_clusters, offsets)]
        sequences.append(seq)
        timestamps.append(list(range(length)))

    user_names = [f"u{i}" for i in range(n_users)]
    item_names = [f"i{j}" for j in range(n_items)]
    log = InteractionLog(
        user_names=user_names,
        item_names=item_names,
        sequences=sequences,
        timestamps=timestamps,
        n_events=sum(len(s) for s in sequences),
        user_vocab={u: i for i, u in enumerate(user_names)},
        item_vocab={it: i for i, it in enumerate(item_names)},
    )
    categories = {
        item_names[j]: [f"c{j // per_cluster}"] for j in range(n_items)
    }
    return log, categories


def write_categories_tsv(categories: dict[str, list[str]], path) -> None:
    """item<TAB>category(|category...) rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for item, cats in categories.items():
            fh.write(f"{item}\t{'|'.join(cats)}\n")
