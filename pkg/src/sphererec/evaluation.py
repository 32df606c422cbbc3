"""Retrieval metrics, model evaluation, linear probing, and diversity.

HR@N here is per-user Recall@N (fraction of the user's held-out targets
retrieved in the top N), averaged over users; the two names are used
interchangeably throughout, matching common usage in the retrieval
literature. NDCG uses binary gains with the 1/log2(rank+1) discount.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import inference
from .datapipe import EvalInstance
from .errors import ConfigError, ContractError, DataError
from .model import ModelParams
from .trainer import TrainConfig

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# per-user metrics


def recall_at_n(recommended, targets, n: int) -> float:
    """|top-n hits| / |targets|. Empty target sets are the caller's problem
    (users are skipped upstream with a logged count)."""
    if n > len(recommended):
        raise ContractError(f"asked for top {n} of a {len(recommended)}-item list")
    if not targets:
        raise ContractError("empty target set; skip the user instead")
    hits = sum(1 for item in list(recommended)[:n] if item in targets)
    return hits / len(targets)


def ndcg_at_n(recommended, targets, n: int) -> float:
    """Binary-gain NDCG: DCG over hit ranks, normalized by the ideal DCG."""
    if n > len(recommended):
        raise ContractError(f"asked for top {n} of a {len(recommended)}-item list")
    if not targets:
        raise ContractError("empty target set; skip the user instead")
    dcg = 0.0
    for rank, item in enumerate(list(recommended)[:n], start=1):
        if item in targets:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = min(n, len(targets))
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, ideal + 1))
    return dcg / idcg


# ---------------------------------------------------------------------------
# ranked retrieval for a set of eval instances


def _ranked_ids(scores: np.ndarray, exclude: frozenset, n: int) -> list[int]:
    """Ranked item ids, stable ties by lower id, exclusion applied."""
    order = np.argsort(-scores, kind="stable")
    out = []
    for item in order:
        item = int(item)
        if item in exclude:
            continue
        out.append(item)
        if len(out) == n:
            break
    return out


def rank_for_instances(
    instances: list[EvalInstance],
    queries: np.ndarray,
    item_table: np.ndarray,
    n: int,
) -> list[list[int]]:
    """Top-n lists for per-user queries: (B, d) single or (B, K, d) multi."""
    if queries.ndim == 2:
        scores = queries @ item_table.T  # (B, |I|)
    elif queries.ndim == 3:
        scores = np.einsum("bkd,id->bki", queries, item_table).max(axis=1)
    else:
        raise ContractError(f"queries must be (B, d) or (B, K, d), got {queries.shape}")
    return [
        _ranked_ids(scores[row], inst.exclude, n)
        for row, inst in enumerate(instances)
    ]


def evaluate(
    params: ModelParams,
    config: TrainConfig,
    schedule,
    instances: list[EvalInstance],
    at=(10, 20, 50),
    rng=None,
    steps: int | None = None,
    batch_size: int = 512,
    per_user: bool = False,
):
    """Mean Recall@N / NDCG@N over eval instances.

    Retrieval queries come from the reverse process (serve mode "diffusion")
    or directly from the guidance vectors ("guidance"). Returns a metric
    dict; with per_user=True also the per-user rows.
    """
    if not instances:
        raise DataError("no evaluation instances")
    if rng is None:
        rng = np.random.default_rng(0)
    at = tuple(sorted(int(n) for n in at))
    if at[0] < 1:
        raise ConfigError(f"metric cutoffs must be positive, got {at}")
    n_max = at[-1]
    mode = config.serve_mode_resolved()
    item_table = params.item_table.data

    rows = []
    ranked_all: list[list[int]] = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        histories = [list(inst.history) for inst in chunk]
        if mode == "guidance":
            queries = inference.guidance_queries(histories, params, config)
        else:
            queries = inference.generate_user_embeddings(
                histories, params, schedule, config, rng, steps=steps
            )
        ranked_all.extend(rank_for_instances(chunk, queries, item_table, n_max))

    sums = {f"recall@{n}": 0.0 for n in at} | {f"ndcg@{n}": 0.0 for n in at}
    for inst, ranked in zip(instances, ranked_all):
        row = {"user": inst.user, "n_targets": len(inst.targets)}
        for n in at:
            row[f"recall@{n}"] = recall_at_n(ranked, inst.targets, min(n, len(ranked)))
            row[f"ndcg@{n}"] = ndcg_at_n(ranked, inst.targets, min(n, len(ranked)))
            sums[f"recall@{n}"] += row[f"recall@{n}"]
            sums[f"ndcg@{n}"] += row[f"ndcg@{n}"]
        rows.append(row)

    metrics = {name: value / len(instances) for name, value in sums.items()}
    metrics["n_users"] = len(instances)
    if per_user:
        return metrics, rows
    return metrics


def stepwise_hit_rates(
    params: ModelParams,
    config: TrainConfig,
    schedule,
    instances: list[EvalInstance],
    n: int = 50,
    rng=None,
    batch_size: int = 512,
) -> list[float]:
    """HR@n after each reverse step, from one generation's intermediates.

    Element k-1 scores the state after k reverse steps (k = 1..T); the last
    element matches the fully denoised embedding.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    total = np.zeros(schedule.steps)
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        histories = [list(inst.history) for inst in chunk]
        _, traj = inference.generate_user_embeddings(
            histories, params, schedule, config, rng, return_trajectory=True
        )
        for step_idx, states in enumerate(traj):
            ranked = rank_for_instances(chunk, states, params.item_table.data, n)
            for inst, lst in zip(chunk, ranked):
                total[step_idx] += recall_at_n(lst, inst.targets, min(n, len(lst)))
    return [float(v / len(instances)) for v in total]


# ---------------------------------------------------------------------------
# linear probe


@dataclass
class ProbeResult:
    accuracy: float
    n_classes: int
    n_train: int
    n_test: int
    skipped: int


def linear_probe(
    embeddings: np.ndarray,
    labels,
    seed: int = 0,
    epochs: int = 200,
    lr: float = 0.1,
) -> ProbeResult:
    """Softmax regression on frozen embeddings; held-out top-1 accuracy.

    labels[i] is the category of item i or None to exclude the item.
    Multi-label items must already be reduced (first listed category).
    Full-batch gradient descent: deterministic given the seed.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ContractError(f"embeddings must be (n, d), got {embeddings.shape}")
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    skipped = embeddings.shape[0] - len(keep)
    if skipped:
        log.info("probe: %d items without labels excluded", skipped)
    if len(keep) < 2:
        raise DataError(f"probe needs >= 2 labeled items, got {len(keep)}")
    x = embeddings[keep]
    names = sorted({labels[i] for i in keep})
    if len(names) == 1:
        warnings.warn("probe with a single class is degenerate; accuracy is 1 by definition")
        return ProbeResult(1.0, 1, len(keep), 0, skipped)
    class_of = {name: idx for idx, name in enumerate(names)}
    y = np.array([class_of[labels[i]] for i in keep])

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(keep))
    n_test = max(1, int(round(len(keep) * 0.2)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if len(train_idx) == 0:
        raise DataError("probe split left no training items")

    c = len(names)
    d = x.shape[1]
    w = np.zeros((d, c))
    b = np.zeros(c)
    xt, yt = x[train_idx], y[train_idx]
    onehot = np.zeros((len(train_idx), c))
    onehot[np.arange(len(train_idx)), yt] = 1.0
    for _ in range(epochs):
        logits = xt @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gap = (p - onehot) / len(train_idx)
        w -= lr * (xt.T @ gap)
        b -= lr * gap.sum(axis=0)

    pred = (x[test_idx] @ w + b).argmax(axis=1)
    acc = float((pred == y[test_idx]).mean())
    return ProbeResult(acc, c, len(train_idx), len(test_idx), skipped)


# ---------------------------------------------------------------------------
# category diversity


def category_diversity(
    recommendations: list[list[int]], categories: dict[int, object]
) -> tuple[float, int]:
    """Mean distinct-category count over users' top lists.

    categories maps item id -> iterable of labels; unlabeled items are
    skipped and counted. Returns (mean, skipped_item_count).
    """
    if not recommendations:
        raise DataError("no recommendation lists")
    skipped = 0
    counts = []
    for items in recommendations:
        seen = set()
        for item in items:
            labels = categories.get(int(item))
            if not labels:
                skipped += 1
                continue
            seen.update(labels)
        counts.append(len(seen))
    return float(np.mean(counts)), skipped


# ---------------------------------------------------------------------------
# report plumbing


@dataclass
class EvalReport:
    metrics: dict
    per_user: list[dict] = field(default_factory=list)
    config_snapshot: dict = field(default_factory=dict)
    checkpoint: str | None = None
    vocab_hash: str | None = None
    repeats: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        payload = {
            "metrics": self.metrics,
            "config": self.config_snapshot,
            "checkpoint": self.checkpoint,
            "vocab_hash": self.vocab_hash,
            "repeats": self.repeats,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    def write_per_user_tsv(self, path) -> None:
        if not self.per_user:
            raise DataError("report has no per-user rows")
        cols = list(self.per_user[0].keys())
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(cols) + "\n")
            for row in self.per_user:
                fh.write("\t".join(_fmt(row[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def evaluate_repeated(
    params: ModelParams,
    config: TrainConfig,
    schedule,
    instances: list[EvalInstance],
    at=(10, 20, 50),
    repeats: int = 1,
    seed: int = 0,
    steps: int | None = None,
):
    """Repeat evaluation with different serving noise; mean and std per metric."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    runs = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        runs.append(
            evaluate(params, config, schedule, instances, at=at, rng=rng, steps=steps)
        )
    keys = [k for k in runs[0] if k != "n_users"]
    summary = {}
    for k in keys:
        vals = np.array([run[k] for run in runs])
        summary[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return runs, summary
