"""File-based reporting: delimited tables plus matplotlib figures.

Every render_* function writes a PNG next to the delimited output so runs
are inspectable without a notebook. The Agg backend keeps this headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import DataError

_LOSS_KEYS = ("l_guidance", "l_recon", "l_ssm", "total")


def write_loss_csv(history: list[dict], path) -> None:
    """Per-step loss curve CSV: step, epoch, the three losses, total."""
    if not history:
        raise DataError("empty training history")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", *_LOSS_KEYS, "grad_norm"])
        for row in history:
            writer.writerow(
                [row["step"], row["epoch"]]
                + [f"{row[k]:.8f}" for k in _LOSS_KEYS]
                + [f"{row.get('grad_norm', 0.0):.6f}"]
            )


def epoch_means(history: list[dict], key: str) -> tuple[list[int], list[float]]:
    """Average a per-step quantity over each epoch."""
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for row in history:
        e = row["epoch"]
        sums[e] = sums.get(e, 0.0) + row[key]
        counts[e] = counts.get(e, 0) + 1
    epochs = sorted(sums)
    return epochs, [sums[e] / counts[e] for e in epochs]


def render_loss_curves(history: list[dict], path) -> None:
    """Epoch-averaged curves for each loss component."""
    if not history:
        raise DataError("empty training history")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in _LOSS_KEYS:
        epochs, means = epoch_means(history, key)
        ax.plot(epochs, means, marker="o", markersize=3, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_metrics(metrics: dict, path) -> None:
    """Recall/NDCG as a function of the cutoff N."""
    cutoffs = sorted(
        int(k.split("@")[1]) for k in metrics if k.startswith("recall@")
    )
    if not cutoffs:
        raise DataError("metrics carry no recall@N entries")
    fig, ax = plt.subplots(figsize=(6, 4))
    for prefix in ("recall", "ndcg"):
        ys = [metrics[f"{prefix}@{n}"] for n in cutoffs]
        ax.plot(cutoffs, ys, marker="o", label=prefix)
    ax.set_xlabel("N")
    ax.set_ylabel("metric value")
    ax.set_ylim(bottom=0)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_step_sweep_tsv(hit_rates: list[float], path, n: int = 50) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"steps\thr@{n}\n")
        for k, hr in enumerate(hit_rates, start=1):
            fh.write(f"{k}\t{hr:.6f}\n")


def render_step_sweep(hit_rates: list[float], path, n: int = 50) -> None:
    """Retrieval quality after each reverse step."""
    if not hit_rates:
        raise DataError("no step-sweep values")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(hit_rates) + 1), hit_rates, marker="o")
    ax.set_xlabel("reverse steps applied")
    ax.set_ylabel(f"HR@{n}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_sweep_tsv(param: str, rows: list[dict], path) -> None:
    """One row per grid value: the parameter plus every metric column."""
    if not rows:
        raise DataError("no sweep rows")
    metric_cols = [k for k in rows[0] if k != param]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join([param, *metric_cols]) + "\n")
        for row in rows:
            cells = [str(row[param])] + [
                f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c])
                for c in metric_cols
            ]
            fh.write("\t".join(cells) + "\n")


def render_sweep(param: str, rows: list[dict], metric: str, path) -> None:
    if not rows:
        raise DataError("no sweep rows")
    xs = [row[param] for row in rows]
    ys = [row[metric] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(xs)), ys, marker="o")
    ax.set_xticks(range(len(xs)))
    ax.set_xticklabels([str(x) for x in xs])
    ax.set_xlabel(param)
    ax.set_ylabel(metric)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
