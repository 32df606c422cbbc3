"""Interaction loading, id mapping, user splits, and sample construction.

Input formats: tab-separated ``user<TAB>item<TAB>timestamp`` and the
``::``-separated ratings dump (user::item::rating::timestamp). Users and
items are mapped to dense ids in first-appearance order; per-user sequences
are sorted by timestamp with ties broken by input order.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    ParseError,
    SamplingError,
    SplitError,
)

log = logging.getLogger(__name__)

FORMATS = ("tsv", "ml")


@dataclass
class InteractionLog:
    """Dense-id view of an event log plus the vocabularies behind it."""

    user_names: list[str]
    item_names: list[str]
    sequences: list[list[int]]  # per user, item ids in time order
    timestamps: list[list[int]]
    n_events: int
    user_vocab: dict[str, int] = field(repr=False, default_factory=dict)
    item_vocab: dict[str, int] = field(repr=False, default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_names)

    @property
    def n_items(self) -> int:
        return len(self.item_names)


def _parse_lines(lines, sep: str, n_fields: int, take):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split(sep)
        if len(parts) < n_fields:
            raise ParseError(f"line {lineno}: expected {n_fields} fields, got {len(parts)}")
        try:
            yield take(parts)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc


def load_interactions(path, fmt: str = "tsv") -> InteractionLog:
    """Read an event file and build the dense-id interaction log."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown input format {fmt!r}, expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")

    if fmt == "tsv":
        sep, n_fields = "\t", 3
        take = lambda p: (p[0], p[1], int(p[2]))
    else:  # user::item::rating::timestamp
        sep, n_fields = "::", 4
        take = lambda p: (p[0], p[1], int(p[3]))

    user_vocab: dict[str, int] = {}
    item_vocab: dict[str, int] = {}
    user_names: list[str] = []
    item_names: list[str] = []
    seqs: list[list[tuple[int, int, int]]] = []  # (ts, order, item)
    n_events = 0
    with open(path, "r", encoding="utf-8") as fh:
        for user, item, ts in _parse_lines(fh, sep, n_fields, take):
            uid = user_vocab.get(user)
            if uid is None:
                uid = len(user_names)
                user_vocab[user] = uid
                user_names.append(user)
                seqs.append([])
            iid = item_vocab.get(item)
            if iid is None:
                iid = len(item_names)
                item_vocab[item] = iid
                item_names.append(item)
            seqs[uid].append((ts, n_events, iid))
            n_events += 1

    if n_events == 0:
        raise EmptyDatasetError(f"no events in {path}")

    sequences: list[list[int]] = []
    timestamps: list[list[int]] = []
    for rows in seqs:
        rows.sort()  # by (ts, input order)
        sequences.append([iid for _, _, iid in rows])
        timestamps.append([ts for ts, _, _ in rows])

    return InteractionLog(
        user_names=user_names,
        item_names=item_names,
        sequences=sequences,
        timestamps=timestamps,
        n_events=n_events,
        user_vocab=user_vocab,
        item_vocab=item_vocab,
    )


def write_events_tsv(log_: InteractionLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for uid, (seq, tss) in enumerate(zip(log_.sequences, log_.timestamps)):
            for iid, ts in zip(seq, tss):
                fh.write(f"{log_.user_names[uid]}\t{log_.item_names[iid]}\t{ts}\n")


def write_vocab_tsv(names: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, name in enumerate(names):
            fh.write(f"{name}\t{idx}\n")


def read_vocab_tsv(path) -> list[str]:
    names: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"line {lineno}: expected name<TAB>id")
            if int(parts[1]) != len(names):
                raise ParseError(f"line {lineno}: ids must be dense and ordered")
            names.append(parts[0])
    return names


def vocab_hash(names: list[str]) -> str:
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


@dataclass
class DatasetSplit:
    train_users: np.ndarray
    valid_users: np.ndarray
    test_users: np.ndarray


def split_users(
    log_: InteractionLog, ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> DatasetSplit:
    """Disjoint user-level split covering everyone, shuffled by seed."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {ratios}")
    n = log_.n_users
    if n < 3:
        raise SplitError(f"need at least 3 users to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_valid = max(1, int(round(n * ratios[1])))
    n_test = max(1, int(round(n * ratios[2])))
    if n_valid + n_test >= n:
        raise SplitError(f"split leaves no training users for n={n} with {ratios}")
    valid = perm[:n_valid]
    test = perm[n_valid : n_valid + n_test]
    train = perm[n_valid + n_test :]
    return DatasetSplit(
        train_users=np.sort(train), valid_users=np.sort(valid), test_users=np.sort(test)
    )


@dataclass(frozen=True)
class SequenceSample:
    user: int
    history: tuple[int, ...]
    target: int
    negatives: tuple[int, ...]


def sample_negatives(interacted: frozenset, n_items: int, k: int, rng) -> tuple[int, ...]:
    """k distinct uniform draws from the items the user never touched."""
    pool = n_items - len(interacted)
    if pool < k:
        raise SamplingError(
            f"cannot draw {k} negatives from {pool} non-interacted items"
        )
    # rejection is fast when the pool dominates; fall back to enumeration
    if pool >= 4 * k and n_items >= 2 * len(interacted):
        out: list[int] = []
        seen = set(interacted)
        while len(out) < k:
            for cand in rng.integers(0, n_items, size=2 * k):
                c = int(cand)
                if c not in seen:
                    seen.add(c)
                    out.append(c)
                    if len(out) == k:
                        break
        return tuple(out)
    eligible = np.setdiff1d(np.arange(n_items), np.fromiter(interacted, dtype=int))
    return tuple(int(x) for x in rng.choice(eligible, size=k, replace=False))


def make_training_samples(
    log_: InteractionLog,
    users,
    max_len: int,
    negatives: int = 10,
    rng=None,
    min_history: int = 1,
) -> list[SequenceSample]:
    """Sliding next-item samples over each user's sequence.

    For every position j >= min_history the history is the last max_len items
    before j and the target is item j. Users with a single interaction yield
    nothing (counted in the log output, not fatal).
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be positive, got {max_len}")
    if rng is None:
        rng = np.random.default_rng(0)
    samples: list[SequenceSample] = []
    skipped = 0
    for uid in users:
        seq = log_.sequences[int(uid)]
        if len(seq) < min_history + 1:
            skipped += 1
            continue
        interacted = frozenset(seq)
        for j in range(min_history, len(seq)):
            hist = tuple(seq[max(0, j - max_len) : j])
            negs = sample_negatives(interacted, log_.n_items, negatives, rng)
            samples.append(
                SequenceSample(user=int(uid), history=hist, target=seq[j], negatives=negs)
            )
    if skipped:
        log.info("skipped %d users with too-short sequences", skipped)
    if not samples:
        raise EmptyDatasetError("no training samples after filtering")
    return samples


@dataclass(frozen=True)
class EvalInstance:
    """One held-out user: model input prefix, exclusion set, target set."""

    user: int
    history: tuple[int, ...]
    exclude: frozenset
    targets: frozenset


def make_eval_instances(
    log_: InteractionLog, users, max_len: int, min_events: int = 5
) -> tuple[list[EvalInstance], int]:
    """First 80% of each sequence is the input, the rest are targets.

    Users with fewer than min_events interactions are dropped, as are users
    whose targets all appeared in the input prefix (serving never repeats
    consumed items). Returns (instances, dropped_count).
    """
    instances: list[EvalInstance] = []
    dropped = 0
    for uid in users:
        seq = log_.sequences[int(uid)]
        if len(seq) < min_events:
            dropped += 1
            continue
        cut = int(len(seq) * 0.8)
        prefix = seq[:cut]
        prefix_set = frozenset(prefix)
        targets = frozenset(seq[cut:]) - prefix_set
        if not targets:
            dropped += 1
            continue
        instances.append(
            EvalInstance(
                user=int(uid),
                history=tuple(prefix[-max_len:]),
                exclude=prefix_set,
                targets=targets,
            )
        )
    return instances, dropped
