"""Data pipeline tests: parsing, ordering, splits, and sampling invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphererec import datapipe, synth
from sphererec.errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    ParseError,
    SamplingError,
    SplitError,
)


def _write(tmp_path, text, name="events.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_tsv_maps_first_appearance_and_sorts_by_time(tmp_path):
    p = _write(
        tmp_path,
        "bob\tmilk\t30\n"
        "alice\tbread\t10\n"
        "bob\teggs\t20\n"
        "alice\tmilk\t5\n",
    )
    log = datapipe.load_interactions(p)
    assert log.user_names == ["bob", "alice"]
    assert log.item_names == ["milk", "bread", "eggs"]
    assert log.n_events == 4
    # bob: eggs(20) before milk(30); alice: milk(5) before bread(10)
    assert log.sequences[0] == [2, 0]
    assert log.sequences[1] == [0, 1]


def test_load_tsv_tie_breaks_by_input_order(tmp_path):
    p = _write(tmp_path, "u\ta\t7\nu\tb\t7\nu\tc\t7\n")
    log = datapipe.load_interactions(p)
    assert log.sequences[0] == [0, 1, 2]


def test_load_ml_format(tmp_path):
    p = _write(tmp_path, "1::10::5::100\n1::20::3::50\n2::10::4::60\n", "ratings.dat")
    log = datapipe.load_interactions(p, fmt="ml")
    assert log.n_users == 2
    assert log.sequences[0] == [1, 0]  # ts 50 before 100


def test_parse_errors_carry_line_numbers(tmp_path):
    p = _write(tmp_path, "u\ta\t1\nbroken line\n")
    with pytest.raises(ParseError) as err:
        datapipe.load_interactions(p)
    assert "line 2" in str(err.value)
    p2 = _write(tmp_path, "u\ta\tnotanumber\n", "bad.tsv")
    with pytest.raises(ParseError) as err:
        datapipe.load_interactions(p2)
    assert "line 1" in str(err.value)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataError) as err:
        datapipe.load_interactions(tmp_path / "nope.tsv")
    assert "nope.tsv" in str(err.value)
    p = _write(tmp_path, "\n\n")
    with pytest.raises(EmptyDatasetError):
        datapipe.load_interactions(p)
    with pytest.raises(ConfigError):
        datapipe.load_interactions(p, fmt="csv")


def test_vocab_round_trip_and_hash(tmp_path):
    names = ["milk", "bread", "eggs"]
    path = tmp_path / "vocab.tsv"
    datapipe.write_vocab_tsv(names, path)
    assert datapipe.read_vocab_tsv(path) == names
    h1 = datapipe.vocab_hash(names)
    h2 = datapipe.vocab_hash(["milk", "bread", "egg s"])
    assert h1 != h2 and len(h1) == 64
    # concatenation ambiguity is separated
    assert datapipe.vocab_hash(["ab", "c"]) != datapipe.vocab_hash(["a", "bc"])


def test_split_users_disjoint_and_complete():
    log, _ = synth.clustered_interactions(n_users=50, n_items=40, n_clusters=4, seed=1)
    split = datapipe.split_users(log, seed=3)
    all_users = np.concatenate([split.train_users, split.valid_users, split.test_users])
    assert len(all_users) == 50
    assert len(set(all_users.tolist())) == 50
    assert len(split.valid_users) == 5 and len(split.test_users) == 5
    # deterministic under the same seed, different under another
    split2 = datapipe.split_users(log, seed=3)
    np.testing.assert_array_equal(split.test_users, split2.test_users)
    split3 = datapipe.split_users(log, seed=4)
    assert not np.array_equal(split.test_users, split3.test_users)


def test_split_users_small_and_invalid():
    log, _ = synth.clustered_interactions(n_users=10, n_items=40, n_clusters=4, seed=0)
    split = datapipe.split_users(log)
    assert len(split.valid_users) == 1 and len(split.test_users) == 1
    assert len(split.train_users) == 8
    with pytest.raises(ConfigError):
        datapipe.split_users(log, ratios=(0.5, 0.2, 0.2))
    log2, _ = synth.clustered_interactions(n_users=2, n_items=40, n_clusters=4, seed=0)
    with pytest.raises(SplitError):
        datapipe.split_users(log2)


def test_training_samples_are_strict_prefixes():
    log, _ = synth.clustered_interactions(n_users=30, n_items=60, n_clusters=6, seed=5)
    users = np.arange(30)
    samples = datapipe.make_training_samples(log, users, max_len=10, negatives=5)
    seen = set()
    for s in samples:
        seq = log.sequences[s.user]
        j = None
        # the sample's history must be the max_len window right before target
        for pos in range(1, len(seq)):
            if seq[pos] == s.target and tuple(seq[max(0, pos - 10) : pos]) == s.history:
                j = pos
                break
        assert j is not None
        assert len(s.history) <= 10
        assert s.target not in s.negatives
        interacted = set(seq)
        assert not (set(s.negatives) & interacted)
        assert len(set(s.negatives)) == 5
        seen.add(s.user)
    # every user with >= 2 events contributed len(seq) - 1 samples
    expect = sum(len(s) - 1 for s in log.sequences if len(s) >= 2)
    assert len(samples) == expect


def test_sample_negatives_uniform_and_exhaustion():
    rng = np.random.default_rng(0)
    with pytest.raises(SamplingError):
        datapipe.sample_negatives(frozenset(range(95)), 100, 10, rng)
    # tiny pool goes through enumeration
    negs = datapipe.sample_negatives(frozenset(range(90)), 100, 10, rng)
    assert sorted(negs) == list(range(90, 100))
    counts = np.zeros(20)
    for _ in range(2000):
        for n in datapipe.sample_negatives(frozenset({0, 1}), 20, 5, rng):
            counts[n] += 1
    assert counts[0] == 0 and counts[1] == 0
    rel = counts[2:] / counts[2:].mean()
    assert rel.min() > 0.9 and rel.max() < 1.1


def test_eval_instances_prefix_and_target_rules():
    log, _ = synth.clustered_interactions(n_users=40, n_items=80, n_clusters=8, seed=2)
    inst, dropped = datapipe.make_eval_instances(log, np.arange(40), max_len=10)
    assert inst, "synthetic users have >= 12 events each"
    for e in inst:
        seq = log.sequences[e.user]
        cut = int(len(seq) * 0.8)
        assert list(e.history) == seq[:cut][-10:]
        assert e.exclude == frozenset(seq[:cut])
        assert e.targets == frozenset(seq[cut:]) - e.exclude
        assert e.targets


def test_eval_instances_drop_short_users(tmp_path):
    p = tmp_path / "short.tsv"
    rows = [f"u1\ti{j}\t{j}" for j in range(3)]  # 3 events: below threshold
    rows += [f"u2\ti{j}\t{j}" for j in range(10)]
    p.write_text("\n".join(rows) + "\n")
    log = datapipe.load_interactions(p)
    inst, dropped = datapipe.make_eval_instances(log, np.arange(2), max_len=5)
    assert dropped == 1
    assert len(inst) == 1 and inst[0].user == 1


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=6, max_value=40),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_eval_cut_is_always_proper(n, seed):
    rng = np.random.default_rng(seed)
    seq = [int(x) for x in rng.integers(0, 1000, size=n)]
    cut = int(n * 0.8)
    assert 1 <= cut < n  # input and target portions are both non-empty


def test_synth_shapes_and_categories():
    log, cats = synth.clustered_interactions(
        n_users=25, n_items=40, n_clusters=4, seed=9
    )
    assert log.n_users == 25 and log.n_items == 40
    assert all(12 <= len(s) <= 24 for s in log.sequences)
    assert cats["i0"] == ["c0"] and cats["i39"] == ["c3"]
    with pytest.raises(ConfigError):
        synth.clustered_interactions(n_items=41, n_clusters=4)
