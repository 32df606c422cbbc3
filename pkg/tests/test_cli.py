"""End-to-end command tests: every subcommand through main(), exit codes,
config precedence, and the reproducibility invariant."""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from sphererec import cli, datapipe, synth, trainer
from sphererec.errors import ConfigError

TINY = ["--d", "8", "--k", "2", "--T", "4", "--epochs", "2", "--batch", "32", "--seed", "5"]


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    log, cats = synth.clustered_interactions(n_users=40, n_items=50, n_clusters=5, seed=7)
    raw = root / "raw.tsv"
    datapipe.write_events_tsv(log, raw)
    cats_path = root / "cats.tsv"
    synth.write_categories_tsv(cats, cats_path)
    ds = root / "ds"
    assert cli.main(["prepare", "--input", str(raw), "--out", str(ds), "--max-len", "6"]) == 0
    train_dir = root / "train"
    assert cli.main(["train", "--data", str(ds), "--run-dir", str(train_dir), *TINY]) == 0
    hist = root / "hist.tsv"
    reloaded, _ = cli.load_dataset(ds)
    lines = []
    for u in range(3):
        names = [reloaded.item_names[i] for i in reloaded.sequences[u][:5]]
        lines.append(f"{reloaded.user_names[u]}\t{','.join(names)}")
    hist.write_text("\n".join(lines) + "\n")
    return SimpleNamespace(
        root=root, ds=ds, train=train_dir, ckpt=train_dir / "checkpoint",
        cats=cats_path, hist=hist, log=reloaded,
    )


# ---------------------------------------------------------------------------
# config plumbing


def test_parse_scalar_types():
    assert cli.parse_scalar("3") == 3 and isinstance(cli.parse_scalar("3"), int)
    assert cli.parse_scalar("0.5") == 0.5
    assert cli.parse_scalar("true") is True and cli.parse_scalar("False") is False
    assert cli.parse_scalar("none") is None
    assert cli.parse_scalar('"self_attentive"') == "self_attentive"
    assert cli.parse_scalar("stddev") == "stddev"


def test_parse_config_file_aliases_and_comments(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nlambda = 0.3\nT = 12\nd = 16  # trailing\n\nlr=0.01\n")
    data = cli.parse_config_file(cfg)
    assert data == {"lam": 0.3, "steps": 12, "d": 16, "lr": 0.01}
    bad = tmp_path / "bad.txt"
    bad.write_text("just words\n")
    with pytest.raises(ConfigError, match="bad.txt:1"):
        cli.parse_config_file(bad)
    with pytest.raises(ConfigError, match="not found"):
        cli.parse_config_file(tmp_path / "missing.txt")


def test_write_config_round_trip(tmp_path):
    config = trainer.TrainConfig(d=16, lam=0.25, use_grw=False, guidance_kind="rule_based")
    path = tmp_path / "resolved.txt"
    cli.write_config(config, path)
    back = trainer.TrainConfig.from_dict(cli.parse_config_file(path))
    assert back == config


def test_flag_overrides_and_aliased_flags():
    args = cli.build_parser().parse_args(
        ["train", "--data", "x", "--lambda", "0.2", "--mu", "0.5", "--T", "7", "--no-use-grw"]
    )
    config = cli.resolve_config(args)
    assert config.lam == 0.2 and config.mu == 0.5 and config.steps == 7
    assert config.use_grw is False


def test_config_precedence_manifest_file_flag(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("max_len = 9\nd = 16\n")
    args = cli.build_parser().parse_args(
        ["train", "--data", "x", "--config", str(cfg), "--d", "32"]
    )
    config = cli.resolve_config(args, manifest={"max_len": 4})
    assert config.max_len == 9  # file beats manifest
    assert config.d == 32  # flag beats file
    config2 = cli.resolve_config(
        cli.build_parser().parse_args(["train", "--data", "x"]), manifest={"max_len": 4}
    )
    assert config2.max_len == 4  # manifest beats built-in default


def test_variant_preset_and_conflict():
    args = cli.build_parser().parse_args(["train", "--data", "x", "--variant", "v3"])
    config = cli.resolve_config(args)
    assert (config.use_guidance_loss, config.use_recon_loss, config.use_ssm_loss, config.use_grw) == (
        False, False, True, False,
    )
    clash = cli.build_parser().parse_args(
        ["train", "--data", "x", "--variant", "v2", "--use-recon-loss"]
    )
    with pytest.raises(ConfigError, match="variant"):
        cli.resolve_config(clash)


# ---------------------------------------------------------------------------
# prepare / train


def test_prepare_writes_manifest(ws):
    manifest = json.loads((ws.ds / "manifest.json").read_text())
    assert manifest["n_users"] == 40 and manifest["n_items"] == 50
    assert manifest["max_len"] == 6
    assert (ws.ds / "events.tsv").exists()
    assert len(datapipe.read_vocab_tsv(ws.ds / "item_vocab.tsv")) == 50


def test_prepare_missing_input_exits_2(tmp_path, capsys):
    rc = cli.main(["prepare", "--input", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "d")])
    assert rc == 2
    assert "nope.tsv" in capsys.readouterr().err


def test_train_artifacts(ws):
    for name in ("config.txt", "loss.csv", "train_log.jsonl", "epoch_stats.json"):
        assert (ws.train / name).exists(), name
    png = (ws.train / "loss_curves.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    manifest = json.loads((ws.ckpt / "manifest.json").read_text())
    assert manifest["config"]["d"] == 8
    assert manifest["config"]["max_len"] == 6  # flowed in from the dataset manifest
    assert manifest["meta"]["split"] == [0.8, 0.1, 0.1]
    assert len((ws.train / "train_log.jsonl").read_text().splitlines()) > 0


def test_rerun_from_resolved_config_reproduces_checkpoint(ws, tmp_path):
    rerun = tmp_path / "rerun"
    rc = cli.main(
        ["train", "--data", str(ws.ds), "--run-dir", str(rerun),
         "--config", str(ws.train / "config.txt")]
    )
    assert rc == 0
    assert (rerun / "checkpoint" / "payload.bin").read_bytes() == (
        ws.ckpt / "payload.bin"
    ).read_bytes()


# ---------------------------------------------------------------------------
# eval / recommend / probe


def test_eval_outputs(ws, tmp_path, capsys):
    run = tmp_path / "eval"
    rc = cli.main(
        ["eval", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(run), "--at", "5,10"]
    )
    assert rc == 0
    out = capsys.readouterr().out
    flat = json.loads(out.splitlines()[0])
    assert set(flat) == {"recall@5", "recall@10", "ndcg@5", "ndcg@10", "n_users"}
    report = json.loads((run / "report.json").read_text())
    assert report["metrics"]["recall@10"] == flat["recall@10"]
    assert report["config"]["d"] == 8
    assert (run / "per_user.tsv").read_text().startswith("user\t")
    assert (run / "metrics.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_repeats_reports_mean_std(ws, tmp_path, capsys):
    run = tmp_path / "evalr"
    rc = cli.main(
        ["eval", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(run), "--at", "10", "--repeats", "2"]
    )
    assert rc == 0
    report = json.loads((run / "report.json").read_text())
    assert set(report["metrics"]["recall@10"]) == {"mean", "std"}
    assert report["repeats"]["n"] == 2 and len(report["repeats"]["runs"]) == 2


def test_eval_vocab_mismatch_exits_3(ws, tmp_path, capsys):
    other_log, _ = synth.clustered_interactions(n_users=12, n_items=60, n_clusters=5, seed=9)
    raw = tmp_path / "other.tsv"
    datapipe.write_events_tsv(other_log, raw)
    other = tmp_path / "otherds"
    assert cli.main(["prepare", "--input", str(raw), "--out", str(other)]) == 0
    rc = cli.main(
        ["eval", "--data", str(other), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(tmp_path / "e")]
    )
    assert rc == 3
    assert "vocab" in capsys.readouterr().err.lower()


def test_eval_steps_over_schedule_exits_2(ws, tmp_path):
    rc = cli.main(
        ["eval", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(tmp_path / "e"), "--steps", "9"]
    )
    assert rc == 2


def test_recommend_batch_output(ws, tmp_path):
    run = tmp_path / "rec"
    rc = cli.main(
        ["recommend", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(run), "--input", str(ws.hist), "--n", "4", "--steps", "2"]
    )
    assert rc == 0
    lines = (run / "recommendations.tsv").read_text().splitlines()
    assert lines[0] == "user\trank\titem\tscore"
    assert len(lines) == 1 + 3 * 4
    item_names = set(ws.log.item_names)
    hist_by_user = {
        row.split("\t")[0]: set(row.split("\t")[1].split(","))
        for row in ws.hist.read_text().splitlines()
    }
    ranks: dict = {}
    for row in lines[1:]:
        user, rank, item, score = row.split("\t")
        assert item in item_names
        assert item not in hist_by_user[user], "recommended an item from the input history"
        float(score)
        ranks.setdefault(user, []).append(int(rank))
    assert all(r == [1, 2, 3, 4] for r in ranks.values())


def test_recommend_is_deterministic(ws, tmp_path):
    outs = []
    for sub in ("a", "b"):
        run = tmp_path / sub
        assert cli.main(
            ["recommend", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
             "--run-dir", str(run), "--input", str(ws.hist), "--n", "3"]
        ) == 0
        outs.append((run / "recommendations.tsv").read_bytes())
    assert outs[0] == outs[1]


def test_recommend_unknown_item_exits_2(ws, tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("u0\tnot_an_item\n")
    rc = cli.main(
        ["recommend", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(tmp_path / "r"), "--input", str(bad)]
    )
    assert rc == 2
    assert "not_an_item" in capsys.readouterr().err


def test_probe_outputs(ws, tmp_path, capsys):
    run = tmp_path / "probe"
    rc = cli.main(
        ["probe", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt),
         "--run-dir", str(run), "--categories", str(ws.cats), "--diversity-users", "4"]
    )
    assert rc == 0
    payload = json.loads((run / "probe.json").read_text())
    assert payload["n_classes"] == 5
    assert 0.0 <= payload["probe_accuracy"] <= 1.0
    assert 0.0 <= payload["shuffled_control_accuracy"] <= 1.0
    assert payload["diversity_users"] == 4
    assert payload["diversity_mean_categories_top100"] >= 1.0


def test_probe_ml_categories_format(ws, tmp_path):
    ml = tmp_path / "movies.dat"
    rows = [f"{name}::Some Title::c{i % 5}|extra" for i, name in enumerate(ws.log.item_names)]
    ml.write_text("\n".join(rows) + "\n")
    cats = cli.read_categories(ml, fmt="ml")
    assert len(cats) == 50
    assert cats[ws.log.item_names[0]] == ["c0", "extra"]


# ---------------------------------------------------------------------------
# sweep


def test_sweep_sequential_matches_parallel(ws, tmp_path):
    flags = ["--data", str(ws.ds), "--param", "T", "--values", "2,4",
             "--at", "10,20", "--d", "8", "--k", "2", "--epochs", "1",
             "--batch", "32", "--seed", "5"]
    seq = tmp_path / "seq"
    par = tmp_path / "par"
    assert cli.main(["sweep", *flags, "--run-dir", str(seq)]) == 0
    assert cli.main(["sweep", *flags, "--run-dir", str(par), "--parallel", "2"]) == 0
    seq_tsv = (seq / "sweep.tsv").read_bytes()
    assert seq_tsv == (par / "sweep.tsv").read_bytes()
    lines = seq_tsv.decode().splitlines()
    assert len(lines) == 3 and lines[0].startswith("steps\t")
    assert (seq / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_sweep_unknown_param_exits_2(ws, tmp_path):
    rc = cli.main(
        ["sweep", "--data", str(ws.ds), "--run-dir", str(tmp_path / "s"),
         "--param", "bogus", "--values", "1,2"]
    )
    assert rc == 2


# ---------------------------------------------------------------------------
# run-dir resolution


def test_env_var_run_root(ws, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.RUNS_ENV, str(tmp_path / "root"))
    rc = cli.main(
        ["eval", "--data", str(ws.ds), "--checkpoint", str(ws.ckpt), "--at", "10"]
    )
    assert rc == 0
    made = list((tmp_path / "root").iterdir())
    assert len(made) == 1 and "eval" in made[0].name
    assert (made[0] / "report.json").exists()
