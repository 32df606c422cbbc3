"""Operator surface: subcommands for the full train/serve/evaluate lifecycle.

Configuration comes from a flat ``key = value`` file (a TOML-compatible
subset) with command-line flags taking precedence. Every run writes its
resolved configuration and all artifacts beneath a run directory, either
--run-dir or a timestamped folder under $SPHEREREC_RUNS (default ./runs).

Exit codes: 0 ok, 2 input error, 3 state mismatch, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import datapipe, evaluation, inference, reporting, trainer
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    StateMismatchError,
    ToolkitError,
)

log = logging.getLogger("sphererec.cli")

RUNS_ENV = "SPHEREREC_RUNS"

# accepted spellings for config keys whose canonical field name differs
_KEY_ALIASES = {"lambda": "lam", "T": "steps"}


# ---------------------------------------------------------------------------
# config files


def parse_scalar(text: str):
    """One config value: quoted string, bool, none, int, float, bare string."""
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in ("'", '"'):
        return t[1:-1]
    low = t.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_config_file(path) -> dict:
    """Flat key = value lines; # starts a comment; later keys win."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    data: dict = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = _KEY_ALIASES.get(key.strip(), key.strip())
        data[key] = parse_scalar(value)
    return data


def write_config(config: trainer.TrainConfig, path) -> None:
    """Resolved config, re-parseable by parse_config_file. None fields are
    omitted so defaults re-resolve identically on reload."""
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if v is None:
            continue
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = f'"{v}"'
        else:
            s = repr(v)
        lines.append(f"{f.name} = {s}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# flag dest -> TrainConfig field
_CONFIG_FLAGS = [
    ("d", "d"),
    ("batch", "batch"),
    ("k", "k"),
    ("lr", "lr"),
    ("negatives", "negatives"),
    ("T", "steps"),
    ("lam", "lam"),
    ("mu", "mu"),
    ("max_len", "max_len"),
    ("beta_start", "beta_start"),
    ("beta_end", "beta_end"),
    ("guidance_kind", "guidance_kind"),
    ("reverse_noise_scale", "reverse_noise_scale"),
    ("serve_mode", "serve_mode"),
    ("seed", "seed"),
    ("epochs", "epochs"),
    ("patience", "patience"),
    ("grad_clip", "grad_clip"),
    ("use_guidance_loss", "use_guidance_loss"),
    ("use_recon_loss", "use_recon_loss"),
    ("use_ssm_loss", "use_ssm_loss"),
    ("use_grw", "use_grw"),
    ("normalize_output", "normalize_output"),
]

_ABLATION_FLAGS = ("use_guidance_loss", "use_recon_loss", "use_ssm_loss", "use_grw")


def add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model/training config (override file and defaults)")
    g.add_argument("--config", help="flat key=value config file")
    g.add_argument("--variant", choices=sorted(trainer.VARIANTS), help="ablation preset")
    g.add_argument("--d", type=int, default=None, help="embedding width")
    g.add_argument("--batch", type=int, default=None)
    g.add_argument("--k", type=int, default=None, help="interests per user")
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--negatives", type=int, default=None)
    g.add_argument("--T", type=int, default=None, help="diffusion steps in the schedule")
    g.add_argument("--lambda", dest="lam", type=float, default=None, help="recon loss weight")
    g.add_argument("--mu", type=float, default=None, help="sampled-softmax loss weight")
    g.add_argument("--max-len", type=int, default=None)
    g.add_argument("--beta-start", type=float, default=None)
    g.add_argument("--beta-end", type=float, default=None)
    g.add_argument("--guidance-kind", choices=("self_attentive", "rule_based"), default=None)
    g.add_argument("--reverse-noise-scale", choices=("stddev", "variance"), default=None)
    g.add_argument("--serve-mode", choices=("auto", "diffusion", "guidance"), default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--patience", type=int, default=None)
    g.add_argument("--grad-clip", type=float, default=None)
    g.add_argument("--use-guidance-loss", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--use-recon-loss", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--use-ssm-loss", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--use-grw", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--normalize-output", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--split", default=None, help="train,valid,test ratios, e.g. 0.8,0.1,0.1")


def resolve_config(args, manifest: dict | None = None) -> trainer.TrainConfig:
    """Defaults < dataset manifest max_len < config file < explicit flags."""
    data: dict = {}
    if manifest and manifest.get("max_len"):
        data["max_len"] = manifest["max_len"]
    if getattr(args, "config", None):
        data.update(parse_config_file(args.config))
    overrides = {
        field: getattr(args, dest)
        for dest, field in _CONFIG_FLAGS
        if getattr(args, dest, None) is not None
    }
    variant = getattr(args, "variant", None)
    if variant:
        clash = sorted(set(overrides) & set(_ABLATION_FLAGS))
        if clash:
            raise ConfigError(
                f"--variant {variant} conflicts with explicit flags {clash}; "
                "set the ablation flags directly or use the preset, not both"
            )
    data.update(overrides)
    config = trainer.TrainConfig.from_dict(data)
    if variant:
        config = trainer.apply_variant(config, variant)
    return config


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated ratios, got {text!r}")
    try:
        return tuple(float(x) for x in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise ConfigError(f"bad split ratios {text!r}: {exc}") from None


def parse_int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} got an empty list")
    return values


# ---------------------------------------------------------------------------
# run directories and dataset layout


def make_run_dir(args, cmd: str) -> Path:
    if getattr(args, "run_dir", None):
        p = Path(args.run_dir)
        p.mkdir(parents=True, exist_ok=True)
        return p
    root = Path(os.environ.get(RUNS_ENV, "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    p = root / f"{stamp}-{cmd}"
    counter = 1
    while p.exists():
        p = root / f"{stamp}-{cmd}-{counter}"
        counter += 1
    p.mkdir(parents=True)
    return p


_DATASET_MANIFEST = "manifest.json"


def write_dataset(log_: datapipe.InteractionLog, dir_path, max_len: int, source: str, fmt: str) -> dict:
    """Normalized dataset directory: events + vocab tables + manifest.

    Events are rewritten sorted by (user, time), so the vocab tables are
    derived from a reload of that file; any later load then reproduces the
    exact same dense id assignment.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    datapipe.write_events_tsv(log_, dir_path / "events.tsv")
    reloaded = datapipe.load_interactions(dir_path / "events.tsv", fmt="tsv")
    datapipe.write_vocab_tsv(reloaded.user_names, dir_path / "user_vocab.tsv")
    datapipe.write_vocab_tsv(reloaded.item_names, dir_path / "item_vocab.tsv")
    manifest = {
        "format_version": 1,
        "source": source,
        "source_format": fmt,
        "n_users": reloaded.n_users,
        "n_items": reloaded.n_items,
        "n_events": reloaded.n_events,
        "max_len": max_len,
        "user_vocab_sha256": datapipe.vocab_hash(reloaded.user_names),
        "item_vocab_sha256": datapipe.vocab_hash(reloaded.item_names),
        "files": {
            "events": "events.tsv",
            "user_vocab": "user_vocab.tsv",
            "item_vocab": "item_vocab.tsv",
        },
    }
    (dir_path / _DATASET_MANIFEST).write_text(json.dumps(manifest, indent=1))
    return manifest


def load_dataset(dir_path) -> tuple[datapipe.InteractionLog, dict]:
    dir_path = Path(dir_path)
    man_path = dir_path / _DATASET_MANIFEST
    if not man_path.exists():
        raise DataError(f"no dataset manifest at {man_path}; run prepare first")
    manifest = json.loads(man_path.read_text())
    log_ = datapipe.load_interactions(dir_path / manifest["files"]["events"], fmt="tsv")
    if datapipe.vocab_hash(log_.item_names) != manifest["item_vocab_sha256"]:
        raise DataError(f"item vocabulary drifted from manifest in {dir_path}")
    return log_, manifest


def read_categories(path, fmt: str = "tsv") -> dict[str, list[str]]:
    """Item category labels: 'item<TAB>cat|cat' or 'id::title::cat|cat'."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"categories file not found: {p}")
    out: dict[str, list[str]] = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8", errors="replace").splitlines(), 1):
        if not raw.strip():
            continue
        if fmt == "tsv":
            parts = raw.split("\t")
            if len(parts) != 2:
                raise DataError(f"{p}:{lineno}: expected 'item<TAB>categories', got {raw!r}")
            name, cats = parts
        elif fmt == "ml":
            parts = raw.split("::")
            if len(parts) != 3:
                raise DataError(f"{p}:{lineno}: expected 'id::title::genres', got {raw!r}")
            name, _, cats = parts
        else:
            raise ConfigError(f"unknown categories format {fmt!r}")
        out[name] = [c for c in cats.split("|") if c]
    if not out:
        raise DataError(f"no category rows in {p}")
    return out


def _load_checkpoint_for(data_dir, checkpoint_dir) -> tuple:
    """Checkpoint + dataset pair with the vocab identity enforced."""
    log_, manifest = load_dataset(data_dir)
    ckpt = trainer.load_checkpoint(checkpoint_dir)
    trainer.require_vocab_match(ckpt, manifest["item_vocab_sha256"])
    return log_, manifest, ckpt


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    log_ = datapipe.load_interactions(args.input, fmt=args.format)
    manifest = write_dataset(log_, args.out, args.max_len, source=str(args.input), fmt=args.format)
    print(
        f"prepared {manifest['n_events']} events, {manifest['n_users']} users, "
        f"{manifest['n_items']} items -> {args.out}"
    )
    return 0


def _split_for(args, log_, config, meta: dict | None = None):
    if getattr(args, "split", None):
        ratios = parse_ratios(args.split)
    elif meta and meta.get("split"):
        ratios = tuple(meta["split"])
    else:
        ratios = (0.8, 0.1, 0.1)
    return datapipe.split_users(log_, ratios=ratios, seed=config.seed), ratios


def cmd_train(args) -> int:
    log_, manifest = load_dataset(args.data)
    config = resolve_config(args, manifest)
    run_dir = make_run_dir(args, "train")
    write_config(config, run_dir / "config.txt")
    split, ratios = _split_for(args, log_, config)

    result = trainer.fit(
        log_, split, config, log_path=run_dir / "train_log.jsonl", quiet=not args.verbose
    )

    ckpt = trainer.Checkpoint(
        params=result.params,
        config=config,
        schedule=result.schedule,
        vocab_hash=manifest["item_vocab_sha256"],
        meta={
            "dataset": str(args.data),
            "split": list(ratios),
            "best_epoch": result.best_epoch,
            "best_valid_recall@20": result.best_metric,
            "stopped_early": result.stopped_early,
        },
    )
    ckpt_dir = trainer.save_checkpoint(ckpt, run_dir / "checkpoint")
    reporting.write_loss_csv(result.history, run_dir / "loss.csv")
    reporting.render_loss_curves(result.history, run_dir / "loss_curves.png")
    (run_dir / "epoch_stats.json").write_text(json.dumps(result.epoch_stats, indent=1))
    print(
        f"trained {len(result.epoch_stats)} epochs; "
        f"best valid recall@20 {result.best_metric:.4f} at epoch {result.best_epoch}; "
        f"checkpoint {ckpt_dir}"
    )
    return 0


def cmd_eval(args) -> int:
    log_, manifest, ckpt = _load_checkpoint_for(args.data, args.checkpoint)
    config = ckpt.config
    run_dir = make_run_dir(args, "eval")
    write_config(config, run_dir / "config.txt")
    split, _ = _split_for(args, log_, config, ckpt.meta)
    users = split.valid_users if args.on == "valid" else split.test_users
    instances, dropped = datapipe.make_eval_instances(log_, users, config.max_len)
    at = parse_int_list(args.at, "--at")

    if args.repeats > 1:
        runs, summary = evaluation.evaluate_repeated(
            ckpt.params, config, ckpt.schedule, instances,
            at=at, repeats=args.repeats, seed=config.seed, steps=args.steps,
        )
        metrics: dict = dict(summary)
        metrics["n_users"] = runs[0]["n_users"]
        per_user: list = []
        repeats_info = {"n": args.repeats, "runs": runs}
        flat = {k: v["mean"] for k, v in summary.items()}
        flat["n_users"] = metrics["n_users"]
    else:
        metrics, per_user = evaluation.evaluate(
            ckpt.params, config, ckpt.schedule, instances,
            at=at, rng=np.random.default_rng(config.seed), steps=args.steps, per_user=True,
        )
        repeats_info = {}
        flat = metrics

    report = evaluation.EvalReport(
        metrics=metrics,
        per_user=per_user,
        config_snapshot=config.to_dict(),
        checkpoint=str(args.checkpoint),
        vocab_hash=manifest["item_vocab_sha256"],
        repeats=repeats_info,
    )
    report.to_json(run_dir / "report.json")
    if per_user:
        report.write_per_user_tsv(run_dir / "per_user.tsv")
    reporting.render_eval_metrics(flat, run_dir / "metrics.png")
    if dropped:
        log.info("dropped %d users below the event threshold", dropped)
    print(json.dumps(flat, sort_keys=True))
    print(f"report -> {run_dir / 'report.json'}")
    return 0


def cmd_recommend(args) -> int:
    log_, manifest, ckpt = _load_checkpoint_for(args.data, args.checkpoint)
    config = ckpt.config
    run_dir = make_run_dir(args, "recommend")
    item_id = {name: i for i, name in enumerate(log_.item_names)}

    in_path = Path(args.input)
    if not in_path.exists():
        raise DataError(f"input file not found: {in_path}")
    rows = []
    for lineno, raw in enumerate(in_path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise DataError(f"{in_path}:{lineno}: expected 'user<TAB>item,item,...', got {raw!r}")
        user, items_text = parts
        history = []
        for name in items_text.split(","):
            name = name.strip()
            if name not in item_id:
                raise DataError(f"{in_path}:{lineno}: unknown item {name!r}")
            history.append(item_id[name])
        if not history:
            raise DataError(f"{in_path}:{lineno}: empty history for user {user!r}")
        rows.append((user, history))
    if not rows:
        raise DataError(f"no histories in {in_path}")

    index = inference.build_index(ckpt.params.item_table)
    out_path = run_dir / "recommendations.tsv"
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("user\trank\titem\tscore\n")
        for row_idx, (user, history) in enumerate(rows):
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, row_idx]))
            ids, scores = inference.recommend(
                history, ckpt.params, ckpt.schedule, config, index, args.n, rng,
                steps=args.steps,
            )
            for rank, (item, score) in enumerate(zip(ids, scores), start=1):
                fh.write(f"{user}\t{rank}\t{log_.item_names[int(item)]}\t{score:.6f}\n")
    print(f"wrote top-{args.n} for {len(rows)} users -> {out_path}")
    return 0


def cmd_probe(args) -> int:
    log_, manifest, ckpt = _load_checkpoint_for(args.data, args.checkpoint)
    config = ckpt.config
    run_dir = make_run_dir(args, "probe")
    categories = read_categories(args.categories, fmt=args.categories_format)

    by_id = {
        i: categories[name] for i, name in enumerate(log_.item_names) if name in categories
    }
    labels = [by_id[i][0] if i in by_id and by_id[i] else None for i in range(log_.n_items)]
    probe = evaluation.linear_probe(ckpt.params.item_table.data, labels, seed=config.seed)

    rng = np.random.default_rng(config.seed)
    shuffled = list(labels)
    rng.shuffle(shuffled)
    control = evaluation.linear_probe(ckpt.params.item_table.data, shuffled, seed=config.seed)

    split, _ = _split_for(args, log_, config, ckpt.meta)
    instances, _ = datapipe.make_eval_instances(log_, split.test_users, config.max_len)
    instances = instances[: args.diversity_users]
    diversity = None
    skipped = 0
    if instances:
        index = inference.build_index(ckpt.params.item_table)
        top_n = min(100, index.size)
        rec_lists = []
        for i, inst in enumerate(instances):
            gen = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
            ids, _ = inference.recommend(
                inst.history, ckpt.params, ckpt.schedule, config, index,
                min(top_n, index.size - len(set(inst.history))), gen,
            )
            rec_lists.append([int(x) for x in ids])
        diversity, skipped = evaluation.category_diversity(rec_lists, by_id)

    payload = {
        "probe_accuracy": probe.accuracy,
        "n_classes": probe.n_classes,
        "n_train": probe.n_train,
        "n_test": probe.n_test,
        "unlabeled_items": probe.skipped,
        "shuffled_control_accuracy": control.accuracy,
        "diversity_mean_categories_top100": diversity,
        "diversity_unlabeled_recommendations": skipped,
        "diversity_users": len(instances),
    }
    (run_dir / "probe.json").write_text(json.dumps(payload, indent=1))
    print(json.dumps(payload, sort_keys=True))
    print(f"probe -> {run_dir / 'probe.json'}")
    return 0


def _sweep_point(data_dir: str, config_data: dict, at: tuple, ratios: tuple) -> dict:
    """One grid point, self-contained so it can run in a worker process."""
    log_, _ = load_dataset(data_dir)
    config = trainer.TrainConfig.from_dict(config_data)
    split = datapipe.split_users(log_, ratios=ratios, seed=config.seed)
    result = trainer.fit(log_, split, config)
    instances, _ = datapipe.make_eval_instances(log_, split.test_users, config.max_len)
    metrics = evaluation.evaluate(
        result.params, config, result.schedule, instances,
        at=at, rng=np.random.default_rng(config.seed),
    )
    metrics["best_epoch"] = result.best_epoch
    return metrics


def cmd_sweep(args) -> int:
    log_, manifest = load_dataset(args.data)
    base = resolve_config(args, manifest)
    run_dir = make_run_dir(args, "sweep")
    write_config(base, run_dir / "config.txt")

    param = _KEY_ALIASES.get(args.param, args.param)
    known = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    if param not in known:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    values = [parse_scalar(v) for v in args.values.split(",")]
    if not values:
        raise ConfigError("--values got an empty list")
    at = parse_int_list(args.at, "--at")
    _, ratios = _split_for(args, log_, base)

    configs = []
    for v in values:
        cfg = trainer.TrainConfig.from_dict({**base.to_dict(), param: v})
        configs.append(cfg.to_dict())

    if args.parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(
                pool.map(
                    _sweep_point,
                    [str(args.data)] * len(values),
                    configs,
                    [at] * len(values),
                    [ratios] * len(values),
                )
            )
    else:
        results = [_sweep_point(str(args.data), c, at, ratios) for c in configs]

    rows = [{param: v, **m} for v, m in zip(values, results)]
    reporting.write_sweep_tsv(param, rows, run_dir / "sweep.tsv")
    metric = args.metric or f"recall@{at[min(1, len(at) - 1)]}"
    if metric not in rows[0]:
        raise ConfigError(f"--metric {metric!r} not among {sorted(rows[0])}")
    reporting.render_sweep(param, rows, metric, run_dir / "sweep.png")
    for row in rows:
        print(f"{param}={row[param]}\t{metric}={row[metric]:.4f}")
    print(f"sweep -> {run_dir / 'sweep.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sphererec",
        description="Sequence recommendation with diffusion-generated interest embeddings.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("prepare", help="normalize raw interactions into a dataset directory")
    p.add_argument("--input", required=True, help="raw interaction file")
    p.add_argument("--format", choices=("tsv", "ml"), default="tsv")
    p.add_argument("--max-len", type=int, default=20, help="history window recorded for training")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--run-dir", default=None)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ranking metrics on held-out users")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--at", default="10,20,50", help="cutoffs, comma separated")
    p.add_argument("--steps", type=int, default=None, help="reverse steps (default: full schedule)")
    p.add_argument("--repeats", type=int, default=1, help="generation repeats for mean/std")
    p.add_argument("--on", choices=("test", "valid"), default="test")
    p.add_argument("--split", default=None, help="override split ratios")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="batch top-n from a TSV of histories")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--input", required=True, help="TSV: user<TAB>item,item,...")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("probe", help="linear probe and category diversity of item embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--categories", required=True, help="item category labels")
    p.add_argument("--categories-format", choices=("tsv", "ml"), default="tsv")
    p.add_argument("--diversity-users", type=int, default=200)
    p.add_argument("--split", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="train/eval across a parameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--param", required=True, help="config field to vary (T, lambda, d, ...)")
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--at", default="10,20,50")
    p.add_argument("--metric", default=None, help="metric column to plot (default recall@20)")
    p.add_argument("--parallel", type=int, default=1, help="grid points run in N processes")
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StateMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
