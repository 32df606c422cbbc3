"""Joint training of the guidance extractor and the denoiser.

One optimizer step follows the training algorithm exactly: extract guidance,
draw one step index per sample, normalize the target onto the sphere, noise
it with the geodesic random walk (or flat-space noising when disabled),
denoise, combine the enabled losses, and apply Adam after global-norm
clipping. Disabled losses contribute exactly zero and build no graph.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datapipe, denoiser, diffusion, guidance, model
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DivergenceError,
    StateMismatchError,
)
from .numerics import Tape, Tensor, backward, ops

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    d: int = 64
    batch: int = 256
    k: int = 4
    lr: float = 0.005
    negatives: int = 10
    steps: int = 20  # diffusion steps T
    lam: float = 0.1  # weight of the reconstruction loss
    mu: float = 1.0  # weight of the sampled-softmax loss
    max_len: int = 20
    schedule_kind: str = "linear"
    beta_start: float | None = None
    beta_end: float | None = None
    use_guidance_loss: bool = True
    use_recon_loss: bool = True
    use_ssm_loss: bool = True
    use_grw: bool = True
    guidance_kind: str = "self_attentive"
    normalize_output: bool | None = None  # None: follow use_grw
    reverse_noise_scale: str = "stddev"
    serve_mode: str = "auto"  # auto | diffusion | guidance
    seed: int = 0
    epochs: int = 50
    patience: int = 5
    grad_clip: float = 5.0
    divergence_limit: float = 1e6

    def validate(self) -> None:
        positive = {
            "d": self.d,
            "batch": self.batch,
            "k": self.k,
            "lr": self.lr,
            "negatives": self.negatives,
            "steps": self.steps,
            "max_len": self.max_len,
            "epochs": self.epochs,
            "patience": self.patience,
            "grad_clip": self.grad_clip,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.d % 2 != 0:
            raise ConfigError(f"d must be even for the step embedding, got {self.d}")
        if self.lam < 0 or self.mu < 0:
            raise ConfigError(f"loss weights must be >= 0, got lambda={self.lam}, mu={self.mu}")
        if self.guidance_kind not in ("self_attentive", "rule_based"):
            raise ConfigError(f"unknown guidance_kind {self.guidance_kind!r}")
        if self.reverse_noise_scale not in ("stddev", "variance"):
            raise ConfigError(f"unknown reverse_noise_scale {self.reverse_noise_scale!r}")
        if self.serve_mode not in ("auto", "diffusion", "guidance"):
            raise ConfigError(f"unknown serve_mode {self.serve_mode!r}")
        for flag in ("use_guidance_loss", "use_recon_loss", "use_ssm_loss", "use_grw"):
            if not isinstance(getattr(self, flag), bool):
                raise ConfigError(f"{flag} must be boolean")

    # -- derived views ------------------------------------------------------

    def normalize_resolved(self) -> bool:
        return self.use_grw if self.normalize_output is None else self.normalize_output

    def serve_mode_resolved(self) -> str:
        if self.serve_mode != "auto":
            return self.serve_mode
        return "diffusion" if (self.use_recon_loss or self.use_ssm_loss) else "guidance"

    def build_schedule(self) -> diffusion.NoiseSchedule:
        return diffusion.build_schedule(
            kind=self.schedule_kind,
            steps=self.steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


# the four ablation presets; "full" keeps everything on
VARIANTS: dict[str, dict[str, bool]] = {
    "full": dict(use_guidance_loss=True, use_recon_loss=True, use_ssm_loss=True, use_grw=True),
    "v1": dict(use_guidance_loss=False, use_recon_loss=True, use_ssm_loss=True, use_grw=True),
    "v2": dict(use_guidance_loss=False, use_recon_loss=False, use_ssm_loss=True, use_grw=True),
    "v3": dict(use_guidance_loss=False, use_recon_loss=False, use_ssm_loss=True, use_grw=False),
    "v4": dict(use_guidance_loss=False, use_recon_loss=True, use_ssm_loss=False, use_grw=True),
}


def apply_variant(config: TrainConfig, name: str) -> TrainConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}, expected one of {sorted(VARIANTS)}")
    return dataclasses.replace(config, **VARIANTS[name])


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).

    Tensors whose grad is None are skipped entirely, so a zero-gradient step
    leaves both the parameter and its state untouched.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, named: dict[str, Tensor]) -> None:
        for name, tensor in named.items():
            g = tensor.grad
            if g is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(tensor.data)
                self._t[name] = 0
            v = self._v[name]
            self._t[name] += 1
            t = self._t[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(named: dict[str, Tensor], max_norm: float) -> tuple[float, bool]:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for t in named.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    clipped = norm > max_norm
    if clipped:
        factor = max_norm / norm
        for t in named.values():
            if t.grad is not None:
                t.grad *= factor
    return norm, clipped


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    ids: np.ndarray  # (B, N) right-padded item ids
    mask: np.ndarray  # (B, N) 1.0 at real positions
    targets: np.ndarray  # (B,)
    negatives: np.ndarray  # (B, k)
    histories: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(samples: list[datapipe.SequenceSample]) -> Batch:
    if not samples:
        raise ContractError("empty batch")
    n = max(len(s.history) for s in samples)
    b = len(samples)
    ids = np.zeros((b, n), dtype=np.int64)
    mask = np.zeros((b, n))
    for row, s in enumerate(samples):
        ids[row, : len(s.history)] = s.history
        mask[row, : len(s.history)] = 1.0
    targets = np.array([s.target for s in samples], dtype=np.int64)
    negatives = np.array([s.negatives for s in samples], dtype=np.int64)
    return Batch(
        ids=ids,
        mask=mask,
        targets=targets,
        negatives=negatives,
        histories=tuple(s.history for s in samples),
    )


# ---------------------------------------------------------------------------
# loss computation


def _zero_scalar() -> Tensor:
    return Tensor(np.zeros(()))


def extract_guidance(params: model.ModelParams, batch: Batch, config: TrainConfig) -> Tensor:
    """Batched K-interest extraction; returns (B, K, d)."""
    if config.guidance_kind == "self_attentive":
        h = ops.mul(
            ops.embedding_lookup(params.item_table, batch.ids),
            Tensor(batch.mask[:, :, None]),
        )
        return guidance.self_attentive_guidance(h, params.guidance, mask=batch.mask).g
    return guidance.rule_based_guidance_batch(batch.histories, config.k, params.item_table).g


def compute_losses(
    params: model.ModelParams,
    batch: Batch,
    config: TrainConfig,
    schedule: diffusion.NoiseSchedule,
    t: np.ndarray,
    eps: np.ndarray,
) -> tuple[Tensor, dict[str, Tensor], dict[str, float]]:
    """All enabled losses for one batch, deterministic given (t, eps).

    Returns (total, components, diagnostics). Components that are disabled
    are constant zeros detached from the graph.
    """
    g_seq = extract_guidance(params, batch, config)
    e_target = ops.embedding_lookup(params.item_table, batch.targets)
    e_negs = ops.embedding_lookup(params.item_table, batch.negatives)

    l_guidance = _zero_scalar()
    if config.use_guidance_loss:
        selected, _ = guidance.select_guidance(g_seq, e_target)
        l_guidance = guidance.guidance_loss(selected, e_target, e_negs)

    l_recon = _zero_scalar()
    l_ssm = _zero_scalar()
    diag: dict[str, float] = {}
    if config.use_recon_loss or config.use_ssm_loss:
        if config.use_grw:
            x0 = ops.l2_normalize(e_target)
            x_t = diffusion.grw_forward(x0, t, schedule, eps=eps).x
        else:
            x0 = e_target
            x_t = diffusion.euclidean_forward(x0, t, schedule, eps=eps).x
        out = denoiser.denoise(
            x_t, t, g_seq, params.denoiser, normalize=config.normalize_resolved()
        )
        if config.use_recon_loss:
            l_recon = denoiser.recon_loss(out.x0_hat, x0)
            # |a-b|^2 = 2 - 2 a.b holds iff both rows are unit; the worst
            # per-row gap makes the spherical/euclidean contrast observable
            dot = (out.x0_hat.data * x0.data).sum(axis=-1)
            sq = ((out.x0_hat.data - x0.data) ** 2).sum(axis=-1)
            diag["identity_gap"] = float(np.abs(sq - (2.0 - 2.0 * dot)).max())
        if config.use_ssm_loss:
            l_ssm = denoiser.ssm_loss(out.x0_hat, e_target, e_negs)

    total = denoiser.total_loss(l_guidance, l_recon, l_ssm, config.lam, config.mu)
    parts = {"l_guidance": l_guidance, "l_recon": l_recon, "l_ssm": l_ssm}
    return total, parts, diag


def train_step(
    batch: Batch,
    params: model.ModelParams,
    config: TrainConfig,
    schedule: diffusion.NoiseSchedule,
    rng,
    opt: Adam,
) -> dict[str, float]:
    """One optimization step; returns the per-loss record for the log."""
    any_loss = config.use_guidance_loss or config.use_recon_loss or config.use_ssm_loss
    t = rng.integers(1, schedule.steps + 1, size=batch.size)
    eps = rng.standard_normal((batch.size, params.d))

    if not any_loss:
        return {
            "l_guidance": 0.0,
            "l_recon": 0.0,
            "l_ssm": 0.0,
            "total": 0.0,
            "grad_norm": 0.0,
            "clipped": 0.0,
        }

    named = params.named_tensors()
    with Tape():
        total, parts, diag = compute_losses(params, batch, config, schedule, t, eps)
        values = {name: float(p.data) for name, p in parts.items()}
        total_value = float(total.data)
        if not np.isfinite(total_value) or total_value > config.divergence_limit:
            raise DivergenceError(
                "loss diverged: total={:.6g} (guidance={:.6g}, recon={:.6g}, ssm={:.6g})".format(
                    total_value, values["l_guidance"], values["l_recon"], values["l_ssm"]
                )
            )
        backward(total)

    norm, clipped = clip_global_norm(named, config.grad_clip)
    if clipped:
        log.debug("gradient norm %.3f clipped to %.3f", norm, config.grad_clip)
    opt.step(named)
    params.zero_grads()

    record = dict(values)
    record["total"] = total_value
    record["grad_norm"] = norm
    record["clipped"] = float(clipped)
    record.update(diag)
    return record


# ---------------------------------------------------------------------------
# fit loop


@dataclass
class FitResult:
    params: model.ModelParams
    config: TrainConfig
    schedule: diffusion.NoiseSchedule
    history: list[dict]
    epoch_stats: list[dict]
    best_metric: float
    best_epoch: int
    stopped_early: bool


def _snapshot(params: model.ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.named_tensors().items()}


def _restore(params: model.ModelParams, snap: dict[str, np.ndarray]) -> None:
    for name, t in params.named_tensors().items():
        t.data = snap[name].copy()


def fit(
    log_: datapipe.InteractionLog,
    split: datapipe.DatasetSplit,
    config: TrainConfig,
    log_path=None,
    quiet: bool = True,
) -> FitResult:
    """Epoch loop with per-epoch validation Recall@20 early stopping."""
    from . import evaluation  # deferred: evaluation imports inference

    config.validate()
    schedule = config.build_schedule()
    root = np.random.SeedSequence(config.seed)
    init_seed, sample_seed, step_seed, val_seed = root.spawn(4)
    params = model.init_params(
        log_.n_items,
        config.d,
        config.k,
        config.max_len,
        guidance_kind=config.guidance_kind,
        rng=np.random.default_rng(init_seed),
    )
    opt = Adam(config.lr)
    step_rng = np.random.default_rng(step_seed)
    sample_rng = np.random.default_rng(sample_seed)

    valid_instances, dropped = datapipe.make_eval_instances(
        log_, split.valid_users, config.max_len
    )
    if dropped and not quiet:
        log.info("validation: dropped %d users below the event threshold", dropped)

    history: list[dict] = []
    epoch_stats: list[dict] = []
    best_metric = -1.0
    best_epoch = -1
    best_snap = _snapshot(params)
    bad_evals = 0
    stopped_early = False
    step_idx = 0

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            samples = datapipe.make_training_samples(
                log_, split.train_users, config.max_len, config.negatives, rng=sample_rng
            )
            order = step_rng.permutation(len(samples))
            sums: dict[str, float] = {}
            count = 0
            for start in range(0, len(order), config.batch):
                chunk = [samples[i] for i in order[start : start + config.batch]]
                batch = collate(chunk)
                record = train_step(batch, params, config, schedule, step_rng, opt)
                record["step"] = step_idx
                record["epoch"] = epoch
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                for key in ("l_guidance", "l_recon", "l_ssm", "total"):
                    sums[key] = sums.get(key, 0.0) + record[key]
                count += 1
                step_idx += 1

            stats = {f"mean_{k}": v / max(count, 1) for k, v in sums.items()}
            stats["epoch"] = epoch
            if valid_instances:
                metrics = evaluation.evaluate(
                    params,
                    config,
                    schedule,
                    valid_instances,
                    at=(20,),
                    rng=np.random.default_rng(val_seed.spawn(1)[0]),
                )
                stats["valid_recall@20"] = metrics["recall@20"]
                if metrics["recall@20"] > best_metric:
                    best_metric = metrics["recall@20"]
                    best_epoch = epoch
                    best_snap = _snapshot(params)
                    bad_evals = 0
                else:
                    bad_evals += 1
            epoch_stats.append(stats)
            if not quiet:
                log.info("epoch %d: %s", epoch, stats)
            if valid_instances and bad_evals >= config.patience:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()

    if valid_instances:
        _restore(params, best_snap)
    else:
        best_epoch = config.epochs - 1
    return FitResult(
        params=params,
        config=config,
        schedule=schedule,
        history=history,
        epoch_stats=epoch_stats,
        best_metric=best_metric,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
    )


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: model.ModelParams
    config: TrainConfig
    schedule: diffusion.NoiseSchedule
    vocab_hash: str | None = None
    meta: dict = field(default_factory=dict)


_MANIFEST = "manifest.json"
_PAYLOAD = "payload.bin"


def save_checkpoint(ckpt: Checkpoint, dir_path) -> Path:
    """Write manifest.json + payload.bin (contiguous little-endian fp32)."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    named = ckpt.params.named_tensors()
    entries = []
    offset = 0
    blobs = []
    for name, tensor in named.items():
        blob = tensor.data.astype("<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "<f4",
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": 1,
        "tensors": entries,
        "groups": ckpt.params.groups(),
        "config": ckpt.config.to_dict(),
        "schedule": ckpt.schedule.spec_dict(),
        "vocab_hash": ckpt.vocab_hash,
        "n_items": ckpt.params.item_table.shape[0],
        "meta": ckpt.meta,
    }
    (dir_path / _MANIFEST).write_text(json.dumps(manifest, indent=1))
    (dir_path / _PAYLOAD).write_bytes(b"".join(blobs))
    return dir_path


def load_checkpoint(dir_path, expected_vocab_hash: str | None = None) -> Checkpoint:
    """Rebuild params/config/schedule; errors name the offending tensor."""
    dir_path = Path(dir_path)
    mf_path = dir_path / _MANIFEST
    if not mf_path.exists():
        raise CheckpointError(f"no {_MANIFEST} under {dir_path}")
    try:
        manifest = json.loads(mf_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != 1:
        raise CheckpointError(f"unsupported format_version {manifest.get('format_version')}")

    config = TrainConfig.from_dict(manifest["config"])
    sched_spec = manifest["schedule"]
    if sched_spec["kind"] != "linear":
        raise CheckpointError(f"cannot rebuild schedule kind {sched_spec['kind']!r}")
    schedule = diffusion.build_schedule(
        kind=sched_spec["kind"],
        steps=sched_spec["steps"],
        beta_start=sched_spec["beta_start"],
        beta_end=sched_spec["beta_end"],
    )

    payload = (dir_path / _PAYLOAD).read_bytes()
    tensors: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        want = int(np.prod(shape)) * 4 if shape else 4
        if entry["nbytes"] != want:
            raise CheckpointError(f"tensor {name}: manifest nbytes disagree with shape")
        stop = entry["offset"] + entry["nbytes"]
        if stop > len(payload):
            raise CheckpointError(f"tensor {name}: payload truncated at {len(payload)} bytes")
        arr = np.frombuffer(payload[entry["offset"] : stop], dtype="<f4").reshape(shape)
        tensors[name] = Tensor(arr.astype(np.float64), requires_grad=True)

    params = _params_from_tensors(tensors, manifest["n_items"], config)
    if expected_vocab_hash is not None and manifest.get("vocab_hash") != expected_vocab_hash:
        log.warning(
            "checkpoint vocab hash %s does not match expected %s",
            manifest.get("vocab_hash"),
            expected_vocab_hash,
        )
    return Checkpoint(
        params=params,
        config=config,
        schedule=schedule,
        vocab_hash=manifest.get("vocab_hash"),
        meta=manifest.get("meta", {}),
    )


def require_vocab_match(ckpt: Checkpoint, vocab_hash: str) -> None:
    if ckpt.vocab_hash is not None and ckpt.vocab_hash != vocab_hash:
        raise StateMismatchError(
            f"checkpoint was trained against vocabulary {ckpt.vocab_hash[:12]}..., "
            f"dataset has {vocab_hash[:12]}..."
        )


def _params_from_tensors(
    tensors: dict[str, Tensor], n_items: int, config: TrainConfig
) -> model.ModelParams:
    from .denoiser import DenoiserParams
    from .guidance import GuidanceParams

    def need(name: str) -> Tensor:
        if name not in tensors:
            raise CheckpointError(f"tensor {name} missing from manifest")
        return tensors[name]

    item_table = need("item_table")
    if item_table.shape[0] != n_items:
        raise CheckpointError(
            f"tensor item_table: {item_table.shape[0]} rows but manifest says {n_items}"
        )
    gp = None
    if config.guidance_kind == "self_attentive":
        gp = GuidanceParams(
            w1=need("guidance.w1"),
            b1=need("guidance.b1"),
            w2=need("guidance.w2"),
            b2=need("guidance.b2"),
            positional=need("guidance.positional"),
        )
    dp = DenoiserParams(
        w1=need("denoiser.w1"),
        b1=need("denoiser.b1"),
        w2=need("denoiser.w2"),
        b2=need("denoiser.b2"),
        w3=need("denoiser.w3"),
        b3=need("denoiser.b3"),
    )
    return model.ModelParams(
        item_table=item_table,
        guidance=gp,
        denoiser=dp,
        d=config.d,
        k=config.k,
        max_len=config.max_len,
    )
