"""Parameter containers and initialization.

One shared item-embedding table serves three roles: history encoding,
diffusion target, and softmax output weights. Tables are initialized from
Gaussian(0, 1/sqrt(d)); dense layers use fan-in scaling with zero biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams
from .errors import ConfigError
from .guidance import GuidanceParams
from .numerics import Tensor


@dataclass
class ModelParams:
    item_table: Tensor  # (n_items, d)
    guidance: GuidanceParams | None  # None for the rule-based extractor
    denoiser: DenoiserParams
    d: int
    k: int
    max_len: int

    def named_tensors(self) -> dict[str, Tensor]:
        """Stable name -> tensor mapping; order defines checkpoint layout."""
        out: dict[str, Tensor] = {"item_table": self.item_table}
        if self.guidance is not None:
            out["guidance.positional"] = self.guidance.positional
            out["guidance.w1"] = self.guidance.w1
            out["guidance.b1"] = self.guidance.b1
            out["guidance.w2"] = self.guidance.w2
            out["guidance.b2"] = self.guidance.b2
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            out[f"denoiser.{name}"] = getattr(self.denoiser, name)
        return out

    def groups(self) -> dict[str, list[str]]:
        """Tensor groups as stored in checkpoint manifests."""
        g: dict[str, list[str]] = {"item_table": ["item_table"]}
        if self.guidance is not None:
            g["guidance.positional"] = ["guidance.positional"]
            g["guidance.w1"] = ["guidance.w1"]
            g["guidance.b1"] = ["guidance.b1"]
            g["guidance.w2"] = ["guidance.w2"]
            g["guidance.b2"] = ["guidance.b2"]
        g["denoiser.mlp"] = [f"denoiser.{n}" for n in ("w1", "b1", "w2", "b2", "w3", "b3")]
        return g

    def zero_grads(self) -> None:
        for t in self.named_tensors().values():
            t.zero_grad()


def _dense(rng, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    w = Tensor(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


def init_params(
    n_items: int,
    d: int,
    k: int,
    max_len: int,
    guidance_kind: str = "self_attentive",
    rng=None,
) -> ModelParams:
    if n_items < 1:
        raise ConfigError(f"need at least one item, got {n_items}")
    if d < 2 or d % 2 != 0:
        raise ConfigError(f"embedding width must be even and >= 2, got {d}")
    if k < 1:
        raise ConfigError(f"need at least one interest, got {k}")
    if max_len < 1:
        raise ConfigError(f"max_len must be positive, got {max_len}")
    if guidance_kind not in ("self_attentive", "rule_based"):
        raise ConfigError(f"unknown guidance kind {guidance_kind!r}")
    if rng is None:
        rng = np.random.default_rng(0)

    std = 1.0 / np.sqrt(d)
    item_table = Tensor(rng.standard_normal((n_items, d)) * std, requires_grad=True)

    guidance = None
    if guidance_kind == "self_attentive":
        w1, b1 = _dense(rng, d, 4 * d)
        w2, b2 = _dense(rng, 4 * d, k)
        positional = Tensor(rng.standard_normal((max_len, d)) * std, requires_grad=True)
        guidance = GuidanceParams(w1=w1, b1=b1, w2=w2, b2=b2, positional=positional)

    dw1, db1 = _dense(rng, (2 + k) * d, 4 * d)
    dw2, db2 = _dense(rng, 4 * d, 4 * d)
    dw3, db3 = _dense(rng, 4 * d, d)
    den = DenoiserParams(w1=dw1, b1=db1, w2=dw2, b2=db2, w3=dw3, b3=db3)

    return ModelParams(
        item_table=item_table, guidance=guidance, denoiser=den, d=d, k=k, max_len=max_len
    )
