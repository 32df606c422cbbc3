"""Noise schedule, forward noising (flat and spherical), and the reverse step.

Steps are numbered 1..T. Internally arrays are indexed t-1; alpha_bar_at(0)
is defined as 1 so the step-1 posterior collapses onto the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Tensor
from .numerics import ops

DEFAULT_STEPS = 20

# reference schedule endpoints for 1000 steps, rescaled to shorter schedules
_BETA_START_1000 = 1e-4
_BETA_END_1000 = 0.02
_BETA_CAP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha-bar / posterior-variance tables."""

    kind: str
    beta_start: float
    beta_end: float
    steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise ConfigError("step index t must be integer")
        if (t < 1).any() or (t > self.steps).any():
            raise IndexError(f"step {t} outside 1..{self.steps}")
        return t

    def beta_at(self, t) -> np.ndarray:
        return self.beta[self._check_t(t) - 1]

    def alpha_bar_at(self, t) -> np.ndarray:
        """Cumulative product of (1 - beta) through step t; t=0 gives 1."""
        t = np.asarray(t)
        if (t < 0).any() or (t > self.steps).any():
            raise IndexError(f"step {t} outside 0..{self.steps}")
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t]

    def beta_tilde_at(self, t) -> np.ndarray:
        return self.beta_tilde[self._check_t(t) - 1]

    def spec_dict(self) -> dict:
        return {
            "kind": self.kind,
            "steps": self.steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


def schedule_from_betas(beta, kind: str = "custom") -> NoiseSchedule:
    """Build the derived tables from an explicit beta sequence."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size < 1:
        raise ConfigError("beta sequence must be a non-empty vector")
    if (beta < 0).any() or (beta >= 1).any():
        raise ConfigError("beta values must lie in [0, 1)")
    alpha_bar = np.cumprod(1.0 - beta)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    denom = 1.0 - alpha_bar
    # all-zero prefixes give 0/0; the posterior variance there is 0
    beta_tilde = np.divide(
        (1.0 - prev) * beta, denom, out=np.zeros_like(beta), where=denom > 0
    )
    return NoiseSchedule(
        kind=kind,
        beta_start=float(beta[0]),
        beta_end=float(beta[-1]),
        steps=int(beta.size),
        beta=beta,
        alpha_bar=alpha_bar,
        beta_tilde=beta_tilde,
    )


def build_schedule(
    kind: str = "linear",
    steps: int = DEFAULT_STEPS,
    beta_start: float | None = None,
    beta_end: float | None = None,
) -> NoiseSchedule:
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    if steps < 1:
        raise ConfigError(f"schedule needs at least one step, got {steps}")
    scale = 1000.0 / steps
    if beta_start is None:
        beta_start = min(_BETA_START_1000 * scale, _BETA_CAP)
    if beta_end is None:
        beta_end = min(_BETA_END_1000 * scale, _BETA_CAP)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, steps)
    sched = schedule_from_betas(beta, kind=kind)
    return NoiseSchedule(
        kind=kind,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        steps=steps,
        beta=sched.beta,
        alpha_bar=sched.alpha_bar,
        beta_tilde=sched.beta_tilde,
    )


@dataclass
class NoisedState:
    """Noised sample plus where it lives (sphere or flat space)."""

    x: Tensor
    t: np.ndarray
    on_sphere: bool


def _col(values, ndim: int) -> np.ndarray:
    """Shape per-sample scalars so they broadcast over the feature axis."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return arr
    return arr.reshape(arr.shape + (1,) * (ndim - arr.ndim))


def _draw_eps(rng, eps, shape) -> np.ndarray:
    if eps is not None:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != shape:
            raise ConfigError(f"noise shape {eps.shape} does not match {shape}")
        return eps
    if rng is None:
        raise ConfigError("either rng or eps must be provided")
    return rng.standard_normal(shape)


def euclidean_forward(x0: Tensor, t, schedule: NoiseSchedule, rng=None, eps=None) -> NoisedState:
    """Flat-space forward noising: sqrt(ab) x0 + sqrt(1-ab) eps."""
    ab = _col(schedule.alpha_bar_at(t), x0.ndim)
    eps = _draw_eps(rng, eps, x0.shape)
    scaled = ops.mul(x0, Tensor(np.sqrt(ab)))
    noised = ops.add(scaled, Tensor(np.sqrt(1.0 - ab) * eps))
    return NoisedState(x=noised, t=np.asarray(t), on_sphere=False)


def grw_forward(x0_raw: Tensor, t, schedule: NoiseSchedule, rng=None, eps=None) -> NoisedState:
    """Geodesic random walk: one exponential-map jump with schedule-scaled
    tangent noise from the normalized start point."""
    x0u = ops.l2_normalize(x0_raw)
    eps = _draw_eps(rng, eps, x0u.shape)
    tangent = ops.tangent_project(Tensor(eps), x0u)
    ab = _col(schedule.alpha_bar_at(t), x0u.ndim)
    v = ops.mul(tangent, Tensor(np.sqrt(1.0 - ab)))
    noised = ops.exp_map(x0u, v)
    return NoisedState(x=noised, t=np.asarray(t), on_sphere=True)


def posterior_coefficients(t, schedule: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """(coefficient of x_t, coefficient of x0) in the posterior mean."""
    t = np.asarray(t)
    beta = schedule.beta_at(t)
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    c_xt = np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t)
    c_x0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    return c_xt, c_x0


def posterior_mean(x_t: Tensor, x0: Tensor, t, schedule: NoiseSchedule) -> Tensor:
    """Mean of q(x_{t-1} | x_t, x0). At t=1 this is exactly x0."""
    c_xt, c_x0 = posterior_coefficients(t, schedule)
    a = ops.mul(x_t, Tensor(_col(c_xt, x_t.ndim)))
    b = ops.mul(x0, Tensor(_col(c_x0, x0.ndim)))
    return ops.add(a, b)


def reverse_step(
    x_t: Tensor,
    x0_hat: Tensor,
    t,
    schedule: NoiseSchedule,
    rng=None,
    eps=None,
    spherical: bool = True,
    noise_scale: str = "stddev",
) -> Tensor:
    """One denoising step: posterior mean plus scaled noise, then (on the
    sphere) projection back to unit norm.

    noise_scale selects the multiplier on eps: "stddev" uses sqrt(beta_tilde),
    "variance" uses beta_tilde itself (the literal reading of the serving
    algorithm). At t=1 beta_tilde is 0 and the step is deterministic either
    way.
    """
    if noise_scale not in ("stddev", "variance"):
        raise ConfigError(f"unknown noise_scale {noise_scale!r}")
    mu = posterior_mean(x_t, x0_hat, t, schedule)
    bt = _col(schedule.beta_tilde_at(t), x_t.ndim)
    mult = np.sqrt(bt) if noise_scale == "stddev" else bt
    eps = _draw_eps(rng, eps, x_t.shape)
    out = ops.add(mu, Tensor(mult * eps))
    if spherical:
        out = ops.l2_normalize(out)
    return out
