"""Schedule and noising tests. Coefficient values are checked against hand
computations; geometry invariants against direct norm/angle measurements."""

import numpy as np
import pytest

from sphererec import diffusion
from sphererec.errors import ConfigError, DegenerateInputError
from sphererec.numerics import Tape, Tensor, backward, ops
from sphererec.numerics.gradcheck import max_rel_error, numeric_grad

RNG = np.random.default_rng(11)


def test_default_schedule_endpoints_rescaled_and_capped():
    s = diffusion.build_schedule(steps=20)
    assert s.steps == 20
    assert abs(s.beta[0] - 1e-4 * 50) < 1e-15
    assert abs(s.beta[-1] - 0.999) < 1e-15  # 0.02 * 50 = 1.0 capped
    s1000 = diffusion.build_schedule(steps=1000)
    assert abs(s1000.beta[0] - 1e-4) < 1e-15
    assert abs(s1000.beta[-1] - 0.02) < 1e-15


def test_alpha_bar_is_cumprod_and_decreasing():
    s = diffusion.build_schedule(steps=20)
    ref = np.cumprod(1.0 - s.beta)
    np.testing.assert_allclose(s.alpha_bar, ref, atol=1e-15)
    assert (np.diff(s.alpha_bar) < 0).all()
    assert s.alpha_bar_at(0) == 1.0
    assert abs(s.alpha_bar_at(1) - (1.0 - s.beta[0])) < 1e-15


def test_schedule_validation():
    with pytest.raises(ConfigError):
        diffusion.build_schedule(steps=0)
    with pytest.raises(ConfigError):
        diffusion.build_schedule(kind="cosine")
    with pytest.raises(ConfigError):
        diffusion.build_schedule(steps=5, beta_start=0.5, beta_end=0.1)
    with pytest.raises(ConfigError):
        diffusion.schedule_from_betas([0.1, 1.0])
    with pytest.raises(IndexError):
        diffusion.build_schedule(steps=5).beta_at(6)
    with pytest.raises(IndexError):
        diffusion.build_schedule(steps=5).beta_at(0)


def test_degenerate_all_zero_betas():
    s = diffusion.schedule_from_betas(np.zeros(4))
    np.testing.assert_array_equal(s.alpha_bar, np.ones(4))
    np.testing.assert_array_equal(s.beta_tilde, np.zeros(4))


def test_posterior_coefficients_hand_value():
    # beta = [0.1, 0.2]: ab = [0.9, 0.72]
    s = diffusion.schedule_from_betas([0.1, 0.2])
    c_xt, c_x0 = diffusion.posterior_coefficients(2, s)
    assert abs(c_xt - np.sqrt(0.8) * 0.1 / 0.28) < 1e-12
    assert abs(c_x0 - np.sqrt(0.9) * 0.2 / 0.28) < 1e-12
    assert abs(c_xt - 0.319438) < 1e-5
    assert abs(c_x0 - 0.677631) < 1e-5
    assert abs(s.beta_tilde_at(2) - 0.1 / 0.28 * 0.2) < 1e-12


def test_step_one_posterior_collapses_to_x0():
    s = diffusion.build_schedule(steps=20)
    assert s.beta_tilde_at(1) == 0.0
    x1 = Tensor(RNG.standard_normal((3, 8)))
    x0 = Tensor(RNG.standard_normal((3, 8)))
    mu = diffusion.posterior_mean(x1, x0, 1, s)
    # x_t coefficient is exactly 0; the x0 coefficient is beta/(1-(1-beta)),
    # which is 1 up to one rounding of the denominator
    np.testing.assert_allclose(mu.data, x0.data, rtol=0, atol=1e-13)


def test_zero_beta_step_passes_x_t_through():
    # second step adds no noise: coefficients are exactly (1, 0)
    s = diffusion.schedule_from_betas([0.1, 0.0])
    c_xt, c_x0 = diffusion.posterior_coefficients(2, s)
    assert c_xt == 1.0 and c_x0 == 0.0


def test_euclidean_forward_closed_form():
    s = diffusion.schedule_from_betas([0.1, 0.2])
    x0 = RNG.standard_normal((4, 6))
    eps = RNG.standard_normal((4, 6))
    t = np.array([1, 2, 1, 2])
    state = diffusion.euclidean_forward(Tensor(x0), t, s, eps=eps)
    ab = np.where(t == 1, 0.9, 0.72)[:, None]
    np.testing.assert_allclose(
        state.x.data, np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps, atol=1e-12
    )
    assert not state.on_sphere


def test_grw_forward_on_sphere_with_tangent_step():
    s = diffusion.build_schedule(steps=20)
    x0 = RNG.standard_normal((16, 32)) * 3.0
    t = RNG.integers(1, 21, size=16)
    state = diffusion.grw_forward(Tensor(x0), t, s, rng=np.random.default_rng(0))
    norms = np.linalg.norm(state.x.data, axis=-1)
    np.testing.assert_allclose(norms, np.ones(16), atol=1e-9)
    assert state.on_sphere


def test_grw_geodesic_distance_equals_tangent_length():
    s = diffusion.schedule_from_betas([0.3])
    x0 = RNG.standard_normal((8, 16))
    eps = RNG.standard_normal((8, 16))
    state = diffusion.grw_forward(Tensor(x0), 1, s, eps=eps)
    x0u = x0 / np.linalg.norm(x0, axis=-1, keepdims=True)
    tang = eps - (eps * x0u).sum(-1, keepdims=True) * x0u
    expected_dist = np.sqrt(1 - s.alpha_bar_at(1)) * np.linalg.norm(tang, axis=-1)
    cos_angle = np.clip((state.x.data * x0u).sum(-1), -1.0, 1.0)
    np.testing.assert_allclose(np.arccos(cos_angle), expected_dist, atol=1e-9)


def test_grw_rejects_zero_start():
    s = diffusion.build_schedule(steps=5)
    with pytest.raises(DegenerateInputError):
        diffusion.grw_forward(Tensor(np.zeros((1, 4))), 1, s, rng=np.random.default_rng(0))


def test_reverse_step_unit_norm_and_t1_deterministic():
    s = diffusion.build_schedule(steps=20)
    rng = np.random.default_rng(3)
    x_t = Tensor(rng.standard_normal((5, 8)))
    x0_hat = ops.l2_normalize(Tensor(rng.standard_normal((5, 8))))
    out = diffusion.reverse_step(x_t, x0_hat, 7, s, rng=rng)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), np.ones(5), atol=1e-12)
    # at t=1 the noise multiplier is zero: result is the normalized prediction
    a = diffusion.reverse_step(x_t, x0_hat, 1, s, rng=np.random.default_rng(1))
    b = diffusion.reverse_step(x_t, x0_hat, 1, s, rng=np.random.default_rng(2))
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(a.data, x0_hat.data, atol=1e-12)


def test_reverse_step_noise_scale_switch():
    s = diffusion.build_schedule(steps=20)
    rng_state = np.random.default_rng(9)
    x_t = Tensor(rng_state.standard_normal((2, 6)))
    x0_hat = ops.l2_normalize(Tensor(rng_state.standard_normal((2, 6))))
    eps = np.random.default_rng(4).standard_normal((2, 6))
    t = 5
    mu = diffusion.posterior_mean(x_t, x0_hat, t, s).data
    bt = s.beta_tilde_at(t)
    for mode, mult in (("stddev", np.sqrt(bt)), ("variance", bt)):
        out = diffusion.reverse_step(
            x_t, x0_hat, t, s, eps=eps, spherical=False, noise_scale=mode
        )
        np.testing.assert_allclose(out.data, mu + mult * eps, atol=1e-12)
    with pytest.raises(ConfigError):
        diffusion.reverse_step(x_t, x0_hat, t, s, eps=eps, noise_scale="mean")


def test_grad_flows_through_grw_forward():
    s = diffusion.build_schedule(steps=10)
    x0 = Tensor(RNG.standard_normal((3, 5)), requires_grad=True)
    eps = RNG.standard_normal((3, 5))
    w = Tensor(RNG.standard_normal((3, 5)))
    t = np.array([2, 5, 9])

    def build():
        state = diffusion.grw_forward(x0, t, s, eps=eps)
        return ops.tensor_sum(ops.mul(state.x, w))

    with Tape():
        backward(build())
    fd = numeric_grad(lambda: build().item(), x0)
    assert max_rel_error(x0.grad, fd) < 1e-6
