import numpy as np
import pytest

import blendlab.diffusion as diffusion
from blendlab.concepts import DenoiserRegistry, Null, Single, predict_noise
from blendlab.diffusion import DDPMVariance, Sampler, forward_noise, guided_noise, reverse_step
from blendlab.schedule import make_linear_schedule

SCHED = make_linear_schedule(50, 1e-3, 0.3)


def test_forward_noise_identity_at_t0():
    x0 = np.array([1.5, -2.0])
    np.testing.assert_array_equal(forward_noise(x0, 0, SCHED, np.random.default_rng(0)), x0)


def test_forward_noise_scaling():
    s = make_linear_schedule(1, 0.25, 0.25)
    eps = np.array([0.4, -1.0])
    np.testing.assert_allclose(forward_noise(np.zeros(2), 1, s, eps=eps), 0.5 * eps)


def test_forward_noise_mean_monte_carlo():
    rng = np.random.default_rng(5)
    x0 = np.array([2.0, -1.0])
    t = 20
    z = forward_noise(np.broadcast_to(x0, (100_000, 2)), t, SCHED, rng)
    se = np.sqrt((1 - SCHED.alpha_bars[t]) / 100_000)
    assert np.all(np.abs(z.mean(axis=0) - np.sqrt(SCHED.alpha_bars[t]) * x0) < 4 * se)


def test_guided_noise_collapses(two_concepts):
    z = np.array([[0.7, -0.2], [2.0, 1.0]])
    for t in (1, 30):
        np.testing.assert_array_equal(
            guided_noise(two_concepts, z, t, Single("left"), 1.0, SCHED), predict_noise(two_concepts, z, t, Single("left"), SCHED)
        )
        np.testing.assert_array_equal(
            guided_noise(two_concepts, z, t, Single("left"), 0.0, SCHED), predict_noise(two_concepts, z, t, Null(), SCHED)
        )


def test_guided_noise_hand_evaluation(monkeypatch):
    fake = {Null(): np.array([1.0, 0.0]), Single("c"): np.array([3.0, 0.0])}
    monkeypatch.setattr(diffusion, "predict_noise", lambda reg, z, t, cond, s: fake[cond])
    np.testing.assert_array_equal(guided_noise(None, np.zeros(2), 5, Single("c"), 2.0, SCHED), [5.0, 0.0])


def test_ddim_converges_to_point_mass(make_gaussian):
    mu = np.array([1.0, -2.0])
    reg = DenoiserRegistry([make_gaussian("p", mu, 1e-6 * np.eye(2))])
    z = np.random.default_rng(1).normal(size=(5, 2)) * 3
    for t in range(SCHED.T, 0, -1):
        z = reverse_step(z, predict_noise(reg, z, t, Single("p"), SCHED), t, SCHED, Sampler.DDIM)
    # the deterministic map lands inside the concept's 1e-3 spread
    np.testing.assert_allclose(z, np.broadcast_to(mu, z.shape), atol=5e-3)


@pytest.mark.parametrize("sampler", list(Sampler))
@pytest.mark.parametrize("variance", list(DDPMVariance))
def test_no_noise_at_last_step(sampler, variance):
    z, eps = np.array([0.3, 0.1]), np.array([0.2, -0.4])
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    a = reverse_step(z, eps, 1, SCHED, sampler, rng=rng, variance=variance)
    b = reverse_step(z, eps, 1, SCHED, sampler, noise=np.array([100.0, 100.0]), variance=variance)
    np.testing.assert_array_equal(a, b)
    assert rng.bit_generator.state == state


def test_ddim_is_deterministic():
    z, eps = np.array([0.3, 0.1]), np.array([0.2, -0.4])
    a = reverse_step(z, eps, 17, SCHED, Sampler.DDIM, rng=np.random.default_rng(0))
    b = reverse_step(z, eps, 17, SCHED, Sampler.DDIM, rng=np.random.default_rng(99))
    assert a.tobytes() == b.tobytes()


def test_ddpm_step_uses_selected_noise_scale():
    z, eps, xi = np.zeros(1), np.zeros(1), np.ones(1)
    t = 10
    mean = reverse_step(z, eps, t, SCHED, Sampler.DDPM, noise=np.zeros(1))
    big = reverse_step(z, eps, t, SCHED, Sampler.DDPM, noise=xi, variance="beta") - mean
    small = reverse_step(z, eps, t, SCHED, Sampler.DDPM, noise=xi, variance="posterior") - mean
    assert big[0] == pytest.approx(np.sqrt(SCHED.betas[t]))
    assert small[0] == pytest.approx(SCHED.posterior_sigmas[t])


def test_reverse_step_clip():
    z = np.array([50.0, -50.0])
    out = reverse_step(z, np.zeros(2), 5, SCHED, Sampler.DDIM, clip_x0=2.0)
    np.testing.assert_allclose(out, np.sqrt(SCHED.alpha_bars[4]) * np.array([2.0, -2.0]))


@pytest.mark.slow
def test_forward_then_exact_denoise_is_consistent(make_gaussian):
    """Noising concept draws to t and denoising back recovers the concept moments."""
    mu, cov = np.array([2.0, -1.0]), np.array([[1.0, 0.4], [0.4, 0.8]])
    reg = DenoiserRegistry([make_gaussian("g", mu, cov)])
    rng = np.random.default_rng(8)
    n, t0 = 20_000, 25
    z = forward_noise(rng.multivariate_normal(mu, cov, size=n), t0, SCHED, rng)
    for t in range(t0, 0, -1):
        z = reverse_step(z, predict_noise(reg, z, t, Single("g"), SCHED), t, SCHED, rng=rng)
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 4 * se)
    np.testing.assert_allclose(np.cov(z.T), cov, rtol=0.1)
