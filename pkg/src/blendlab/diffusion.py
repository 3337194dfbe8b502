"""Forward noising, classifier-free guidance and single reverse steps.

All functions accept a batch of latents with shape (n, d) or a single
vector of shape (d,).
"""
from __future__ import annotations

import enum

import numpy as np

from .concepts import Condition, DenoiserRegistry, Null, predict_noise
from .schedule import NoiseSchedule


class Sampler(str, enum.Enum):
    DDPM = "ddpm"
    DDIM = "ddim"


class DDPMVariance(str, enum.Enum):
    # sigma_t^2 = beta_t; keeps the sample covariance within a few percent at T ~ 50
    BETA = "beta"
    # sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t); shrinks covariance at small T
    POSTERIOR = "posterior"


def forward_noise(x0, t: int, schedule: NoiseSchedule, rng: np.random.Generator | None = None, eps=None):
    """Draw from q(z_t | x0). Pass ``eps`` to supply the standard normal directly."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    x0 = np.asarray(x0, dtype=float)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def guided_noise(reg: DenoiserRegistry, z, t: int, cond: Condition, w: float, schedule: NoiseSchedule):
    eps_null = predict_noise(reg, z, t, Null(), schedule)
    if w == 0:
        return eps_null
    eps_cond = predict_noise(reg, z, t, cond, schedule)
    if w == 1:
        return eps_cond
    return eps_null + w * (eps_cond - eps_null)


def reverse_step(
    z_t,
    eps_hat,
    t: int,
    schedule: NoiseSchedule,
    sampler: Sampler = Sampler.DDPM,
    rng: np.random.Generator | None = None,
    noise=None,
    clip_x0: float | None = None,
    variance: DDPMVariance = DDPMVariance.BETA,
):
    """One step t -> t-1.

    DDPM is the ancestral step around the posterior mean, with noise scale
    ``beta_sigmas[t]`` or ``posterior_sigmas[t]`` depending on ``variance``;
    DDIM is the deterministic eta = 0 update. ``noise`` supplies the DDPM
    standard normal explicitly; otherwise it is drawn from ``rng``. Nothing is
    drawn at t = 1 or under DDIM.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    z_t = np.asarray(z_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    ab, ab_prev = schedule.alpha_bars[t], schedule.alpha_bars[t - 1]
    x0_hat = (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    if clip_x0 is not None:
        x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)

    if Sampler(sampler) is Sampler.DDIM:
        return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat

    beta = schedule.betas[t]
    mean = (np.sqrt(ab_prev) * beta / (1.0 - ab)) * x0_hat + (
        np.sqrt(schedule.alphas[t]) * (1.0 - ab_prev) / (1.0 - ab)
    ) * z_t
    if DDPMVariance(variance) is DDPMVariance.BETA:
        sigma = schedule.beta_sigmas[t]
    else:
        sigma = schedule.posterior_sigmas[t]
    if t == 1 or sigma == 0.0:
        return mean
    if noise is None:
        noise = rng.standard_normal(z_t.shape)
    return mean + sigma * noise
