"""Noise schedules, blending ratios and stage arithmetic."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Stage(str, enum.Enum):
    INITIALIZATION = "init"
    BLENDING = "blend"
    REFINEMENT = "refine"


class Strategy(str, enum.Enum):
    INCREASE = "increase"
    INVARIANT = "invariant"
    DECLINE = "decline"


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete DDPM tables indexed by timestep.

    ``betas``, ``alphas`` and ``posterior_sigmas`` have length ``T + 1`` with a
    dummy entry at index 0, so ``betas[t]`` is the value for timestep ``t``.
    ``alpha_bars[0] == 1``.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_sigmas: np.ndarray

    @property
    def beta_sigmas(self) -> np.ndarray:
        """Ancestral noise scale sqrt(beta_t), zeroed at t = 1."""
        s = np.sqrt(self.betas)
        s[:2] = 0.0
        return s

    def check(self) -> None:
        b = self.betas[1:]
        if not np.all((b > 0) & (b < 1)):
            raise ValueError("betas must lie in (0, 1)")
        ab = self.alpha_bars
        if ab[0] != 1.0 or not np.all(np.diff(ab) < 0) or not 0 < ab[-1] < 1:
            raise ValueError("alpha_bars must decrease strictly from 1")


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ValueError(f"step count must be a positive integer, got {T!r}")
    T = int(T)
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.empty(T + 1)
    betas[0] = 0.0
    betas[1:] = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    # sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t); zero at t=1 since abar_0 = 1
    sig2 = np.zeros(T + 1)
    sig2[1:] = betas[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
    sched = NoiseSchedule(T, betas, alphas, alpha_bars, np.sqrt(sig2))
    sched.check()
    return sched


@dataclass(frozen=True)
class StageConfig:
    t_s: int
    t_e: int

    def validate(self, T: int) -> None:
        if not (T >= self.t_s >= self.t_e >= 0):
            raise ValueError(f"need T >= t_s >= t_e >= 0, got T={T}, t_s={self.t_s}, t_e={self.t_e}")

    @classmethod
    def from_fractions(cls, T: int, ts_frac: float = 0.88, te_frac: float = 0.12) -> "StageConfig":
        return cls(round_half_up(ts_frac * T), round_half_up(te_frac * T))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class BlendPolicy:
    gammas: tuple[float, ...] = (1.0, 1.0)
    strategy: Strategy = Strategy.INCREASE
    invariant_p: float = 0.5
    guidance_w: float = 3.0
    feedback_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ValueError("gammas must be a nonempty sequence of positive reals")
        if self.guidance_w < 0:
            raise ValueError("guidance scale must be nonnegative")
        if not 0.0 <= self.invariant_p <= 1.0:
            raise ValueError("invariant_p must lie in [0, 1]")

    @property
    def concept_count(self) -> int:
        return len(self.gammas)


def blend_ratio(t: int, T: int, policy: BlendPolicy) -> float:
    """Weight of the blending latent at timestep ``t``."""
    if not 0 <= t <= T:
        raise ValueError(f"timestep {t} outside [0, {T}]")
    if policy.strategy is Strategy.INCREASE:
        return 1.0 - t / T
    if policy.strategy is Strategy.DECLINE:
        return t / T
    return policy.invariant_p


def aux_weight(p: float, N: int) -> float:
    return (1.0 - p) / N


def stage_of(t: int, cfg: StageConfig) -> Stage:
    if t > cfg.t_s:
        return Stage.INITIALIZATION
    if t > cfg.t_e:
        return Stage.BLENDING
    return Stage.REFINEMENT
