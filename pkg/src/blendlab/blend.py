"""Staged blending pipeline: interpolation, feedback and the ablation runner."""
from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as streams
from .concepts import Condition, DenoiserRegistry, Pair, Single, Weighted
from .diffusion import DDPMVariance, Sampler, forward_noise, guided_noise, reverse_step
from .schedule import (
    BlendPolicy,
    NoiseSchedule,
    Stage,
    StageConfig,
    Strategy,
    blend_ratio,
    make_linear_schedule,
    stage_of,
)

BATCH_SIZE = 1024


class NumericalError(FloatingPointError):
    def __init__(self, chain: int, t: int, latent: str = "blend"):
        super().__init__(f"non-finite {latent} latent in chain {chain} at timestep {t}")
        self.chain, self.t, self.latent = chain, t, latent


@dataclass(frozen=True)
class RunConfig:
    labels: tuple[str, ...]
    T: int = 50
    beta_start: float = 0.001
    beta_end: float = 0.3
    stages: Optional[StageConfig] = None  # None -> default fractions of T
    policy: BlendPolicy = BlendPolicy()
    reference_points: Optional[np.ndarray] = None  # (N, d)
    sampler: Sampler = Sampler.DDPM
    ddpm_variance: DDPMVariance = DDPMVariance.BETA
    chains: int = 2000
    seed: int = 0
    init_stage_on: bool = True
    refine_stage_on: bool = True
    record_trajectories: bool = False
    clip_x0: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "sampler", Sampler(self.sampler))
        object.__setattr__(self, "ddpm_variance", DDPMVariance(self.ddpm_variance))
        if self.stages is None:
            object.__setattr__(self, "stages", StageConfig.from_fractions(self.T))

    @property
    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    @property
    def effective_stages(self) -> StageConfig:
        """Stage bounds after the init/refine toggles: a disabled stage is absorbed by blending."""
        t_s = self.T if not self.init_stage_on else self.stages.t_s
        t_e = 0 if not self.refine_stage_on else self.stages.t_e
        return StageConfig(t_s, t_e)

    @property
    def blend_condition(self) -> Condition:
        if len(self.labels) == 2:
            return Pair(*self.labels)
        n = len(self.labels)
        return Weighted(tuple((lab, 1.0 / n) for lab in self.labels))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self, reg: DenoiserRegistry) -> None:
        if len(self.labels) != self.policy.concept_count:
            raise ValueError(f"{len(self.labels)} labels but {self.policy.concept_count} gammas")
        for lab in self.labels:
            reg[lab]
        if self.chains < 1:
            raise ValueError("chain count must be positive")
        self.stages.validate(self.T)
        if self.reference_points is not None:
            ref = np.asarray(self.reference_points)
            if ref.shape != (len(self.labels), reg.dim):
                raise ValueError(f"reference points must have shape {(len(self.labels), reg.dim)}, got {ref.shape}")


@dataclass
class RunArtifact:
    samples: np.ndarray  # (chains, d)
    config: RunConfig
    references: np.ndarray  # (chains, N, d)
    trajectories: Optional[dict] = None
    metrics: dict = field(default_factory=dict)
    duration: float = 0.0

    @property
    def seed(self) -> int:
        return self.config.seed


# Blending-stage algebra ------------------------------------------------------

def init_auxiliaries(reference_points, t_s: int, schedule: NoiseSchedule, rng=None, eps=None):
    """Noise each reference point to level ``t_s`` with independent noise per concept."""
    ref = np.asarray(reference_points, dtype=float)
    if eps is not None and np.shape(eps) != ref.shape:
        raise ValueError(f"noise shape {np.shape(eps)} does not match references {ref.shape}")
    return forward_noise(ref, t_s, schedule, rng=rng, eps=eps)


def interpolate_blend(L_b, aux, p: float, gammas: Sequence[float]):
    """``p * L_b + (1 - p) / N * sum_n gamma_n * aux_n``; ``aux`` stacks concepts on axis -2."""
    aux = np.asarray(aux, dtype=float)
    N = aux.shape[-2]
    if len(gammas) != N:
        raise ValueError(f"{len(gammas)} strengths for {N} auxiliary latents")
    g = np.asarray(gammas, dtype=float)
    mix = np.einsum("n,...nd->...d", g, aux)
    return p * np.asarray(L_b, dtype=float) + ((1.0 - p) / N) * mix


def feedback_update(L_b_prime, L_a, p: float):
    return p * np.asarray(L_b_prime, dtype=float) + (1.0 - p) * np.asarray(L_a, dtype=float)


# Runner --------------------------------------------------------------------

def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("BLENDLAB_THREADS", "1")))
    except ValueError:
        return 1


def _check_finite(x: np.ndarray, chains: np.ndarray, t: int, latent: str):
    bad = ~np.all(np.isfinite(x.reshape(len(chains), -1)), axis=1)
    if bad.any():
        raise NumericalError(int(chains[np.argmax(bad)]), t, latent)


def _draw_references(cfg: RunConfig, reg: DenoiserRegistry, chains: np.ndarray) -> np.ndarray:
    n, N, d = len(chains), len(cfg.labels), reg.dim
    if cfg.reference_points is not None:
        return np.broadcast_to(np.asarray(cfg.reference_points, dtype=float), (n, N, d)).copy()
    u = streams.uniforms(cfg.seed, chains, streams.REF_COMPONENT, (N,))
    e = streams.normals(cfg.seed, chains, streams.REF_NORMAL, (N, d))
    return np.stack([reg[lab].mixture.sample_from(u[:, k], e[:, k]) for k, lab in enumerate(cfg.labels)], axis=1)


def _run_batch(cfg: RunConfig, reg: DenoiserRegistry, sched: NoiseSchedule, chains: np.ndarray, ratio_fn):
    T, d, N = cfg.T, reg.dim, len(cfg.labels)
    n = len(chains)
    pol = cfg.policy
    st = cfg.effective_stages
    cond = cfg.blend_condition
    w = pol.guidance_w

    blend_noise = streams.normals(cfg.seed, chains, streams.BLEND, (T + 1, d))
    refs = _draw_references(cfg, reg, chains)
    blending = st.t_s > st.t_e
    if blending:
        aux_noise = np.stack(
            [streams.normals(cfg.seed, chains, streams.AUX_STEP + k, (T + 1, d)) for k in range(N)], axis=2
        )  # (n, T+1, N, d)
        aux_init_noise = streams.normals(cfg.seed, chains, streams.AUX_INIT, (N, d))

    rec = cfg.record_trajectories
    traj_b = np.full((n, T + 1, d), np.nan) if rec else None
    traj_a = np.full((n, T + 1, N, d), np.nan) if rec else None
    pre_dist = np.full((n, T + 1, N), np.nan)
    post_dist = np.full((n, T + 1, N), np.nan)

    z = blend_noise[:, 0]
    aux = None
    for t in range(T, 0, -1):
        stage = stage_of(t, st)
        if stage is Stage.BLENDING:
            if aux is None:
                aux = init_auxiliaries(refs, t, sched, eps=aux_init_noise)
            p = ratio_fn(t)
            z = interpolate_blend(z, aux, p, pol.gammas)
            pre_dist[:, t] = np.linalg.norm(aux - z[:, None, :], axis=-1)
            if pol.feedback_enabled:
                aux = feedback_update(z[:, None, :], aux, p)
            post_dist[:, t] = np.linalg.norm(aux - z[:, None, :], axis=-1)
            if rec:
                traj_a[:, t] = aux
        else:
            aux = None
        if rec:
            traj_b[:, t] = z

        eps = guided_noise(reg, z, t, cond, w, sched)
        z = reverse_step(
            z, eps, t, sched, cfg.sampler, noise=blend_noise[:, t], clip_x0=cfg.clip_x0, variance=cfg.ddpm_variance
        )
        _check_finite(z, chains, t, "blend")
        if stage is Stage.BLENDING:
            nxt = np.empty_like(aux)
            for k, lab in enumerate(cfg.labels):
                e_k = guided_noise(reg, aux[:, k], t, Single(lab), w, sched)
                nxt[:, k] = reverse_step(
                    aux[:, k], e_k, t, sched, cfg.sampler,
                    noise=aux_noise[:, t, k], clip_x0=cfg.clip_x0, variance=cfg.ddpm_variance,
                )
            _check_finite(nxt, chains, t, "aux")
            aux = nxt
    if rec:
        traj_b[:, 0] = z
    out = {"samples": z, "references": refs, "pre_dist": pre_dist, "post_dist": post_dist}
    if rec:
        out["blend"] = traj_b
        out["aux"] = traj_a
    return out


def run_freeblend(
    config: RunConfig, reg: DenoiserRegistry, threads: Optional[int] = None, ratio_fn=None
) -> RunArtifact:
    """Run the staged blending pipeline for ``config.chains`` independent chains.

    ``ratio_fn`` overrides the blending ratio schedule (``t -> p``); by default
    it follows ``config.policy``.
    """
    config.validate(reg)
    sched = config.schedule
    if ratio_fn is None:
        ratio_fn = lambda t: blend_ratio(t, config.T, config.policy)  # noqa: E731
    start = time.perf_counter()
    idx = np.arange(config.chains)
    batches = [idx[i : i + BATCH_SIZE] for i in range(0, config.chains, BATCH_SIZE)]
    # warm the marginal cache serially; afterwards workers only read it
    for t in range(1, config.T + 1):
        guided_noise(reg, np.zeros((1, reg.dim)), t, config.blend_condition, config.policy.guidance_w, sched)
        for lab in config.labels:
            guided_noise(reg, np.zeros((1, reg.dim)), t, Single(lab), config.policy.guidance_w, sched)
    n_threads = threads if threads is not None else _thread_count()
    work = lambda b: _run_batch(config, reg, sched, b, ratio_fn)  # noqa: E731
    if n_threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(work, batches))
    else:
        parts = [work(b) for b in batches]
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    st = config.effective_stages
    traj = {
        "stage": {t: stage_of(t, st) for t in range(1, config.T + 1)},
        "pre_dist": cat["pre_dist"],
        "post_dist": cat["post_dist"],
        "ratios": {t: ratio_fn(t) for t in range(st.t_e + 1, st.t_s + 1)},
    }
    if config.record_trajectories:
        traj["blend"] = cat["blend"]
        traj["aux"] = cat["aux"]
    art = RunArtifact(cat["samples"], config, cat["references"], traj)
    from .metrics import run_metrics

    art.metrics = run_metrics(art, reg)
    art.duration = time.perf_counter() - start
    return art


def plain_sample(
    reg: DenoiserRegistry,
    cond: Condition,
    config: RunConfig,
    chains: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Plain guided sampling from pure noise, drawing from the chains' blend streams."""
    sched = config.schedule
    idx = np.arange(config.chains) if chains is None else np.asarray(chains)
    out = []
    for i in range(0, len(idx), BATCH_SIZE):
        b = idx[i : i + BATCH_SIZE]
        noise = streams.normals(config.seed, b, streams.BLEND, (config.T + 1, reg.dim))
        z = noise[:, 0]
        for t in range(config.T, 0, -1):
            eps = guided_noise(reg, z, t, cond, config.policy.guidance_w, sched)
            z = reverse_step(
                z, eps, t, sched, config.sampler,
                noise=noise[:, t], clip_x0=config.clip_x0, variance=config.ddpm_variance,
            )
            _check_finite(z, b, t, "blend")
        out.append(z)
    return np.concatenate(out)


# Ablations -----------------------------------------------------------------

AXES = ("strategy", "feedback", "stages", "gamma", "distance")
DEFAULT_GAMMA_RATIOS = (0.5, 1.0, 1.5)
DEFAULT_DISTANCES = (2.0, 4.0, 6.0, 8.0)


@dataclass
class Variant:
    name: str
    config: RunConfig
    registry: DenoiserRegistry
    params: dict = field(default_factory=dict)


def ablation_variants(
    base: RunConfig,
    axis: str,
    reg: DenoiserRegistry,
    gamma_ratios: Sequence[float] = DEFAULT_GAMMA_RATIOS,
    distances: Sequence[float] = DEFAULT_DISTANCES,
) -> list[Variant]:
    axis = axis.lower()
    pol = base.policy
    if axis == "strategy":
        return [
            Variant(s.value, base.replace(policy=dataclasses.replace(pol, strategy=s)), reg, {"strategy": s.value})
            for s in Strategy
        ]
    if axis == "feedback":
        return [
            Variant(name, base.replace(policy=dataclasses.replace(pol, feedback_enabled=on)), reg, {"feedback": on})
            for name, on in (("feedback_on", True), ("feedback_off", False))
        ]
    if axis == "stages":
        out = []
        for init_on, refine_on in ((False, False), (False, True), (True, False), (True, True)):
            name = "+".join(n for n, on in (("init", init_on), ("blend", True), ("refine", refine_on)) if on)
            out.append(
                Variant(
                    name,
                    base.replace(init_stage_on=init_on, refine_stage_on=refine_on),
                    reg,
                    {"init": init_on, "refine": refine_on},
                )
            )
        return out
    if axis == "gamma":
        if len(base.labels) != 2:
            raise ValueError("gamma axis needs exactly two concepts")
        return [
            Variant(
                f"gamma2={r:g}",
                base.replace(policy=dataclasses.replace(pol, gammas=(1.0, float(r)))),
                reg,
                {"gamma1": 1.0, "gamma2": float(r)},
            )
            for r in gamma_ratios
        ]
    if axis == "distance":
        return [_distance_variant(base, reg, float(dist)) for dist in distances]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {', '.join(AXES)}")


def _distance_variant(base: RunConfig, reg: DenoiserRegistry, dist: float) -> Variant:
    """Move the two blended concepts symmetrically about their midpoint to separation ``dist``."""
    if len(base.labels) != 2:
        raise ValueError("distance axis needs exactly two concepts")
    from .concepts import ConceptSpec

    a, b = (reg[lab] for lab in base.labels)
    ma, mb = a.mixture.moments()[0], b.mixture.moments()[0]
    mid, gap = 0.5 * (ma + mb), mb - ma
    norm = np.linalg.norm(gap)
    if norm == 0:
        raise ValueError("distance axis needs concepts with distinct means")
    unit = gap / norm
    shift_a = mid - 0.5 * dist * unit - ma
    shift_b = mid + 0.5 * dist * unit - mb
    moved = {a.label: shift_a, b.label: shift_b}
    concepts = [
        ConceptSpec(c.label, c.mixture.translated(moved[c.label])) if c.label in moved else c
        for c in (reg[lab] for lab in reg.labels)
    ]
    cfg = base
    if base.reference_points is not None:
        ref = np.asarray(base.reference_points, dtype=float) + np.stack([shift_a, shift_b])
        cfg = base.replace(reference_points=ref)
    return Variant(f"distance={dist:g}", cfg, DenoiserRegistry(concepts), {"distance": dist})


def run_ablation_suite(
    base: RunConfig, axis: str, reg: DenoiserRegistry, **grid
) -> list[tuple[Variant, RunArtifact, dict]]:
    """Run every variant along ``axis`` with the base config's master seed."""
    out = []
    for v in ablation_variants(base, axis, reg, **grid):
        art = run_freeblend(v.config, v.registry)
        out.append((v, art, art.metrics))
    return out
