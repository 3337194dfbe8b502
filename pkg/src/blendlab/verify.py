"""Independent oracles for the analytic denoiser, the samplers and the pipeline.

The oracles deliberately avoid the code paths they check: log-densities come
from scipy.stats, concept draws from numpy's multivariate normal, and noised
moments from hand-written closed forms.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import multivariate_normal

from .blend import RunConfig, plain_sample, run_freeblend
from .concepts import ConceptSpec, DenoiserRegistry, GaussianMixture, Single, marginal_at
from .schedule import BlendPolicy, NoiseSchedule, StageConfig, Strategy, make_linear_schedule


@dataclass(frozen=True)
class OracleReport:
    name: str
    max_error: float
    tolerance: float
    sample_size: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        stats = f"err={self.max_error:.3e}  tol={self.tolerance:.1e}  n={self.sample_size}"
        return f"{flag}  {self.name:<34} {stats}  {self.detail}"


# reference log-density, independent of GaussianMixture.log_prob
def _ref_logpdf(weights, means, covs, z) -> float:
    terms = [np.log(w) + multivariate_normal(m, c).logpdf(z) for w, m, c in zip(weights, means, covs)]
    return float(np.logaddexp.reduce(terms))


def _random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return a @ a.T / d + rng.uniform(0.2, 1.0) * np.eye(d)


def random_mixture(rng: np.random.Generator, d: int = 2, max_k: int = 3) -> GaussianMixture:
    k = int(rng.integers(1, max_k + 1))
    w = rng.dirichlet(np.ones(k) * 2.0)
    return GaussianMixture(w, rng.normal(scale=3.0, size=(k, d)), np.array([_random_spd(rng, d) for _ in range(k)]))


def finite_diff_score_check(
    reg: Optional[DenoiserRegistry],
    trials: int,
    rng: np.random.Generator,
    tolerance: float = 1e-5,
    score_fn: Optional[Callable[[GaussianMixture, np.ndarray], np.ndarray]] = None,
    T: int = 50,
) -> OracleReport:
    """Central differences of the log-density against the analytic score.

    Each trial draws a mixture (a registry concept when ``reg`` is given,
    otherwise a random one), a timestep and a point near the noised mixture.
    """
    sched = make_linear_schedule(T, 1e-3, 0.3)
    score_fn = score_fn or (lambda mix, z: mix.score(z))
    worst = 0.0
    for _ in range(trials):
        if reg is not None:
            base = reg[reg.labels[int(rng.integers(len(reg.labels)))]].mixture
        else:
            base = random_mixture(rng, d=int(rng.integers(1, 4)))
        t = int(rng.integers(0, T + 1))
        mix = marginal_at(base, t, sched)
        comp = int(rng.integers(mix.n_components))
        z = mix.means[comp] + rng.normal(size=mix.dim) * 1.5
        g = np.asarray(score_fn(mix, z), dtype=float)
        fd = np.empty(mix.dim)
        for i in range(mix.dim):
            h = 1e-4 * (1.0 + abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            lp = _ref_logpdf(mix.weights, mix.means, mix.covs, zp)
            lm = _ref_logpdf(mix.weights, mix.means, mix.covs, zm)
            fd[i] = (lp - lm) / (2 * h)
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0)
        worst = max(worst, float(err))
    return OracleReport("finite_diff_score", worst, tolerance, trials)


def _mc_moment_error(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> tuple[float, str]:
    """Largest tolerance-normalised deviation; <= 1 means within 4 SE (mean) and 10% / 0.02 (cov)."""
    n = x.shape[0]
    m = x.mean(axis=0)
    S = np.cov(x, rowvar=False).reshape(cov.shape)
    se = np.sqrt(np.diag(cov) / n)
    mean_ratio = np.max(np.abs(m - mean) / (4.0 * se))
    tol = np.where(np.abs(cov) < 0.2, 0.02, 0.1 * np.abs(cov))
    cov_ratio = np.max(np.abs(S - cov) / tol)
    return float(max(mean_ratio, cov_ratio)), f"mean_ratio={mean_ratio:.2f} cov_ratio={cov_ratio:.2f}"


def marginal_moment_check(
    concept: ConceptSpec, t: int, n: int, rng: np.random.Generator, schedule: Optional[NoiseSchedule] = None
) -> OracleReport:
    """Forward-noise ``n`` concept draws to ``t`` and compare with the closed-form moments."""
    if n < 1000:
        raise ValueError("marginal_moment_check needs n >= 1000")
    sched = schedule or make_linear_schedule(50, 1e-3, 0.3)
    mix = concept.mixture
    comp = rng.choice(mix.n_components, size=n, p=mix.weights)
    x0 = np.empty((n, mix.dim))
    for k in range(mix.n_components):
        sel = comp == k
        x0[sel] = rng.multivariate_normal(mix.means[k], mix.covs[k], size=int(sel.sum()))
    ab = sched.alpha_bars[t]
    zt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.normal(size=x0.shape)
    # closed-form moments of the noised mixture
    noised = marginal_at(mix, t, sched)
    w = noised.weights
    mean = w @ noised.means
    dev = noised.means - mean
    cov = sum(wk * (Ck + np.outer(dk, dk)) for wk, Ck, dk in zip(w, noised.covs, dev))
    err, detail = _mc_moment_error(zt, mean, cov)
    return OracleReport(f"marginal_moments[{concept.label},t={t}]", err, 1.0, n, detail)


def sampler_fidelity_check(concept: ConceptSpec, n: int, seed: int = 0, T: int = 50, sampler="ddpm") -> OracleReport:
    """Plain w=1 sampling of a single-Gaussian concept reproduces its moments."""
    reg = DenoiserRegistry([concept])
    cfg = RunConfig(
        labels=(concept.label,), T=T, policy=BlendPolicy(gammas=(1.0,), guidance_w=1.0),
        chains=n, seed=seed, sampler=sampler,
    )
    x = plain_sample(reg, Single(concept.label), cfg)
    mix = concept.mixture
    err, detail = _mc_moment_error(x, mix.means[0], mix.covs[0])
    return OracleReport(f"sampler_fidelity[{sampler},T={T}]", err, 1.0, n, detail)


def _byte_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        return float("inf")
    return 0.0 if a.tobytes() == b.tobytes() else float(np.max(np.abs(a - b))) or float("inf")


def reduction_check(config: RunConfig, reg: DenoiserRegistry) -> list[OracleReport]:
    """Degenerate configurations must reproduce simpler paths bit for bit."""
    reports = []
    # empty blending stage == plain guided sampling
    t = config.stages.t_e
    empty = config.replace(stages=StageConfig(t, t), record_trajectories=False)
    a = run_freeblend(empty, reg).samples
    b = plain_sample(reg, config.blend_condition, config)
    reports.append(OracleReport("reduction[empty_blend==plain]", _byte_diff(a, b), 0.0, config.chains))

    # feedback with p == 0 == no feedback
    zero = dataclasses.replace(config.policy, strategy=Strategy.INVARIANT, invariant_p=0.0)
    on, off = (
        run_freeblend(config.replace(policy=dataclasses.replace(zero, feedback_enabled=f), record_trajectories=True), reg)
        for f in (True, False)
    )
    err = max(
        _byte_diff(on.samples, off.samples),
        _byte_diff(np.nan_to_num(on.trajectories["blend"]), np.nan_to_num(off.trajectories["blend"])),
        _byte_diff(np.nan_to_num(on.trajectories["aux"]), np.nan_to_num(off.trajectories["aux"])),
    )
    reports.append(OracleReport("reduction[feedback_p0==off]", err, 0.0, config.chains))

    # chain 0 does not depend on how many chains run
    one = run_freeblend(config.replace(chains=1, record_trajectories=True), reg)
    eight = run_freeblend(config.replace(chains=8, record_trajectories=True), reg)
    err = _byte_diff(np.nan_to_num(one.trajectories["blend"][0]), np.nan_to_num(eight.trajectories["blend"][0]))
    reports.append(OracleReport("reduction[chain0_vs_chain_count]", err, 0.0, 8))

    # thread count does not change results
    many = config.replace(chains=max(config.chains, 3000))
    s1 = run_freeblend(many, reg, threads=1).samples
    s4 = run_freeblend(many, reg, threads=4).samples
    reports.append(OracleReport("reduction[threads_1==4]", _byte_diff(s1, s4), 0.0, many.chains))
    return reports


def feedback_contraction_check(config: RunConfig, reg: DenoiserRegistry) -> OracleReport:
    """Post-feedback distance equals (1 - p) times the pre-feedback distance at every blending step."""
    art = run_freeblend(config.replace(record_trajectories=True), reg)
    tr = art.trajectories
    worst = 0.0
    steps = 0
    for t, p in tr["ratios"].items():
        pre, post = tr["pre_dist"][:, t], tr["post_dist"][:, t]
        rel = np.abs(post - (1 - p) * pre) / np.maximum(np.abs(pre), 1e-300)
        worst = max(worst, float(np.max(rel)))
        steps += 1
    return OracleReport("feedback_contraction", worst, 1e-12, config.chains, f"steps={steps}")


def affine_identity_check(trials: int, rng: np.random.Generator) -> OracleReport:
    """Interpolation weights sum to one and the composite map commutes with translation."""
    from .blend import feedback_update, interpolate_blend
    from .schedule import aux_weight

    worst = 0.0
    for _ in range(trials):
        N = int(rng.integers(1, 5))
        p = float(rng.uniform())
        g = rng.uniform(0.1, 2.0, size=N)
        g *= N / g.sum()
        lam = aux_weight(p, N)
        worst = max(worst, abs(p + lam * g.sum() - 1.0))
        # expanded feedback coefficients: (1-p) on own aux, p^2 on L_b, p(1-p)/N * gamma_n on each aux
        coef = (1 - p) + p * p + p * (1 - p) / N * g.sum()
        worst = max(worst, abs(coef - 1.0))
        d = int(rng.integers(1, 4))
        Lb, La = rng.normal(size=d), rng.normal(size=(N, d))
        v = rng.normal(size=d)
        b1 = interpolate_blend(Lb, La, p, g)
        b2 = interpolate_blend(Lb + v, La + v, p, g)
        worst = max(worst, float(np.max(np.abs(b2 - b1 - v))))
        a1 = feedback_update(b1, La, p)
        a2 = feedback_update(b2, La + v, p)
        worst = max(worst, float(np.max(np.abs(a2 - a1 - v))))
    return OracleReport("affine_identities", worst, 1e-12, trials)


def default_suite(full: bool = False, seed: int = 0) -> list[OracleReport]:
    """The oracle suite run by ``blendlab verify``."""
    from .config import default_registry, default_run_config

    scale = 5 if full else 1
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xC0FFEE]))
    reg = default_registry()
    cfg = default_run_config(chains=400 * scale)
    skewed = ConceptSpec.build("S", [1.0], [[3.0, 0.0]], [[[1.0, 0.3], [0.3, 0.6]]])
    mixture = ConceptSpec.build(
        "M", [0.3, 0.7], [[-2.0, 1.0], [2.0, -1.0]], [np.eye(2) * 0.5, [[1.0, 0.2], [0.2, 0.4]]]
    )
    out = [
        affine_identity_check(1000 * scale, rng),
        finite_diff_score_check(None, 100 * scale, rng),
        finite_diff_score_check(reg, 50 * scale, rng),
        marginal_moment_check(ConceptSpec.build("G", [1.0], [[4.0, 0.0]], [np.eye(2)]), 30, 50000 * scale, rng),
        marginal_moment_check(mixture, 0, 50000 * scale, rng),
        marginal_moment_check(mixture, 50, 50000 * scale, rng),
        sampler_fidelity_check(skewed, 20000 * scale, seed=seed),
        feedback_contraction_check(cfg, reg),
    ]
    out.extend(reduction_check(cfg, reg))
    return out
