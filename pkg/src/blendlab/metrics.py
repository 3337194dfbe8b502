"""Blend-quality analogs and distributional diagnostics."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import sqrtm

from .concepts import ConceptSpec, GaussianMixture


def _mixture(concept) -> GaussianMixture:
    return concept.mixture if isinstance(concept, ConceptSpec) else concept


def mean_loglik(samples, concept) -> float:
    """Average log-density of ``samples`` under a concept's mixture."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("mean_loglik needs at least one sample")
    return float(np.mean(_mixture(concept).log_prob(x)))


def toy_bs(blend_samples, orig_samples: Sequence, concepts: Sequence) -> float:
    """Sum over concepts of blend similarity minus the concept's own baseline similarity.

    Similarity is the mean log-likelihood under the concept. Zero when the
    blend samples coincide with every baseline set; higher is closer.
    """
    if len(orig_samples) != len(concepts):
        raise ValueError("need one baseline sample set per concept")
    return float(
        sum(mean_loglik(blend_samples, c) - mean_loglik(o, c) for o, c in zip(orig_samples, concepts))
    )


def toy_bs_parts(blend_samples, orig_samples, concepts) -> dict[str, float]:
    return {
        getattr(c, "label", str(i)): mean_loglik(blend_samples, c) - mean_loglik(o, c)
        for i, (o, c) in enumerate(zip(orig_samples, concepts))
    }


def _check_spd(S: np.ndarray, name: str) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-10):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise ValueError(f"{name} is not positive definite")


def gaussian_w2(mu1, S1, mu2, S2) -> float:
    """2-Wasserstein distance between two Gaussians."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    S1, S2 = np.atleast_2d(np.asarray(S1, float)), np.atleast_2d(np.asarray(S2, float))
    _check_spd(S1, "S1")
    _check_spd(S2, "S2")
    r2 = np.real(sqrtm(S2))
    cross = np.real(sqrtm(r2 @ S1 @ r2))
    w2sq = np.sum((mu1 - mu2) ** 2) + np.trace(S1 + S2 - 2.0 * cross)
    return float(np.sqrt(max(w2sq, 0.0)))


def moment_stats(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("moment_stats needs an (n >= 2, d) array")
    return x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])


def aux_convergence_trace(trajectories: dict, which: str = "post") -> list[tuple[int, float]]:
    """Per blending timestep, the mean over chains and concepts of ||L_a - L_b||.

    ``which="post"`` reads distances measured right after the feedback update,
    ``"pre"`` right before it.
    """
    if trajectories is None or f"{which}_dist" not in trajectories:
        raise ValueError("run carries no blending-stage distance records")
    dist = trajectories[f"{which}_dist"]
    rows = []
    for t in range(dist.shape[1] - 1, 0, -1):
        col = dist[:, t]
        if np.all(np.isnan(col)):
            continue
        rows.append((t, float(np.mean(col))))
    return rows


def projection_on_axis(samples, mu1, mu2) -> float:
    """Mean of the samples projected onto the unit vector from ``mu1`` to ``mu2``, relative to the midpoint."""
    mu1, mu2 = np.asarray(mu1, float), np.asarray(mu2, float)
    u = (mu2 - mu1) / np.linalg.norm(mu2 - mu1)
    return float(np.mean((np.asarray(samples) - 0.5 * (mu1 + mu2)) @ u))


def run_metrics(artifact, reg) -> dict:
    """Metric report for one run: toy_bs with per-concept parts, moments and concept distances."""
    cfg = artifact.config
    concepts = [reg[lab] for lab in cfg.labels]
    x = artifact.samples
    refs = [artifact.references[:, k] for k in range(len(concepts))]
    out: dict = {"n_samples": int(x.shape[0])}
    out["toy_bs"] = toy_bs(x, refs, concepts)
    out["toy_bs_parts"] = toy_bs_parts(x, refs, concepts)
    means = [c.mixture.moments()[0] for c in concepts]
    if x.shape[0] >= 2:
        m, S = moment_stats(x)
        out["sample_mean"] = m.tolist()
        out["sample_cov"] = S.tolist()
    if len(concepts) == 2:
        out["concept_distance"] = float(np.linalg.norm(means[1] - means[0]))
        if out["concept_distance"] > 0:
            out["axis_projection"] = projection_on_axis(x, means[0], means[1])
        out["concept_w2"] = gaussian_w2(*concepts[0].mixture.moments(), *concepts[1].mixture.moments())
    trace = artifact.trajectories
    if trace is not None and np.any(np.isfinite(trace["post_dist"])):
        out["aux_distance_post"] = float(np.nanmean(trace["post_dist"]))
        out["aux_distance_pre"] = float(np.nanmean(trace["pre_dist"]))
    return out
