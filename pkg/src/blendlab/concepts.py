"""Gaussian-mixture concepts and their exact noise predictor.

A concept is a labelled Gaussian mixture in R^d. Because forward noising maps a
Gaussian mixture to another Gaussian mixture in closed form, the optimal noise
prediction at every timestep is available exactly and stands in for a trained
network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .schedule import NoiseSchedule

MAX_CONDITION_NUMBER = 1e12
_LOG_2PI = np.log(2.0 * np.pi)


class ConceptError(ValueError):
    """Invalid concept definition or unresolved label."""


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covs, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        K, d = mu.shape
        if w.shape != (K,) or cov.shape != (K, d, d):
            raise ConceptError(f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @cached_property
    def _factors(self):
        precs, logdets = [], []
        eye = np.eye(self.dim)
        for c in self.covs:
            cf = cho_factor(c, lower=True)
            precs.append(cho_solve(cf, eye))
            logdets.append(2.0 * np.sum(np.log(np.diag(cf[0]))))
        precs = np.array(precs)
        # symmetrize so that per-row arithmetic is reproducible
        precs = 0.5 * (precs + np.transpose(precs, (0, 2, 1)))
        return precs, np.array(logdets)

    def _component_terms(self, z: np.ndarray):
        precs, logdets = self._factors
        diff = z[:, None, :] - self.means[None, :, :]  # (n, K, d)
        pdiff = np.einsum("kij,nkj->nki", precs, diff)
        quad = np.einsum("nki,nki->nk", diff, pdiff)
        logp = np.log(self.weights)[None, :] - 0.5 * (quad + logdets[None, :] + self.dim * _LOG_2PI)
        return logp, pdiff

    def log_prob(self, z) -> np.ndarray:
        z = _as_batch(z, self.dim)
        logp, _ = self._component_terms(z)
        return logsumexp(logp, axis=1)

    def score(self, z) -> np.ndarray:
        """Gradient of the log-density, evaluated row-wise."""
        z_in = np.asarray(z, dtype=float)
        z = _as_batch(z_in, self.dim)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite latent passed to score")
        logp, pdiff = self._component_terms(z)
        r = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        out = -np.einsum("nk,nki->ni", r, pdiff)
        return out.reshape(z_in.shape)

    def sample_from(self, u: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Transform uniforms ``u`` (n,) and standard normals ``eps`` (n, d) into draws."""
        cdf = np.cumsum(self.weights)
        comp = np.minimum(np.searchsorted(cdf, u, side="right"), self.n_components - 1)
        chol = np.linalg.cholesky(self.covs)
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.weights @ self.means
        dev = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum("k,ki,kj->ij", self.weights, dev, dev)
        return mean, cov

    def translated(self, v) -> "GaussianMixture":
        return GaussianMixture(self.weights, self.means + np.asarray(v, dtype=float), self.covs)


def _as_batch(z: np.ndarray, d: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != d:
        raise ValueError(f"latent dimension {z.shape[-1]} does not match mixture dimension {d}")
    return z.reshape(-1, d)


def union(parts: Sequence[tuple[GaussianMixture, float]]) -> GaussianMixture:
    return GaussianMixture(
        np.concatenate([m.weights * w for m, w in parts]),
        np.concatenate([m.means for m, _ in parts]),
        np.concatenate([m.covs for m, _ in parts]),
    )


@dataclass(frozen=True, eq=False)
class ConceptSpec:
    label: str
    mixture: GaussianMixture

    @classmethod
    def build(cls, label: str, weights, means, covariances) -> "ConceptSpec":
        try:
            mix = GaussianMixture(weights, means, covariances)
        except (ValueError, TypeError) as exc:
            raise ConceptError(f"concept {label!r}: {exc}") from None
        w = mix.weights
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConceptError(f"concept {label!r}: weights must be positive and sum to 1")
        for i, c in enumerate(mix.covs):
            if not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c).max())):
                raise ConceptError(f"concept {label!r}: covariance {i} is not symmetric")
            ev = np.linalg.eigvalsh(c)
            if ev[0] <= 0:
                raise ConceptError(f"concept {label!r}: covariance {i} is not positive definite")
            if ev[-1] / ev[0] > MAX_CONDITION_NUMBER:
                raise ConceptError(f"concept {label!r}: covariance {i} is ill-conditioned")
        if not np.all(np.isfinite(mix.means)):
            raise ConceptError(f"concept {label!r}: non-finite mean")
        return cls(label, mix)

    @property
    def dim(self) -> int:
        return self.mixture.dim


# Conditions -----------------------------------------------------------------

@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class Single:
    label: str


@dataclass(frozen=True)
class Pair:
    down: str
    up: str


@dataclass(frozen=True)
class Weighted:
    items: tuple[tuple[str, float], ...]

    def __post_init__(self):
        items = tuple((str(k), float(w)) for k, w in self.items)
        object.__setattr__(self, "items", items)
        if not items or any(w <= 0 for _, w in items):
            raise ConceptError("weighted condition needs positive weights")
        if abs(sum(w for _, w in items) - 1.0) > 1e-12:
            raise ConceptError("weighted condition weights must sum to 1")


Condition = Union[Null, Single, Pair, Weighted]


def marginal_at(mix: GaussianMixture, t: int, schedule: NoiseSchedule) -> GaussianMixture:
    """Law of ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` for ``x0 ~ mix``."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bars[t]
    if ab == 1.0:
        return mix
    eye = np.eye(mix.dim)
    return GaussianMixture(mix.weights, np.sqrt(ab) * mix.means, ab * mix.covs + (1.0 - ab) * eye)


def score(mix: GaussianMixture, z) -> np.ndarray:
    return mix.score(z)


class DenoiserRegistry:
    """Immutable label -> concept map with cached noised marginals."""

    def __init__(self, concepts: Sequence[ConceptSpec] | Mapping[str, ConceptSpec]):
        if isinstance(concepts, Mapping):
            concepts = list(concepts.values())
        if not concepts:
            raise ConceptError("registry needs at least one concept")
        self._concepts: dict[str, ConceptSpec] = {}
        for c in concepts:
            if c.label in self._concepts:
                raise ConceptError(f"duplicate concept label {c.label!r}")
            self._concepts[c.label] = c
        dims = {c.dim for c in concepts}
        if len(dims) != 1:
            raise ConceptError(f"concepts have mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()
        self._cache: dict = {}

    def __contains__(self, label: str) -> bool:
        return label in self._concepts

    def __getitem__(self, label: str) -> ConceptSpec:
        try:
            return self._concepts[label]
        except KeyError:
            raise ConceptError(f"unknown concept label {label!r}") from None

    @property
    def labels(self) -> list[str]:
        return list(self._concepts)

    def resolve(self, cond: Condition) -> GaussianMixture:
        if isinstance(cond, Null):
            w = 1.0 / len(self._concepts)
            return union([(c.mixture, w) for c in self._concepts.values()])
        if isinstance(cond, Single):
            return self[cond.label].mixture
        if isinstance(cond, Pair):
            return union([(self[cond.down].mixture, 0.5), (self[cond.up].mixture, 0.5)])
        if isinstance(cond, Weighted):
            return union([(self[k].mixture, w) for k, w in cond.items])
        raise TypeError(f"not a condition: {cond!r}")

    def marginal(self, cond: Condition, t: int, schedule: NoiseSchedule) -> GaussianMixture:
        key = (cond, float(schedule.alpha_bars[t]))
        mix = self._cache.get(key)
        if mix is None:
            mix = marginal_at(self.resolve(cond), t, schedule)
            mix._factors  # warm the Cholesky cache before any thread shares it
            self._cache[key] = mix
        return mix


def resolve_condition(reg: DenoiserRegistry, cond: Condition) -> GaussianMixture:
    return reg.resolve(cond)


def predict_noise(reg: DenoiserRegistry, z, t: int, cond: Condition, schedule: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction ``-sqrt(1 - abar_t) * grad log p_t(z | cond)``."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    mix = reg.marginal(cond, t, schedule)
    return -np.sqrt(1.0 - schedule.alpha_bars[t]) * mix.score(z)
