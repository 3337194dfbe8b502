"""TOML run configuration: strict parsing into registries and run configs."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .blend import DEFAULT_DISTANCES, DEFAULT_GAMMA_RATIOS, RunConfig
from .concepts import ConceptError, ConceptSpec, DenoiserRegistry
from .diffusion import DDPMVariance, Sampler
from .schedule import BlendPolicy, StageConfig, Strategy

DEFAULT_CONFIG = """\
# Two single-Gaussian concepts mirrored about the origin.
[schedule]
T = 50
beta_start = 0.001
beta_end = 0.3

[stages]
ts_frac = 0.88
te_frac = 0.12

[policy]
gammas = [1.0, 1.0]
strategy = "increase"
invariant_p = 0.5
w = 3.0
feedback = true

[[concepts]]
label = "left"
weights = [1.0]
means = [[-3.0, 0.0]]
covariances = [[[1.0, 0.0], [0.0, 1.0]]]

[[concepts]]
label = "right"
weights = [1.0]
means = [[3.0, 0.0]]
covariances = [[[1.0, 0.0], [0.0, 1.0]]]

[run]
blend = ["left", "right"]
dim = 2
sampler = "ddpm"
chains = 2000
seed = 42
record_trajectories = false

[output]
directory = "out"
formats = ["csv", "json", "svg"]
"""

SCHEMA: dict[str, set[str]] = {
    "schedule": {"T", "beta_start", "beta_end", "ddpm_variance"},
    "stages": {"t_s", "t_e", "ts_frac", "te_frac"},
    "policy": {"gammas", "strategy", "invariant_p", "w", "feedback"},
    "concepts": {"label", "weights", "means", "covariances"},
    "run": {
        "blend", "dim", "sampler", "chains", "seed", "record_trajectories",
        "reference_points", "init_stage", "refine_stage", "clip_x0",
    },
    "output": {"directory", "formats"},
    "ablation": {"gamma_ratios", "distances"},
}
FORMATS = {"csv", "json", "svg"}


class ConfigError(ValueError):
    """Invalid configuration file; the message names the offending field."""


@dataclass
class LoadedConfig:
    run: RunConfig
    registry: DenoiserRegistry
    out_dir: Path
    formats: tuple[str, ...]
    text: str
    gamma_ratios: tuple[float, ...] = DEFAULT_GAMMA_RATIOS
    distances: tuple[float, ...] = DEFAULT_DISTANCES
    raw: dict = field(default_factory=dict)


def _get(section: dict, name: str, key: str, kind, default: Any = None, required: bool = False):
    if key not in section:
        if required:
            raise ConfigError(f"[{name}].{key}: missing required field")
        return default
    val = section[key]
    try:
        if kind is float and isinstance(val, bool):
            raise TypeError
        if kind is int and (isinstance(val, bool) or int(val) != val):
            raise TypeError
        if kind is bool and not isinstance(val, bool):
            raise TypeError
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"[{name}].{key}: expected {kind.__name__}, got {val!r}") from None


def parse_config(text: str, source: str = "<config>") -> LoadedConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for name, body in doc.items():
        if name not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{name}]")
        tables = body if isinstance(body, list) else [body]
        for tab in tables:
            if not isinstance(tab, dict):
                raise ConfigError(f"{source}: [{name}] must be a table")
            extra = sorted(set(tab) - SCHEMA[name])
            if extra:
                raise ConfigError(f"{source}: unknown key(s) in [{name}]: {', '.join(extra)}")

    sch = doc.get("schedule", {})
    T = _get(sch, "schedule", "T", int, 50)
    beta_start = _get(sch, "schedule", "beta_start", float, 0.001)
    beta_end = _get(sch, "schedule", "beta_end", float, 0.3)
    try:
        variance = DDPMVariance(sch.get("ddpm_variance", "beta"))
    except ValueError:
        raise ConfigError(f"[schedule].ddpm_variance: expected 'beta' or 'posterior'") from None
    if T < 1:
        raise ConfigError("[schedule].T: must be a positive integer")
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigError("[schedule].beta_start/beta_end: need 0 < beta_start <= beta_end < 1")

    stg = doc.get("stages", {})
    if "t_s" in stg or "t_e" in stg:
        if "ts_frac" in stg or "te_frac" in stg:
            raise ConfigError("[stages]: give either t_s/t_e or ts_frac/te_frac, not both")
        stages = StageConfig(
            _get(stg, "stages", "t_s", int, required=True), _get(stg, "stages", "t_e", int, required=True)
        )
    else:
        ts_frac = _get(stg, "stages", "ts_frac", float, 0.88)
        te_frac = _get(stg, "stages", "te_frac", float, 0.12)
        stages = StageConfig.from_fractions(T, ts_frac, te_frac)
    try:
        stages.validate(T)
    except ValueError as exc:
        raise ConfigError(f"[stages]: {exc}") from None

    pol = doc.get("policy", {})
    gammas = pol.get("gammas", [1.0, 1.0])
    numeric = all(isinstance(g, (int, float)) and not isinstance(g, bool) for g in gammas or [None])
    if not isinstance(gammas, list) or not gammas or not numeric:
        raise ConfigError(f"[policy].gammas: expected a list of numbers, got {gammas!r}")
    try:
        strategy = Strategy(pol.get("strategy", "increase"))
    except ValueError:
        choices = [s.value for s in Strategy]
        raise ConfigError(f"[policy].strategy: expected one of {choices}, got {pol.get('strategy')!r}") from None
    try:
        policy = BlendPolicy(
            gammas=tuple(gammas),
            strategy=strategy,
            invariant_p=_get(pol, "policy", "invariant_p", float, 0.5),
            guidance_w=_get(pol, "policy", "w", float, 3.0),
            feedback_enabled=_get(pol, "policy", "feedback", bool, True),
        )
    except ValueError as exc:
        raise ConfigError(f"[policy]: {exc}") from None

    raw_concepts = doc.get("concepts")
    if not raw_concepts:
        raise ConfigError("[[concepts]]: at least one concept is required")
    if not isinstance(raw_concepts, list):
        raise ConfigError("[[concepts]]: must be an array of tables")
    concepts = []
    for i, c in enumerate(raw_concepts):
        label = c.get("label")
        if not isinstance(label, str) or not label:
            raise ConfigError(f"[[concepts]] #{i + 1}.label: expected a nonempty string")
        for key in ("weights", "means", "covariances"):
            if key not in c:
                raise ConfigError(f"concept {label!r}: missing field {key!r}")
        try:
            concepts.append(
                ConceptSpec.build(
                    label,
                    np.asarray(c["weights"], dtype=float),
                    np.asarray(c["means"], dtype=float),
                    np.asarray(c["covariances"], dtype=float),
                )
            )
        except ConceptError as exc:
            raise ConfigError(str(exc)) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"concept {label!r}: {exc}") from None
    try:
        reg = DenoiserRegistry(concepts)
    except ConceptError as exc:
        raise ConfigError(f"[[concepts]]: {exc}") from None

    run = doc.get("run", {})
    dim = _get(run, "run", "dim", int, reg.dim)
    if dim != reg.dim:
        raise ConfigError(f"[run].dim: {dim} does not match concept dimension {reg.dim}")
    labels = run.get("blend", reg.labels[:2])
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ConfigError(f"[run].blend: expected a list of concept labels, got {labels!r}")
    for lab in labels:
        if lab not in reg:
            raise ConfigError(f"[run].blend: unknown concept label {lab!r}")
    if len(labels) != policy.concept_count:
        raise ConfigError(f"[policy].gammas: {policy.concept_count} strengths for {len(labels)} blended concepts")
    try:
        sampler = Sampler(run.get("sampler", "ddpm"))
    except ValueError:
        raise ConfigError(f"[run].sampler: expected 'ddpm' or 'ddim', got {run.get('sampler')!r}") from None
    chains = _get(run, "run", "chains", int, 2000)
    if chains < 1:
        raise ConfigError("[run].chains: must be positive")
    seed = _get(run, "run", "seed", int, 0)
    refs = run.get("reference_points")
    if refs is not None:
        refs = np.asarray(refs, dtype=float)
        if refs.shape != (len(labels), reg.dim):
            raise ConfigError(f"[run].reference_points: expected shape {(len(labels), reg.dim)}, got {refs.shape}")
    clip = run.get("clip_x0")
    if clip is not None:
        clip = _get(run, "run", "clip_x0", float)
    cfg = RunConfig(
        labels=tuple(labels),
        T=T,
        beta_start=beta_start,
        beta_end=beta_end,
        stages=stages,
        policy=policy,
        reference_points=refs,
        sampler=sampler,
        ddpm_variance=variance,
        chains=chains,
        seed=seed,
        init_stage_on=_get(run, "run", "init_stage", bool, True),
        refine_stage_on=_get(run, "run", "refine_stage", bool, True),
        record_trajectories=_get(run, "run", "record_trajectories", bool, False),
        clip_x0=clip,
    )

    out = doc.get("output", {})
    formats = out.get("formats", ["csv", "json", "svg"])
    if not isinstance(formats, list) or not set(formats) <= FORMATS:
        raise ConfigError(f"[output].formats: expected a subset of {sorted(FORMATS)}, got {formats!r}")
    directory = out.get("directory", "out")
    if not isinstance(directory, str):
        raise ConfigError("[output].directory: expected a string")

    abl = doc.get("ablation", {})
    gr = tuple(float(x) for x in abl.get("gamma_ratios", DEFAULT_GAMMA_RATIOS))
    ds = tuple(float(x) for x in abl.get("distances", DEFAULT_DISTANCES))
    return LoadedConfig(cfg, reg, Path(directory), tuple(formats), text, gr, ds, doc)


def load_config(path: Optional[str | Path]) -> LoadedConfig:
    if path is None:
        return parse_config(DEFAULT_CONFIG, "<default>")
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def default_registry() -> DenoiserRegistry:
    return parse_config(DEFAULT_CONFIG).registry


def default_run_config(**changes) -> RunConfig:
    return parse_config(DEFAULT_CONFIG).run.replace(**changes)
