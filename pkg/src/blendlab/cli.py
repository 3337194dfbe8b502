"""Command-line entry point: ``blendlab blend | ablate | verify``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .blend import AXES, NumericalError, RunArtifact, run_ablation_suite, run_freeblend
from .concepts import ConceptError
from .config import ConfigError, LoadedConfig, load_config
from .metrics import aux_convergence_trace
from .plot import emit_svg

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("blendlab")


def _num(x: float) -> str:
    return repr(float(x))


def write_samples_csv(path: Path, runs: Sequence[tuple[str, np.ndarray]]) -> None:
    d = runs[0][1].shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "chain"] + [f"x{i}" for i in range(d)])
        for run_id, x in runs:
            for c, row in enumerate(x):
                w.writerow([run_id, c] + [_num(v) for v in row])


def write_trajectory_csv(path: Path, art: RunArtifact) -> None:
    tr = art.trajectories
    blend, aux = tr["blend"], tr["aux"]
    n, T1, d = blend.shape
    stage = tr["stage"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "t", "stage", "latent", "k"] + [f"x{i}" for i in range(d)])
        for c in range(n):
            for t in range(T1 - 1, -1, -1):
                st = stage[t].value if t > 0 else "final"
                w.writerow([c, t, st, "blend", ""] + [_num(v) for v in blend[c, t]])
                if t > 0 and not np.isnan(aux[c, t, 0, 0]):
                    for k in range(aux.shape[2]):
                        w.writerow([c, t, st, "aux", k] + [_num(v) for v in aux[c, t, k]])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def metrics_document(art: RunArtifact) -> dict:
    doc = dict(art.metrics)
    tr = art.trajectories
    pre = dict(aux_convergence_trace(tr, "pre")) if tr is not None else {}
    post = dict(aux_convergence_trace(tr, "post")) if tr is not None else {}
    doc["aux_convergence"] = [
        {"t": t, "p": tr["ratios"][t], "pre": pre[t], "post": post[t]} for t in sorted(post, reverse=True)
    ]
    doc["seed"] = art.config.seed
    doc["chains"] = art.config.chains
    return doc


def write_bundle(out: Path, art: RunArtifact, loaded: LoadedConfig, run_id: str = "run") -> None:
    out.mkdir(parents=True, exist_ok=True)
    fmts = set(loaded.formats)
    if "csv" in fmts:
        write_samples_csv(out / "samples.csv", [(run_id, art.samples)])
        if art.config.record_trajectories:
            write_trajectory_csv(out / "trajectory.csv", art)
    if "json" in fmts:
        write_json(out / "metrics.json", metrics_document(art))
    if "svg" in fmts:
        reg = art_registry(art, loaded)
        emit_svg({run_id: art.samples}, [reg[lab] for lab in art.config.labels], out / "plot.svg", title=run_id)
    write_json(
        out / "manifest.json",
        {"version": __version__, "seed": art.config.seed, "chains": art.config.chains, "config": loaded.text},
    )


def art_registry(art: RunArtifact, loaded: LoadedConfig):
    return getattr(art, "registry", None) or loaded.registry


def _load(args) -> LoadedConfig:
    loaded = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.chains is not None:
        if args.chains < 1:
            raise ConfigError("--chains must be positive")
        changes["chains"] = args.chains
    if getattr(args, "trajectories", False):
        changes["record_trajectories"] = True
    if changes:
        loaded.run = loaded.run.replace(**changes)
    if args.out is not None:
        loaded.out_dir = Path(args.out)
    return loaded


def cmd_blend(args) -> int:
    loaded = _load(args)
    art = run_freeblend(loaded.run, loaded.registry)
    write_bundle(loaded.out_dir, art, loaded)
    print(f"toy_bs={art.metrics['toy_bs']:.6f} chains={art.config.chains} seed={art.config.seed} "
          f"time={art.duration:.2f}s -> {loaded.out_dir}")
    return EXIT_OK


SUMMARY_KEYS = ("toy_bs", "axis_projection", "concept_distance", "concept_w2", "aux_distance_pre", "aux_distance_post")


def cmd_ablate(args) -> int:
    loaded = _load(args)
    base = loaded.run
    if args.axis == "feedback":
        base = base.replace(record_trajectories=True)
    results = run_ablation_suite(
        base, args.axis, loaded.registry, gamma_ratios=loaded.gamma_ratios, distances=loaded.distances
    )
    out = loaded.out_dir
    out.mkdir(parents=True, exist_ok=True)
    param_keys = sorted({k for v, _, _ in results for k in v.params})
    rows = []
    for v, art, m in results:
        art.registry = v.registry
        write_bundle(out / v.name, art, loaded, run_id=v.name)
        row = [v.name] + [v.params.get(k, "") for k in param_keys]
        row += [_num(m[k]) if k in m else "" for k in SUMMARY_KEYS]
        row += [_num(m["toy_bs_parts"][lab]) for lab in art.config.labels]
        rows.append(row)
        print(f"{v.name:<22} toy_bs={m['toy_bs']:.4f} projection={m.get('axis_projection', float('nan')):+.4f}")
    labels = results[0][1].config.labels
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant"] + param_keys + list(SUMMARY_KEYS) + [f"toy_bs[{lab}]" for lab in labels])
        w.writerows(rows)
    with open(out / "aux_convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "t", "p", "pre", "post"])
        for v, art, _ in results:
            doc = metrics_document(art)
            for r in doc["aux_convergence"]:
                w.writerow([v.name, r["t"], _num(r["p"]), _num(r["pre"]), _num(r["post"])])
    if "svg" in loaded.formats and args.axis != "distance":
        emit_svg(
            {v.name: art.samples for v, art, _ in results},
            [loaded.registry[lab] for lab in base.labels],
            out / "plot.svg",
            title=f"ablation: {args.axis}",
        )
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import default_suite

    reports = default_suite(full=args.full, seed=args.seed or 0)
    for r in reports:
        print(r.row())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blendlab", description=__doc__)
    ap.add_argument("--version", action="version", version=f"blendlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration (default: bundled two-concept demo)")
        p.add_argument("--seed", type=int, help="override [run].seed")
        p.add_argument("--out", help="override [output].directory")
        p.add_argument("--chains", type=int, help="override [run].chains")

    p = sub.add_parser("blend", help="run the blending pipeline and write an output bundle")
    common(p)
    p.add_argument("--trajectories", action="store_true", help="record per-timestep latents")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("ablate", help="run one ablation axis with common random numbers")
    common(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--trajectories", action="store_true", help="record per-timestep latents")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--full", action="store_true", help="larger trial and chain counts")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConceptError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
