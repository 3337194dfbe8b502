#!/usr/bin/env python3
"""Multi-seed ablation sweep.

Runs every variant of one ablation axis for a range of master seeds and prints
the mean of each summary metric with its standard error, plus a paired
bootstrap interval for the toy_bs gap of every variant against the first one.

    python scripts/sweep.py --axis strategy --seeds 20
    python scripts/sweep.py --axis distance --seeds 5 --chains 1000 --csv out/distance.csv
"""

import argparse
import csv
import sys

import numpy as np

from blendlab.blend import AXES, run_ablation_suite
from blendlab.config import load_config

METRICS = ("toy_bs", "axis_projection", "aux_distance_post")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=AXES, required=True)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--chains", type=int, default=2000)
    ap.add_argument("--config", help="TOML config (defaults to the built-in two-concept suite)")
    ap.add_argument("--csv", help="write one row per (variant, seed) here")
    args = ap.parse_args(argv)

    loaded = load_config(args.config)
    base = loaded.run.replace(chains=args.chains, record_trajectories=args.axis == "feedback")
    rows = []
    for seed in range(args.seeds):
        for v, _, m in run_ablation_suite(base.replace(seed=seed), args.axis, loaded.registry):
            rows.append({"variant": v.name, "seed": seed, **{k: m.get(k, float("nan")) for k in METRICS}})
        print(f"seed {seed} done", file=sys.stderr)

    names = list(dict.fromkeys(r["variant"] for r in rows))
    table = {n: {k: np.array([r[k] for r in rows if r["variant"] == n]) for k in METRICS} for n in names}
    print(f"{'variant':<22}" + "".join(f"{k:>26}" for k in METRICS))
    for n in names:
        cells = []
        for k in METRICS:
            v = table[n][k]
            se = v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else float("nan")
            cells.append(f"{v.mean():>14.4f} +- {se:<8.4f}")
        print(f"{n:<22}" + "".join(f"{c:>26}" for c in cells))

    rng = np.random.default_rng(0)
    ref = table[names[0]]["toy_bs"]
    for n in names[1:]:
        gap = ref - table[n]["toy_bs"]
        boots = gap[rng.integers(0, len(gap), size=(10_000, len(gap)))].mean(axis=1)
        lo, hi = np.quantile(boots, [0.025, 0.975])
        print(f"toy_bs[{names[0]}] - toy_bs[{n}] = {gap.mean():+.4f}  95% CI [{lo:+.4f}, {hi:+.4f}]")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["variant", "seed", *METRICS])
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
