#!/usr/bin/env python3
"""Render snapshots of the blend latent at a few timesteps into one SVG.

Each snapshot becomes its own point layer, so the figure shows the cloud
contracting from the noise prior onto the blended region.
"""

import argparse
from pathlib import Path

from blendlab.blend import run_freeblend
from blendlab.config import load_config
from blendlab.plot import emit_svg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--chains", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, nargs="+", default=[50, 44, 25, 6, 0])
    ap.add_argument("--out", default="out/trajectory.svg")
    args = ap.parse_args(argv)

    loaded = load_config(args.config)
    cfg = loaded.run.replace(chains=args.chains, seed=args.seed, record_trajectories=True)
    art = run_freeblend(cfg, loaded.registry)
    blend = art.trajectories["blend"]
    runs = {f"t={t}": blend[:, t] for t in args.steps if 0 <= t <= cfg.T}
    concepts = [loaded.registry[lab] for lab in cfg.labels]
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    emit_svg(runs, concepts, path, title="blend latent by timestep")
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
