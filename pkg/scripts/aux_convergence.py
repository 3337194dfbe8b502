#!/usr/bin/env python3
"""Print the mean auxiliary-to-blend distance at each blending step, with and without feedback.

Both runs share common random numbers, so the two columns differ only through
the feedback update.
"""

import argparse
import dataclasses

from blendlab.blend import run_freeblend
from blendlab.config import load_config
from blendlab.metrics import aux_convergence_trace


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--chains", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    loaded = load_config(args.config)
    base = loaded.run.replace(chains=args.chains, seed=args.seed, record_trajectories=True)
    traces = {}
    for on in (True, False):
        cfg = base.replace(policy=dataclasses.replace(base.policy, feedback_enabled=on))
        art = run_freeblend(cfg, loaded.registry)
        traces[on] = (dict(aux_convergence_trace(art.trajectories, "pre")),
                      dict(aux_convergence_trace(art.trajectories, "post")))
        ratios = art.trajectories["ratios"]

    print(f"{'t':>4} {'p':>7} {'on/pre':>10} {'on/post':>10} {'off':>10}")
    for t in traces[True][1]:
        print(f"{t:>4} {ratios[t]:>7.3f} {traces[True][0][t]:>10.4f} {traces[True][1][t]:>10.4f} {traces[False][1][t]:>10.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
