"""Counter-based per-chain random streams.

Every (master seed, chain index, stream id) triple addresses its own Philox
stream: the key holds the seed and chain, the third counter word holds the
stream id. A chain's draws therefore do not depend on how many other chains
exist, how they are batched, or which toggles consume which streams.
"""
from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1

# stream ids
BLEND = 0
REF_COMPONENT = 1
REF_NORMAL = 2
AUX_INIT = 3
AUX_STEP = 16  # aux k uses AUX_STEP + k


def chain_generator(master_seed: int, chain: int, stream: int = BLEND) -> np.random.Generator:
    bitgen = np.random.Philox(key=[master_seed & SEED_MASK, chain], counter=[0, 0, stream, 0])
    return np.random.Generator(bitgen)


def normals(master_seed: int, chains, stream: int, shape: tuple[int, ...]) -> np.ndarray:
    """Stack ``standard_normal(shape)`` from each chain's stream: (len(chains), *shape)."""
    out = np.empty((len(chains),) + tuple(shape))
    for i, c in enumerate(chains):
        out[i] = chain_generator(master_seed, int(c), stream).standard_normal(shape)
    return out


def uniforms(master_seed: int, chains, stream: int, shape: tuple[int, ...]) -> np.ndarray:
    out = np.empty((len(chains),) + tuple(shape))
    for i, c in enumerate(chains):
        out[i] = chain_generator(master_seed, int(c), stream).random(shape)
    return out
