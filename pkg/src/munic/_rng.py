"""Deterministic random streams keyed by (seed, purpose, index...).

Every random draw in the library comes from a stream that is a pure
function of the user seed and a key path, so results never depend on how
work is scheduled across threads.
"""

import numpy as np

TABLE = 0
TIES = 1
RECAL = 2
DATA = 3
RUN = 4

SEED_MAX = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)
