"""Counter-based random streams.

Every unit of work (one field realization, one channel's noise, ...) gets its
own Philox stream keyed by (seed, *key).  Results therefore do not depend on
the order in which units are scheduled or on the number of workers.
"""

import numpy as np

# stream purposes, used as the first element of a key
FIELD = 0
NOISE = 1
CALIBRATION = 2
JITTER = 3
NOISE_SLOT = 1 << 20


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit child seed for the given key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
