"""Seed-substream derivation.

Every random draw in a run comes from a generator keyed by
(master_seed, realm, *indices).  Substreams are independent of execution
order and thread count, so a fixed master seed reproduces a run exactly
no matter how the work is scheduled.
"""

import numpy as np

# Realm tags; values are part of the reproducibility contract.
REALM_DATA = 0       # synthetic dataset generation
REALM_TOPOLOGY = 1   # channel-gain draw used to build the graph
REALM_SAMPLE = 2     # per-device SAGA sample indices, key: (rep, device)
REALM_CHANNEL = 3    # per-block fading + noise, key: (rep, iteration, receiver)
REALM_MISC = 4       # anything else (solver starts, test probes)


def substream(master_seed, realm, *key):
    """Independent Generator for (master_seed, realm, *key)."""
    entropy = (int(master_seed), int(realm)) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
