"""Counter-based random streams for reproducible experiments.

Every replication of every experiment draws from its own Philox substream,
keyed by (master seed, stream index). Philox is a counter-based generator
with 64-bit key words, so substreams are statistically independent and a
result never depends on how replications are scheduled across threads.
"""

import numpy as np


def substream(master_seed, stream_index=0):
    """Return a Generator for the given (master seed, stream index) pair.

    The same pair always yields the same stream, on any machine and under
    any thread count.
    """
    key = np.array([np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(stream_index & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
