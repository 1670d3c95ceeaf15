"""Stateless 64-bit seed derivation and counter-based uniforms.

Every random quantity in the package is a pure function of a 64-bit seed and
one or more integer counters.  The mixing function is the SplitMix64
finalizer: ``derive(seed, i)`` is the ``i``-th output of a SplitMix64 stream
started at ``seed``, computed without any state.  Because nothing is
sequential, work can be split across any number of workers and the results
are bit-identical.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

#: Recorded in every report so the derivation can be reproduced elsewhere.
MIXING_FUNCTION = {
    "name": "splitmix64",
    "derive": "finalize(seed + (index + 1) * gamma mod 2^64)",
    "finalize": "z ^= z >> 30; z *= m1; z ^= z >> 27; z *= m2; z ^= z >> 31",
    "gamma": hex(GAMMA),
    "m1": hex(MIX1),
    "m2": hex(MIX2),
    "uniform": "((h >> 11) + 0.5) / 2^53",
}

_GAMMA = np.uint64(GAMMA)
_MIX1 = np.uint64(MIX1)
_MIX2 = np.uint64(MIX2)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(seed, index):
    """Scalar version of :func:`derive_seeds` on Python integers."""
    z = (int(seed) + (int(index) + 1) * GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seeds(seed, index):
    """Vectorized ``derive_seed``; ``seed`` and ``index`` broadcast."""
    seed = np.asarray(seed, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = seed + (index + np.uint64(1)) * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def trial_seeds(seed, trials, offset=0):
    """Per-trial seeds ``derive(seed, offset + t)`` for ``t < trials``."""
    return derive_seeds(np.uint64(check_seed(seed)), np.arange(offset, offset + trials, dtype=np.uint64))


def uniforms(seeds, count, start=0):
    """Open-interval uniforms, shape ``(len(seeds), count)``.

    Entry ``[t, i]`` depends only on ``(seeds[t], start + i)``.
    """
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
    idx = np.arange(start, start + count, dtype=np.uint64).reshape(1, -1)
    h = derive_seeds(seeds, idx)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def random_bits(seed, blocks):
    """Integer with ``64 * blocks`` bits; block ``j`` comes from ``derive(seed, j)``.

    Extending ``blocks`` appends low-order bits and leaves the leading bits
    unchanged, so larger precisions refine the same underlying real.
    """
    value = 0
    for j in range(blocks):
        value = (value << 64) | derive_seed(seed, j)
    return value
