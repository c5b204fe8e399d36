"""Counter-based random draws keyed by (seed, stream, item, counter).

Every draw is a pure function of its key, so results do not depend on how
particles are split across threads or on the order work is scheduled.
The hash is the SplitMix64 finaliser applied three times over the key
components.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
ITEM_MUL = 0xD1B54A32D192ED03
COUNTER_MUL = 0xAEF17502108EF2D9
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TO_UNIT = 2.0**-53

STREAM_MOVE = 1
STREAM_PLACE = 2
STREAM_COUNT = 3

# Motion-stream counters are ``step << STEP_SHIFT | draw``.
STEP_SHIFT = 32


def mix_int(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed, stream):
    """64-bit key for one named stream of a run."""
    return mix_int(int(seed) + (stream + 1) * GOLDEN)


def item_key_int(key, item):
    return mix_int(key + (item + 1) * ITEM_MUL)


def uniform_int(key, item, counter):
    """Scalar uniform in [0, 1) for one (item, counter) of a stream."""
    h = mix_int(item_key_int(key, item) + (counter + 1) * COUNTER_MUL)
    return (h >> 11) * TO_UNIT


_U = np.uint64


def _mix_arr(z):
    z = (z ^ (z >> _U(30))) * _U(MIX1)
    z = (z ^ (z >> _U(27))) * _U(MIX2)
    return z ^ (z >> _U(31))


def item_keys(key, items):
    items = np.atleast_1d(np.asarray(items, dtype=np.uint64))
    return _mix_arr(_U(key) + (items + _U(1)) * _U(ITEM_MUL))


def uniforms_from_item_keys(ikeys, counter):
    """Uniforms for per-item keys; ``counter`` is an int or a uint64 array."""
    if isinstance(counter, np.ndarray):
        off = (counter.astype(np.uint64) + _U(1)) * _U(COUNTER_MUL)
    else:
        off = _U(((counter + 1) * COUNTER_MUL) & MASK64)
    h = _mix_arr(ikeys + off)
    return (h >> _U(11)).astype(np.float64) * TO_UNIT


def uniforms(key, items, counter):
    """Vector of uniforms in [0, 1), one per item, for a fixed counter."""
    return uniforms_from_item_keys(item_keys(key, items), counter)


class CounterStream:
    """One named stream of a seeded run."""

    def __init__(self, seed, stream):
        self.seed = int(seed)
        self.stream = stream
        self.key = stream_key(seed, stream)

    def uniform(self, item, counter):
        return uniform_int(self.key, item, counter)

    def uniforms(self, items, counter):
        return uniforms(self.key, items, counter)
