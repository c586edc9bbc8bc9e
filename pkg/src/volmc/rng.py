"""Counter-based random streams.

A stream is a 64-bit key; its i-th output is ``splitmix64(key + (i+1)*gamma)``.
Keys are derived from ``(seed, pixel, trial, purpose)`` through the same
finalizer, so any pixel/trial can be regenerated independently of batching or
thread count.
"""

import enum

import numpy as np
from scipy.special import ndtri

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class Purpose(enum.IntEnum):
    PARTITION = 1
    SURFACE = 2
    FAST = 3
    DELTA = 4
    PLAIN = 5
    SMOOTH = 6
    BATCH = 7
    FIT = 8
    INIT = 9
    INNER = 10


def mix64(z):
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def stream_key(seed, *ids):
    """Mix a seed with any number of integer ids (scalars or arrays) into keys."""
    key = mix64(np.uint64(int(seed) & _MASK))
    with np.errstate(over="ignore"):
        for i in ids:
            i = np.asarray(i).astype(np.uint64)
            key = mix64(key ^ mix64(i + _GAMMA))
    return key


def uniforms(keys, n, start=0):
    """Block of uniforms in [0, 1): shape ``keys.shape + (n,)``."""
    keys = np.asarray(keys, dtype=np.uint64)
    ctr = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(keys[..., None] + ctr * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


class RngStream:
    """Sequential view of one counter-based stream.

    Exposes the small subset of ``numpy.random.Generator`` used in the
    package (``random``, ``normal``, ``integers``, ``uniform``) so either can
    be passed wherever an ``rng`` is expected.
    """

    def __init__(self, seed, *ids):
        self.seed = int(seed)
        self.ids = tuple(int(i) for i in ids)
        self.key = stream_key(self.seed, *self.ids)
        self.counter = 0

    def spawn(self, *ids):
        return RngStream(self.seed, *self.ids, *ids)

    def random(self, size=None):
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape)) if shape else 1
        out = uniforms(self.key, n, self.counter)
        self.counter += n
        return out.reshape(shape) if shape else float(out[0])

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        u = self.random(size)
        # avoid ndtri(0) = -inf
        u = np.clip(u, 2.0**-60, None)
        return loc + scale * ndtri(u)

    def integers(self, low, high=None, size=None):
        if high is None:
            low, high = 0, low
        return (low + np.floor(self.random(size) * (high - low))).astype(np.int64)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, ids={self.ids}, counter={self.counter})"


def as_generator(rng):
    """Accept an int seed, a Generator or an RngStream."""
    if rng is None:
        return np.random.default_rng()
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    return rng
