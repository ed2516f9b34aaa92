"""Counter-based random streams.

Every draw is a pure function of ``(seed, purpose tag, unit index, draw
slot)``, so generating units in any order, in any number of chunks or
threads, yields bit-identical values.  The mixing function is the
SplitMix64 finalizer applied to a keyed counter.
"""
import zlib

import numpy as np
from scipy import special, stats

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    with np.errstate(over="ignore"):
        z = z ^ (z >> np.uint64(30))
        z = z * _M1
        z = z ^ (z >> np.uint64(27))
        z = z * _M2
        return z ^ (z >> np.uint64(31))


def _tag_code(tag):
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag)


class Stream:
    """A keyed family of uniform variates indexed by (unit, slot).

    Parameters
    ----------
    seed : int
        64-bit master seed (negative or larger values are reduced mod 2**64).
    tag : str or int
        Purpose tag; different tags give statistically independent streams.
    """

    def __init__(self, seed, tag):
        self.seed = int(seed) & _MASK64
        self.tag = tag
        s = _mix(np.array([self.seed], dtype=np.uint64))
        with np.errstate(over="ignore"):
            k = _mix(s ^ np.uint64(_tag_code(tag) & _MASK64))
        self._key = k[0]

    def uniform(self, index, slot=0):
        """Uniform(0, 1) draws, open at both ends, one per entry of ``index``."""
        index = np.asarray(index, dtype=np.uint64)
        with np.errstate(over="ignore"):
            base = _mix(self._key + index * _GOLDEN)
            z = _mix(base + np.uint64(slot + 1) * _GOLDEN)
        # 53 high bits, shifted by half an ulp so 0 and 1 never occur
        return ((z >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0

    def normal(self, index, slot=0):
        return special.ndtri(self.uniform(index, slot))

    def exponential(self, index, slot=0, rate=1.0):
        return -np.log(self.uniform(index, slot)) / rate

    def poisson(self, index, lam, slot=0):
        return stats.poisson.ppf(self.uniform(index, slot), lam)

    def bernoulli(self, index, p, slot=0):
        return (self.uniform(index, slot) < p).astype(np.int8)


def child_seed(seed, *labels):
    """Derive a 64-bit seed from a parent seed and any number of labels."""
    z = np.array([int(seed) & _MASK64], dtype=np.uint64)
    for lab in labels:
        with np.errstate(over="ignore"):
            z = _mix(z ^ np.uint64(_tag_code(lab) & _MASK64)) + _GOLDEN
    return int(_mix(z)[0])


def generator(seed, *labels):
    """A numpy Generator seeded deterministically from ``seed`` and labels."""
    return np.random.default_rng(child_seed(seed, *labels))
