"""Deterministic splittable random streams.

Every stochastic operation in the package draws from an :class:`RngStream`.
A stream is identified by a 64-bit root seed plus a derivation path of
64-bit labels; identical paths always reproduce identical draw sequences,
so any result is a pure function of the root seed and the labels consumed
along the way.

Stream derivation uses the SplitMix64 finalizer (Steele, Lea & Flood 2014;
constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB).
Bulk draws come from numpy's Philox 4x64 counter-based generator keyed by
the derived state, which is specified by published constants and does not
depend on platform default generators.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One SplitMix64 finalizer round (input and output are uint64)."""
    x &= _MASK64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _MASK64
    return x ^ (x >> 31)


def _mix(state: int, label: int) -> int:
    # Two dependent rounds make the mix order-sensitive in the path:
    # mixing label a then b differs from b then a.
    h = _splitmix64((state + _GAMMA) & _MASK64)
    h = _splitmix64((h ^ (label & _MASK64)) + _GAMMA & _MASK64)
    return h


class RngStream:
    """Value-like random stream; children are derived, never shared."""

    __slots__ = ("state", "path", "_gen")

    def __init__(self, state: int, path: tuple[int, ...] = ()):
        self.state = state & _MASK64
        self.path = path
        self._gen = None

    @classmethod
    def from_seed(cls, seed: int) -> "RngStream":
        return cls(_splitmix64(seed))

    def derive(self, label: int) -> "RngStream":
        """Child stream for `label`; pure function of (state, label)."""
        return RngStream(_mix(self.state, label), self.path + (label & _MASK64,))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=self.state))
        return self._gen

    # -- scalar draws ------------------------------------------------------

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return float(self.generator.random())

    def gaussian(self) -> float:
        """One standard normal double."""
        return float(self.generator.standard_normal())

    def randint(self, n: int) -> int:
        """Unbiased integer in {0..n-1} via rejection on raw 64-bit words."""
        if n < 1:
            raise ValueError(f"randint needs n >= 1, got {n}")
        if n == 1:
            return 0
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = int(self.generator.integers(0, 1 << 64, dtype=np.uint64))
            if u < limit:
                return u % n

    # -- bulk draws --------------------------------------------------------

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def random(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by randint draws."""
        out = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def __repr__(self) -> str:
        return f"RngStream(state={self.state:#018x}, path={self.path})"


def hash_label(text: str) -> int:
    """Stable 64-bit FNV-1a hash, for deriving streams from string ids."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h
