"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream)``, so independent
streams can be handed to parallel tasks and replayed bit-for-bit on any
platform.
"""
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass
class RngState:
    seed: int
    stream: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream = int(self.stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self):
        return self._gen

    def spawn(self, stream):
        """Independent stream derived from the same seed."""
        return RngState(self.seed, (self.stream * 1_000_003 + int(stream) + 1) & _MASK64)

    # thin forwarding so callers can treat this like a numpy Generator
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self._gen.permutation(x)


def make_rng(seed, stream=0):
    return RngState(seed, stream)
