"""Provide the seeded random source used by every sampler."""
import math

import numpy as np

_TWO_POW_M53 = 2.0 ** -53


class Rng:
    """Represent a reproducible stream of uniform doubles.

    The stream is the raw 64-bit output of numpy's PCG64 bit generator.
    Every scalar draw consumes exactly one raw word and maps it to
    ``(word >> 11) * 2**-53`` so results do not depend on the platform.
    Derived samplers use the following rules:

    * categorical: one uniform compared against the cumulative row,
    * geometric with continuation ``p``: ``floor(log(1 - u) / log(p))``,
    * Gaussian: Box-Muller, two uniforms per pair, second value cached.
    """

    def __init__(self, seed, stream=()):
        """Set up instance."""
        self.seed = int(seed)
        self.stream = tuple(int(key) for key in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._bits = np.random.PCG64(sequence)
        self._gauss = None
        self.draws = 0

    def spawn(self, index):
        """Return an independent child stream."""
        return Rng(self.seed, self.stream + (index,))

    def random(self) -> float:
        """Return one uniform double in [0, 1)."""
        self.draws += 1
        return (int(self._bits.random_raw()) >> 11) * _TWO_POW_M53

    def randoms(self, size) -> np.ndarray:
        """Return an array of uniform doubles in [0, 1)."""
        count = int(np.prod(size))
        self.draws += count
        raw = self._bits.random_raw(count)
        values = (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
        return values.reshape(size)

    def integer(self, high) -> int:
        """Return a uniform integer in [0, high)."""
        return min(int(self.random() * high), high - 1)

    def integers(self, high, size) -> np.ndarray:
        """Return uniform integers in [0, high)."""
        values = (self.randoms(size) * high).astype(np.int64)
        return np.minimum(values, np.asarray(high) - 1)

    def categorical(self, probs) -> int:
        """Return an index drawn from a probability vector."""
        cdf = np.cumsum(probs)
        index = int(np.searchsorted(cdf, self.random() * cdf[-1], side="right"))
        return min(index, len(cdf) - 1)

    def categoricals(self, probs) -> np.ndarray:
        """Return one index per row of a batch of probability vectors."""
        cdf = np.cumsum(probs, axis=-1)
        draws = self.randoms(cdf.shape[:-1]) * cdf[..., -1]
        index = (draws[..., None] >= cdf).sum(axis=-1)
        return np.minimum(index, cdf.shape[-1] - 1)

    def bernoulli(self, prob) -> bool:
        """Return True with the given probability."""
        return self.random() < prob

    def geometric(self, continuation) -> int:
        """Return k with probability ``(1 - p) * p**k``."""
        uniform = self.random()
        if continuation <= 0.0:
            return 0
        return int(math.floor(math.log1p(-uniform) / math.log(continuation)))

    def normal(self) -> float:
        """Return one standard normal draw."""
        if self._gauss is not None:
            value, self._gauss = self._gauss, None
            return value
        first, second = self._box_muller(self.random(), self.random())
        self._gauss = second
        return first

    def normals(self, size) -> np.ndarray:
        """Return an array of standard normal draws."""
        count = int(np.prod(size))
        pairs = (count + 1) // 2
        uniforms = self.randoms((pairs, 2))
        first, second = self._box_muller(uniforms[:, 0], uniforms[:, 1])
        values = np.stack([first, second], axis=1).reshape(-1)[:count]
        return values.reshape(size)

    @staticmethod
    def _box_muller(first, second):
        radius = np.sqrt(-2.0 * np.log1p(-first))
        angle = 2.0 * np.pi * second
        return radius * np.cos(angle), radius * np.sin(angle)
