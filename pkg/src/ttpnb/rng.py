"""Portable, seedable pseudorandom generator used for train/test splits.

Every site must derive the same row membership from a shared seed without
exchanging row lists, so splits cannot depend on numpy or CPython RNG
internals. The generator is fully specified here:

* Seeding: SplitMix64 (Steele, Lea & Flood 2014). Starting from the 64-bit
  state ``s``, each output is ``s += 0x9E3779B97F4A7C15`` followed by the
  ``mix64`` finalizer below.
* Stream: xoshiro256** (Blackman & Vigna 2018), with its 256-bit state filled
  by four consecutive SplitMix64 outputs.
* Bounded integers: rejection sampling. A draw ``r`` is rejected while
  ``r < (2**64 - bound) % bound``; otherwise the result is ``r % bound``.
* Shuffle: Fisher-Yates from the top, ``for i = n-1 .. 1: j = below(i+1);
  swap(a[i], a[j])``.

All arithmetic is modulo 2**64, so results are identical on every platform.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)


class Xoshiro256:
    """xoshiro256** seeded through SplitMix64."""

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    @classmethod
    def for_stream(cls, seed: int, stream: int) -> "Xoshiro256":
        # Independent substreams (e.g. one per repeat) from one shared seed.
        return cls(mix64((seed & MASK64) ^ mix64((stream + 1) * GOLDEN_GAMMA & MASK64)))

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)``."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
