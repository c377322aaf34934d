"""Numeric substrate: dense float64 arrays, activations, a reproducible RNG and quantiles.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).

The random generator is SplitMix64 run in counter mode.  For a 64-bit seed
``s`` the i-th output (i = 0, 1, 2, ...) is::

    z = s + (i + 1) * 0x9E3779B97F4A7C15            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

and a uniform double in [0, 1) is ``(z >> 11) * 2**-53``.  The stream is a
pure function of (seed, index), so any language with 64-bit unsigned
arithmetic reproduces it exactly.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D matrices, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64)) + 0.5


def activate(x, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(np.asarray(x, dtype=np.float64))
    raise ValueError(f"unknown activation {kind!r}")


def splitmix64(x: int) -> int:
    """One SplitMix64 finalization of a Python int (used for seed derivation)."""
    z = (x + GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-mode SplitMix64 generator.

    Single-owner mutable state (the counter).  Use :meth:`derive` to obtain
    independent substreams keyed by integers.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform_range(self, low: float, high: float, shape) -> np.ndarray:
        size = int(np.prod(shape))
        return (low + (high - low) * self.uniform(size)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # random-key shuffle; keys are distinct with overwhelming probability and
        # the stable sort keeps the result defined even if they are not
        return np.argsort(self.next_u64(n), kind="stable")

    def derive(self, *keys: int) -> "Rng":
        """New generator whose seed mixes this seed with ``keys``.

        Does not advance this generator.
        """
        s = self.seed
        for k in keys:
            s = splitmix64(s ^ splitmix64(int(k) & _MASK64))
        return Rng(s)


def sample_mask(rng: Rng, length: int, drop_rate: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``drop_rate``, else 1/(1-drop_rate).

    Always consumes ``length`` draws, so stream positions do not depend on the rate.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
    u = rng.uniform(length)
    return masks_from_uniform(u, drop_rate)


def masks_from_uniform(u: np.ndarray, drop_rate: float) -> np.ndarray:
    keep = 1.0 - drop_rate
    return np.where(u >= drop_rate, 1.0 / keep, 0.0)


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile of ``values`` at fraction ``q``."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of empty input")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    return _interp(v, q)


def quantiles(values, qs) -> list[float]:
    """Several quantiles from a single sort."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of empty input")
    return [_interp(v, q) for q in qs]


def _interp(v: np.ndarray, q: float) -> float:
    h = q * (v.size - 1)
    lo = int(np.floor(h))
    hi = int(np.ceil(h))
    x = v[lo] + (h - lo) * (v[hi] - v[lo])
    # rounding must not push the result outside its bracket (keeps q-monotonicity exact)
    return float(min(max(x, v[lo]), v[hi]))
