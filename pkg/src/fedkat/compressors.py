"""Unbiased randomized compression operators.

Every compressor satisfies ``E[Q(x)] = x`` and ``E||Q(x)||^2 <= omega ||x||^2``,
and reports a density coefficient ``beta``: the factor by which a compressed
message is smaller than the raw vector, counted in transmitted scalars.
"""

from __future__ import annotations

import numpy as np


class UnsupportedQuery(TypeError):
    pass


class Compressor:
    omega: float = 1.0
    beta: float = 1.0

    def compress(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.compress(np.asarray(x, dtype=np.float64))


class Identity(Compressor):
    def compress(self, x):
        return np.array(x, dtype=np.float64, copy=True)

    def __repr__(self):
        return "Identity()"


class RandK(Compressor):
    """Keep ``K`` coordinates drawn uniformly without replacement, scaled by ``d/K``."""

    def __init__(self, d: int, K: int, rng: np.random.Generator):
        if not 1 <= K <= d:
            raise ValueError(f"need 1 <= K <= d, got K={K}, d={d}")
        self.d = d
        self.K = K
        self.rng = rng

    @classmethod
    def fraction(cls, d: int, frac: float, rng) -> "RandK":
        """RandK keeping ``max(1, round(frac*d))`` coordinates (e.g. Rand1% is ``frac=0.01``)."""
        return cls(d, max(1, int(round(frac * d))), rng)

    @property
    def omega(self) -> float:
        return self.d / self.K

    @property
    def beta(self) -> float:
        # scalar-count accounting: index overhead is not charged
        return self.d / self.K

    def select(self) -> np.ndarray:
        if self.K == self.d:
            return np.arange(self.d)
        return self.rng.choice(self.d, self.K, replace=False)

    def compress(self, x):
        if x.shape[-1] != self.d:
            raise ValueError(f"vector of length {x.shape[-1]} given to RandK over d={self.d}")
        return self.apply(x, self.select())

    def apply(self, x, idx) -> np.ndarray:
        out = np.zeros_like(x, dtype=np.float64)
        out[idx] = x[idx] * (self.d / self.K)
        return out

    def __repr__(self):
        return f"RandK(d={self.d}, K={self.K})"


class NaturalDithering(Compressor):
    """Stochastic rounding of each coordinate to one of its neighbouring signed powers of two.

    For ``2^e <= |t| < 2^(e+1)`` the result is ``sign(t) 2^(e+1)`` with probability
    ``(|t| - 2^e) / 2^e`` and ``sign(t) 2^e`` otherwise, so the mean is ``t`` and
    the second moment is at most ``9/8 t^2``.
    """

    omega = 9.0 / 8.0

    def __init__(self, rng: np.random.Generator, beta: float = 64.0 / 9.0):
        self.rng = rng
        self.beta = beta

    def compress(self, x):
        mag = np.abs(x)
        out = np.zeros_like(mag)
        nz = mag > 0
        m, e = np.frexp(mag[nz])  # mag = m * 2^e, m in [0.5, 1)
        low = np.ldexp(1.0, e - 1)
        up = self.rng.random(low.shape) < (mag[nz] - low) / low
        out[nz] = np.where(up, 2.0 * low, low)
        return np.copysign(out, x)

    def __repr__(self):
        return f"NaturalDithering(beta={self.beta:g})"


class PermKFamily:
    """Correlated PermK compressors for ``n`` workers over dimension ``d``.

    Each round a shared permutation splits the coordinates into ``n`` blocks of
    size ``floor(d/n)`` or ``ceil(d/n)``; worker ``i`` keeps its block scaled by
    ``n``. When ``n`` does not divide ``d`` the block-to-worker assignment is
    also rotated by a shared random offset, so that every coordinate lands in
    any given worker's block with probability exactly ``1/n``.
    """

    def __init__(self, n: int, d: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("PermK needs at least one worker")
        if n > d:
            raise ValueError(f"PermK with n={n} > d={d} is not supported")
        self.n = n
        self.d = d
        self.rng = rng
        self.bounds = np.cumsum([0] + [len(c) for c in np.array_split(np.arange(d), n)])
        self.permutation = np.arange(d)
        self.offset = 0
        self.round = 0

    def fresh_round(self) -> "PermKFamily":
        self.permutation = self.rng.permutation(self.d)
        self.offset = int(self.rng.integers(self.n)) if self.d % self.n else 0
        self.round += 1
        return self

    def block(self, i: int) -> np.ndarray:
        slot = (i + self.offset) % self.n
        return self.permutation[self.bounds[slot]:self.bounds[slot + 1]]

    def owners(self) -> np.ndarray:
        """Owning worker of every coordinate this round."""
        owner = np.empty(self.d, dtype=np.int64)
        for i in range(self.n):
            owner[self.block(i)] = i
        return owner

    def member(self, i: int) -> "PermKMember":
        if not 0 <= i < self.n:
            raise IndexError(f"worker {i} not in family of {self.n}")
        return PermKMember(self, i)

    def members(self) -> list["PermKMember"]:
        return [self.member(i) for i in range(self.n)]

    @property
    def beta(self) -> float:
        return float(self.n)


class PermKMember(Compressor):
    correlated = True

    def __init__(self, family: PermKFamily, worker: int):
        self.family = family
        self.worker = worker

    @property
    def omega(self):
        raise UnsupportedQuery("omega is undefined for PermK: its members are correlated")

    @property
    def beta(self) -> float:
        return self.family.beta

    def compress(self, x):
        if x.shape[-1] != self.family.d:
            raise ValueError(f"vector of length {x.shape[-1]} given to PermK over d={self.family.d}")
        idx = self.family.block(self.worker)
        out = np.zeros_like(x, dtype=np.float64)
        out[idx] = x[idx] * self.family.n
        return out

    def __repr__(self):
        return f"PermKMember({self.worker}/{self.family.n}, d={self.family.d})"


def omega_of(c: Compressor) -> float:
    return c.omega


def beta_of(c: Compressor) -> float:
    return c.beta


def is_permk(c) -> bool:
    return isinstance(c, PermKMember)
