"""Simulated broadcast fabric: shared/per-worker random streams and a cost ledger.

Communication is accounted, not performed. The ledger counts transmitted
scalars per broadcast vector and omits the ``2(n-1)/n`` AllReduce factor,
which is common to every method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COMPACT = "compact"
STRICT = "strict"


def _stream(seed: int, *key: int) -> np.random.Generator:
    # counter-based generator keyed by (seed, purpose, worker): draw order on one
    # stream never depends on how many other streams exist or are used
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


class Fabric:
    """``n`` workers sharing one seeded stream plus one private stream each."""

    def __init__(self, n: int, seed: int):
        if n < 1:
            raise ValueError("fabric needs at least one worker")
        self.n = n
        self.seed = seed
        self.shared = _stream(seed, 0)
        self._workers = [_stream(seed, 1, i) for i in range(n)]

    def worker_rng(self, i: int) -> np.random.Generator:
        return self._workers[i]

    def shared_coin(self, p: float) -> bool:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"coin probability must lie in (0, 1], got {p}")
        # draw even when p == 1 so the stream position does not depend on p
        return bool(self.shared.random() < p)

    def shared_index_sample(self, weights, count: int) -> np.ndarray:
        """``count`` i.i.d. draws (with replacement) from a categorical distribution."""
        w = np.asarray(weights, dtype=np.float64)
        if count < 1:
            raise ValueError("sample count must be positive")
        if np.any(w < 0):
            raise ValueError("sampling weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"sampling weights sum to {w.sum()!r}, not 1")
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        # side="right" never selects a zero-weight index
        return np.searchsorted(cdf, self.shared.random(count), side="right")

    def shared_uniform_sample(self, s: int, count: int) -> np.ndarray:
        if count < 1:
            raise ValueError("sample count must be positive")
        return self.shared.integers(0, s, size=count)


@dataclass
class CostLedger:
    mode: str = COMPACT
    rounds: int = 0
    scalars_sent: float = 0.0
    log: list[tuple[int, float, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in (COMPACT, STRICT):
            raise ValueError(f"unknown accounting mode {self.mode!r}")

    def broadcast(self, payload_scalars: float, tag: str = "") -> None:
        if payload_scalars < 0:
            raise ValueError("payload must be non-negative")
        if payload_scalars == 0:
            return
        self.scalars_sent += payload_scalars
        self.log.append((self.rounds, float(payload_scalars), tag))

    def end_round(self) -> None:
        self.rounds += 1

    def consistent(self) -> bool:
        return np.isclose(sum(e[1] for e in self.log), self.scalars_sent, rtol=1e-12, atol=0)
