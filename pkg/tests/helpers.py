"""Small synthetic problems shared by the test modules."""

import numpy as np

from fedkat.problems import LEAST_SQUARES, LOGISTIC, HorizontalProblem, Problem, estimate_constants
from fedkat.vfl import VerticalSystem


def labels(rng, kind, s, A):
    if kind == LOGISTIC:
        return np.where(A @ rng.standard_normal(A.shape[1]) + 0.5 * rng.standard_normal(s) >= 0, 1.0, -1.0)
    return A @ rng.standard_normal(A.shape[1]) + 0.1 * rng.standard_normal(s)


def horizontal(seed=0, n=2, s=40, d=10, kind=LOGISTIC, lam=0.1):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((s, d))
    b = labels(rng, kind, s, A)
    shards = [Problem(kind, part_A, part_b, lam) for part_A, part_b in zip(np.array_split(A, n), np.array_split(b, n))]
    return HorizontalProblem(shards)


def vertical(seed=0, n=5, s=40, d=10, kind=LEAST_SQUARES, lam=0.1):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((s, d)) * rng.uniform(0.3, 2.0, size=(s, 1))
    prob = Problem(kind, A, labels(rng, kind, s, A), lam)
    return VerticalSystem(prob, np.array_split(np.arange(d), n)), estimate_constants(prob)


def states(seed, d, count, scale=1.0):
    rng = np.random.default_rng(seed)
    return [(scale * rng.standard_normal(d), scale * rng.standard_normal(d)) for _ in range(count)]
