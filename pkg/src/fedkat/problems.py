"""Objectives: L2-regularized logistic regression and least squares.

Both are linear models ``f(x) = (1/s) sum_j l_j(a_j^T x) + lam/2 ||x||^2`` with

* logistic:      ``l_j(u) = log(1 + exp(-b_j u))``
* least squares: ``l_j(u) = (u - b_j)^2``
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data_io import Dataset

LOGISTIC = "logistic"
LEAST_SQUARES = "least_squares"
KINDS = (LOGISTIC, LEAST_SQUARES)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


def rows_of(A, idx) -> np.ndarray:
    """Dense copy of the selected rows of a dense or sparse matrix."""
    sub = A[idx]
    return sub.toarray() if sp.issparse(sub) else np.asarray(sub)


def row_norms_sq(A) -> np.ndarray:
    if sp.issparse(A):
        return np.asarray(A.multiply(A).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", A, A)


@dataclass
class Problem:
    kind: str
    A: np.ndarray | sp.spmatrix
    b: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError("labels do not match rows of A")
        if self.kind == LOGISTIC and not np.all(np.isin(self.b, (-1.0, 1.0))):
            raise ValueError("logistic problems need labels in {-1, +1}")

    @classmethod
    def from_dataset(cls, kind: str, ds: Dataset, lam: float = 0.0, dense: bool = True) -> "Problem":
        return cls(kind, ds.dense() if dense else ds.A, ds.b, lam)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.d},)")
        return x

    # per-sample scalar loss and its derivative in the margin u = a_j^T x
    def losses(self, u, rows=slice(None)) -> np.ndarray:
        b = self.b[rows]
        if self.kind == LOGISTIC:
            return np.logaddexp(0.0, -b * u)
        return (u - b) ** 2

    def dlosses(self, u, rows=slice(None)) -> np.ndarray:
        b = self.b[rows]
        if self.kind == LOGISTIC:
            return -b * expit(-b * u)
        return 2.0 * (u - b)

    def value(self, x) -> float:
        x = self._check(x)
        return float(np.mean(self.losses(self.A @ x)) + 0.5 * self.lam * (x @ x))

    def grad(self, x) -> np.ndarray:
        x = self._check(x)
        return self.A.T @ self.dlosses(self.A @ x) / self.s + self.lam * x

    def eval(self, x) -> tuple[float, np.ndarray]:
        x = self._check(x)
        u = self.A @ x
        val = float(np.mean(self.losses(u)) + 0.5 * self.lam * (x @ x))
        return val, self.A.T @ self.dlosses(u) / self.s + self.lam * x

    def sample_grad(self, j: int, x) -> np.ndarray:
        """Gradient of ``l_j(a_j^T x)`` alone: no 1/s averaging, no regularizer."""
        if not 0 <= j < self.s:
            raise IndexError(f"sample {j} out of range [0, {self.s})")
        x = self._check(x)
        a = rows_of(self.A, [j])[0]
        return self.dlosses(np.array([a @ x]), [j])[0] * a

    @property
    def curvature(self) -> float:
        """Upper bound on l_j'' (2 for squares, 1/4 for the logistic loss)."""
        return 2.0 if self.kind == LEAST_SQUARES else 0.25

    def bregman(self, w, x) -> float:
        """``f(w) - f(x) - <grad f(x), w - x>``."""
        fx, gx = self.eval(x)
        return self.value(w) - fx - float(gx @ (np.asarray(w) - x))


@dataclass
class ProblemConstants:
    L: float
    mu: float
    Lj: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.Lj = np.asarray(self.Lj, dtype=np.float64)
        if not (self.mu > 0 and self.mu <= self.L * (1 + 1e-9)):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")
        if np.any(self.Lj < 0):
            raise ValueError("per-sample constants must be non-negative")

    @property
    def Lbar(self) -> float:
        return float(np.mean(self.Lj))

    @property
    def s(self) -> int:
        return len(self.Lj)

    def summary(self) -> dict:
        return {
            "L": self.L,
            "mu": self.mu,
            "kappa": self.L / self.mu,
            "Lbar": self.Lbar,
            "Lj_min": float(self.Lj.min()),
            "Lj_max": float(self.Lj.max()),
            "s": self.s,
        }


def power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    d: int,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    seed: int = 0,
    reference: Callable[[float], float] | None = None,
) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of a symmetric PSD operator.

    Stops once ``||Mv - theta v|| <= tol * reference(theta)`` (default
    ``reference(theta) = theta``); the residual bounds the eigenvalue error.
    """
    reference = reference or (lambda t: t)
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    residual = np.inf
    for _ in range(max_iter):
        mv = matvec(v)
        theta = float(v @ mv)
        residual = float(np.linalg.norm(mv - theta * v))
        if residual <= tol * reference(theta):
            return theta, v
        nrm = np.linalg.norm(mv)
        if nrm == 0.0:
            return 0.0, v
        v = mv / nrm
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", residual)


DENSE_GRAM_LIMIT = 2048


class GramOperator:
    """Matvec of ``A^T A``; the Gram matrix is formed explicitly when it is small."""

    def __init__(self, A):
        self.A = A
        self.matrix = None
        if A.shape[1] <= DENSE_GRAM_LIMIT:
            G = A.T @ A
            self.matrix = G.toarray() if sp.issparse(G) else np.asarray(G)

    def __call__(self, v):
        if self.matrix is not None:
            return self.matrix @ v
        return self.A.T @ (self.A @ v)


def gram_operator(A) -> GramOperator:
    return GramOperator(A)


def extreme_eigs(
    matvec, d: int, tol: float = 1e-6, max_iter: int = 100_000, seed: int = 0, smallest: bool = True
) -> tuple[float, float]:
    """(lambda_max, lambda_min) of a PSD operator.

    lambda_max comes from power iteration. lambda_min uses a dense symmetric
    eigensolver when the operator carries an explicit matrix (clustered small
    eigenvalues make the shifted iteration crawl), and the shifted operator
    ``lambda_max I - M`` otherwise.
    """
    lmax, _ = power_iteration(matvec, d, tol, max_iter, seed)
    if not smallest or lmax == 0.0:
        return lmax, (0.0 if smallest else float("nan"))
    M = getattr(matvec, "matrix", None)
    if M is not None:
        return lmax, max(float(np.linalg.eigvalsh(M)[0]), 0.0)
    top = lmax * (1 + tol)
    # accuracy is judged relative to lambda_min itself, floored for near-singular operators
    _, v = power_iteration(
        lambda u: top * u - matvec(u), d, tol, max_iter, seed + 1,
        reference=lambda t: max(top - t, 1e-3 * top),
    )
    lmin = float(v @ matvec(v))
    return lmax, max(lmin, 0.0)


def sample_constants(prob: Problem) -> np.ndarray:
    norms = row_norms_sq(prob.A)
    if prob.kind == LEAST_SQUARES:
        return 2.0 * norms
    return norms / 4.0 + prob.lam


def estimate_constants(prob: Problem, tol: float = 1e-6, max_iter: int = 100_000, seed: int = 0) -> ProblemConstants:
    scale = prob.curvature / prob.s
    lmax, lmin = extreme_eigs(
        gram_operator(prob.A), prob.d, tol, max_iter, seed, smallest=prob.kind == LEAST_SQUARES
    )
    L = scale * lmax + prob.lam
    mu = prob.lam if prob.kind == LOGISTIC else scale * lmin + prob.lam
    return ProblemConstants(L=L, mu=mu, Lj=sample_constants(prob))


def with_l2_ratio(prob: Problem, ratio: float = 0.01, **kw) -> Problem:
    """Set ``lam = ratio * L0`` where ``L0`` is the smoothness of the unregularized loss."""
    return replace(prob, lam=ratio * _data_L(prob, **kw))


def _data_L(prob: Problem, tol=1e-6, max_iter=100_000, seed=0) -> float:
    lmax, _ = power_iteration(gram_operator(prob.A), prob.d, tol, max_iter, seed)
    return prob.curvature / prob.s * lmax


class _AveragedOperator:
    def __init__(self, ops):
        self.ops = ops
        mats = [op.matrix for _, op in ops]
        self.matrix = None if any(m is None for m in mats) else sum(c * m for (c, _), m in zip(ops, mats)) / len(ops)

    def __call__(self, v):
        return sum(c * op(v) for c, op in self.ops) / len(self.ops)


@dataclass
class HorizontalProblem:
    """``f(x) = (1/n) sum_m f_m(x)`` over per-worker shard problems."""

    shards: Sequence[Problem]

    def __post_init__(self):
        kinds = {p.kind for p in self.shards}
        dims = {p.d for p in self.shards}
        lams = {p.lam for p in self.shards}
        if len(kinds) != 1 or len(dims) != 1 or len(lams) != 1:
            raise ValueError("shards must share kind, dimension and regularizer")

    @property
    def n(self) -> int:
        return len(self.shards)

    @property
    def d(self) -> int:
        return self.shards[0].d

    @property
    def kind(self) -> str:
        return self.shards[0].kind

    @property
    def lam(self) -> float:
        return self.shards[0].lam

    def value(self, x) -> float:
        return float(np.mean([p.value(x) for p in self.shards]))

    def grad(self, x) -> np.ndarray:
        return np.mean([p.grad(x) for p in self.shards], axis=0)

    def eval(self, x) -> tuple[float, np.ndarray]:
        vals, grads = zip(*(p.eval(x) for p in self.shards))
        return float(np.mean(vals)), np.mean(grads, axis=0)

    def bregman(self, w, x) -> float:
        fx, gx = self.eval(x)
        return self.value(w) - fx - float(gx @ (np.asarray(w) - x))

    def constants(self, tol: float = 1e-6, max_iter: int = 100_000, seed: int = 0) -> ProblemConstants:
        """L is the largest shard smoothness; mu is that of the averaged objective."""
        per = [estimate_constants(p, tol, max_iter, seed) for p in self.shards]
        L = max(c.L for c in per)
        if self.kind == LOGISTIC:
            mu = self.lam
        else:
            ops = [(p.curvature / p.s, gram_operator(p.A)) for p in self.shards]
            avg = _AveragedOperator(ops)
            _, lmin = extreme_eigs(avg, self.d, tol, max_iter, seed)
            mu = lmin + self.lam
        return ProblemConstants(L=L, mu=mu, Lj=np.concatenate([c.Lj for c in per]))


def horizontal_problem(kind: str, ds: Dataset, shards, lam: float = 0.0) -> HorizontalProblem:
    return HorizontalProblem([Problem.from_dataset(kind, sh.data, lam) for sh in shards])
