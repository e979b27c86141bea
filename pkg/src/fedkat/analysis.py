"""Oracles and diagnostics: reference optimum, Lyapunov function, Monte Carlo
checks of unbiasedness and of the efficient-Lipschitz variance bounds, the 2x2
lower-bound construction, and a single-machine importance-sampled L-Katyusha.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import hfl, vfl
from .comm_sim import Fabric
from .compressors import Compressor, PermKFamily
from .problems import LEAST_SQUARES, ConvergenceError, Problem, ProblemConstants, estimate_constants


def _constants(prob) -> ProblemConstants:
    if hasattr(prob, "constants"):
        return prob.constants()
    if isinstance(prob, vfl.VerticalSystem):
        prob = prob.problem
    return estimate_constants(prob)


def reference_solution(prob, tol: float = 1e-10, consts: ProblemConstants | None = None,
                       x0=None, max_iter: int = 1_000_000) -> np.ndarray:
    """Minimize by Nesterov's method with gradient-based restarts.

    Stops when ``||grad f(x)|| <= tol * mu * max(1, ||x||)``, which puts
    ``x`` within ``tol * max(1, ||x||)`` of the minimizer.
    """
    consts = consts or _constants(prob)
    L, mu = consts.L, consts.mu
    if mu <= 0:
        raise ValueError("reference solver needs a strongly convex objective")
    d = prob.d
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    x_prev = x.copy()
    m = hfl.nesterov_momentum(L, mu)
    gnorm = np.inf
    for _ in range(max_iter):
        v = x + m * (x - x_prev)
        g = prob.grad(v)
        x_new = v - g / L
        # restart when the momentum direction opposes descent
        if g @ (x_new - x) > 0:
            x_new = x - prob.grad(x) / L
        x_prev, x = x, x_new
        gnorm = float(np.linalg.norm(prob.grad(x)))
        if gnorm <= tol * mu * max(1.0, float(np.linalg.norm(x))):
            return x
    raise ConvergenceError(f"reference solver hit {max_iter} iterations", gnorm)


@dataclass(frozen=True)
class LyapunovComponents:
    Z: float
    Y: float
    W: float

    @property
    def Psi(self) -> float:
        return self.Z + self.Y + self.W


def _points(state, prob):
    z, y, w = state.z, state.y, state.w
    if isinstance(z, list):
        z, y, w = prob.join(z), prob.join(y), prob.join(w)
    return z, y, w


def lyapunov(state, params: hfl.HyperParams, xstar, prob, fstar: float | None = None) -> LyapunovComponents:
    """``Z = Ltilde (1 + eta sigma) / (2 eta) ||z - x*||^2``, ``Y = (f(y) - f*) / theta1``,
    ``W = theta2 (1 + theta1) / (p theta1) (f(w) - f*)``.

    ``prob`` is anything with ``value``; a ``VerticalSystem`` also joins the blocks.
    """
    z, y, w = _points(state, prob)
    f = prob.problem.value if isinstance(prob, vfl.VerticalSystem) else prob.value
    fstar = f(xstar) if fstar is None else fstar
    eta, t1, t2 = params.eta, params.theta1, params.theta2
    dz = z - xstar
    Z = params.Ltilde * (1 + eta * params.sigma) / (2 * eta) * float(dz @ dz)
    Y = (f(y) - fstar) / t1
    W = t2 * (1 + t1) / (params.p * t1) * (f(w) - fstar)
    return LyapunovComponents(Z, Y, W)


def contraction_factor(params: hfl.HyperParams) -> float:
    return params.rho


@dataclass
class Estimator:
    """A frozen (x, w) pair and a callable returning one fresh gradient estimate."""

    name: str
    draw: Callable[[], np.ndarray]
    grad: np.ndarray
    bregman: float
    Ltilde: float


def dhpl_estimator(problem, compressors: Sequence[Compressor], x, w, Ltilde: float) -> Estimator:
    anchor = problem.grad(w)
    draw = lambda: hfl.dhpl_gradient(problem, x, w, anchor, compressors)
    return Estimator("dhpl", draw, problem.grad(x), problem.bregman(w, x), Ltilde)


def _vertical_pair(sys, x, w):
    xb, wb = sys.split(x), sys.split(w)
    return xb, wb, sys.anchor_blocks(sys.products(wb))


def dvpl_estimator(sys: vfl.VerticalSystem, params: vfl.VerticalHyperParams, x, w, fab: Fabric) -> Estimator:
    xb, wb, anchor = _vertical_pair(sys, x, w)

    def draw():
        J = fab.shared_index_sample(params.pj, params.Kbatch)
        return sys.join(vfl.dvpl_gradient(sys, xb, wb, anchor, J, params.pj))

    return Estimator("dvpl", draw, sys.problem.grad(x), sys.problem.bregman(w, x), params.Ltilde)


def dvpl_scalar_estimator(sys, params: vfl.VerticalHyperParams, compressors, x, w, fab: Fabric) -> Estimator:
    xb, wb, anchor = _vertical_pair(sys, x, w)

    def draw():
        J = fab.shared_index_sample(params.pj, params.Kbatch)
        return sys.join(vfl.dvpl_scalar_gradient(sys, xb, wb, anchor, J, compressors))

    return Estimator("dvpl_scalar", draw, sys.problem.grad(x), sys.problem.bregman(w, x), params.Ltilde)


def dvpl_permk_estimator(sys, family: PermKFamily, x, w, Ltilde: float) -> Estimator:
    xb, wb, anchor = _vertical_pair(sys, x, w)
    draw = lambda: sys.join(vfl.dvpl_permk_gradient(sys, xb, wb, anchor, family))
    return Estimator("dvpl_permk", draw, sys.problem.grad(x), sys.problem.bregman(w, x), Ltilde)


def draws(est: Estimator, trials: int) -> np.ndarray:
    return np.stack([est.draw() for _ in range(trials)])


@dataclass(frozen=True)
class Unbiasedness:
    error: float  # ||mean - grad||
    band: float  # 3 sqrt(tr Cov / N)
    passed: bool


def unbiasedness(est: Estimator, trials: int = 10_000, samples: np.ndarray | None = None) -> Unbiasedness:
    G = draws(est, trials) if samples is None else samples
    N = len(G)
    err = float(np.linalg.norm(G.mean(axis=0) - est.grad))
    band = 3.0 * float(np.sqrt(G.var(axis=0, ddof=1).sum() / N))
    # the relative floor absorbs rounding when the estimator is deterministic
    floor = 1e-12 * max(1.0, float(np.linalg.norm(est.grad)))
    return Unbiasedness(err, band, err <= band + floor)


@dataclass(frozen=True)
class VarianceGap:
    lhs: float
    stderr: float
    rhs: float
    passed: bool


def variance_gap(est: Estimator, trials: int = 10_000, slack: float = 0.1, factor: float = 1.0,
                 samples: np.ndarray | None = None) -> VarianceGap:
    """Monte Carlo ``E||g - grad f(x)||^2`` against ``factor * 2 Ltilde * Bregman(w, x)``."""
    if samples is None and trials < 1000:
        raise ValueError("variance checks need at least 1000 trials")
    G = draws(est, trials) if samples is None else samples
    sq = np.sum((G - est.grad) ** 2, axis=1)
    lhs = float(sq.mean())
    stderr = float(sq.std(ddof=1) / np.sqrt(len(sq)))
    rhs = factor * 2.0 * est.Ltilde * max(est.bregman, 0.0)
    floor = 1e-20 * max(1.0, float(est.grad @ est.grad))
    return VarianceGap(lhs, stderr, rhs, lhs <= rhs * (1 + slack) + 3 * stderr + floor)


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


@dataclass
class LowerBound:
    problem: Problem
    L: float
    mu: float
    x: np.ndarray
    w: np.ndarray
    blocks: list[list[int]]


def lower_bound_problem(a: float, b: float, c: float = 1.0, w=(0.0, 0.0)) -> LowerBound:
    """Two samples ``(a, a)`` and ``(b, -b)``, one feature per worker, zero targets.

    The Hessian ``(2/s) A^T A = A^T A`` has eigenvalues ``2a^2`` and ``2b^2``;
    the returned pair has ``x - w = (c, -c)``, orthogonal to the first sample.
    """
    if not 0 < b < a:
        raise ValueError(f"need 0 < b < a, got a={a}, b={b}")
    A = np.array([[a, a], [b, -b]], dtype=np.float64)
    prob = Problem(LEAST_SQUARES, A, np.zeros(2))
    w = np.asarray(w, dtype=np.float64)
    x = w + np.array([c, -c])
    return LowerBound(prob, 2 * a * a, 2 * b * b, x, w, [[0], [1]])


def single_machine_katyusha(problem: Problem, params: vfl.VerticalHyperParams, x0, seed: int, rounds: int):
    """Importance-sampled L-Katyusha on the full matrix, written without feature blocks.

    Shared randomness is taken from the same keyed stream a one-worker fabric
    would use, so trajectories are comparable draw for draw. Returns the
    list of ``(x, z, y, w)`` after every round.
    """
    A, s, lam = problem.A, problem.s, problem.lam
    fab = Fabric(1, seed)
    pj, K = params.pj, params.Kbatch
    t1, t2, eta, es, Lt = params.theta1, params.theta2, params.eta, params.eta * params.sigma, params.Ltilde
    x = np.asarray(x0, dtype=np.float64).copy()
    z, y, w = x.copy(), x.copy(), x.copy()
    anchor = A.T @ (problem.dlosses(A @ w) / s)
    out = []
    for _ in range(rounds):
        x = t1 * z + t2 * w + (1 - t1 - t2) * y
        J = fab.shared_index_sample(pj, K)
        AJ = A[J]
        coef = (problem.dlosses(AJ @ x, J) - problem.dlosses(AJ @ w, J)) / (K * s * pj[J])
        g = AJ.T @ coef + anchor + lam * x
        z_new = (es * x + z - (eta / Lt) * g) / (1 + es)
        y_new = x + t1 * (z_new - z)
        if fab.shared_coin(params.p):
            w = y
            anchor = A.T @ (problem.dlosses(A @ w) / s)
        z, y = z_new, y_new
        out.append((x, z, y, w))
    return out
