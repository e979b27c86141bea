"""Horizontal regime: distributed L-Katyusha with compressed gradient differences,
plus uncompressed GD / AGD baselines.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .comm_sim import CostLedger, Fabric
from .compressors import Compressor, PermKFamily, is_permk
from .problems import HorizontalProblem, ProblemConstants


@dataclass(frozen=True)
class HyperParams:
    eta: float
    sigma: float
    theta1: float
    theta2: float
    p: float
    Ltilde: float

    def __post_init__(self):
        if not (0 < self.theta1 < 1 and 0 < self.theta2 < 1):
            raise ValueError(f"theta1, theta2 must lie in (0, 1): {self.theta1}, {self.theta2}")
        if self.theta1 + self.theta2 > 1 + 1e-12:
            raise ValueError("theta1 + theta2 must not exceed 1")
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.eta <= 0 or self.sigma <= 0 or self.Ltilde <= 0:
            raise ValueError("eta, sigma and Ltilde must be positive")

    @property
    def rho(self) -> float:
        """One-step contraction factor of the Lyapunov function."""
        t1, t2 = self.theta1, self.theta2
        return max(1 / (1 + self.eta * self.sigma), 1 - t1 * (1 - t2), 1 - self.p * t1 / (1 + t1))


def katyusha_params(
    mu: float,
    Ltilde: float,
    theta1_scale: float,
    p: float,
    eta_factor: float = 1.0,
    theta1: float | None = None,
    theta2: float | None = None,
    eta: float | None = None,
    sigma: float | None = None,
) -> HyperParams:
    """Shared parameter recipe: ``sigma = mu/Ltilde``, ``theta2 = 1/2``,
    ``theta1 = min(sqrt(2 sigma theta1_scale / 3), 1/2)`` and
    ``eta = eta_factor * theta2 / ((1 + theta2) theta1)``; explicit values win.
    """
    if mu <= 0:
        raise ValueError("strong convexity constant must be positive")
    sigma = mu / Ltilde if sigma is None else sigma
    theta2 = 0.5 if theta2 is None else theta2
    theta1 = min(math.sqrt(2 * sigma * theta1_scale / 3), 0.5) if theta1 is None else theta1
    eta = eta_factor * theta2 / ((1 + theta2) * theta1) if eta is None else eta
    return HyperParams(eta=eta, sigma=sigma, theta1=theta1, theta2=theta2, p=p, Ltilde=Ltilde)


def dhpl_params(
    consts: ProblemConstants,
    omega: float | None,
    beta: float,
    n: int,
    permk: bool = False,
    **overrides,
) -> HyperParams:
    """Default parameters: ``Ltilde = L omega / n`` (``L`` for PermK), ``p = 1/beta``,
    ``theta1 = min(sqrt(2 sigma beta / 3), 1/2)`` and the min-form step size.
    """
    if consts.mu <= 0:
        raise ValueError("strong convexity constant must be positive")
    if beta < 1:
        raise ValueError("density coefficient must be at least 1")
    L = consts.L
    Ltilde = overrides.pop("Ltilde", None)
    if Ltilde is None:
        if permk:
            Ltilde = L
        else:
            if omega is None or omega < 1:
                raise ValueError("omega >= 1 required for uncorrelated compressors")
            Ltilde = L * omega / n
    p = overrides.pop("p", None) or 1.0 / beta
    return katyusha_params(consts.mu, Ltilde, beta, p, eta_factor=min(1.0, Ltilde / L), **overrides)


@dataclass
class KatyushaState:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    w: np.ndarray
    anchor_grad: np.ndarray
    k: int = 0
    coin: bool | None = None

    def current_x(self, params: HyperParams) -> np.ndarray:
        """The convex combination the next step would evaluate at."""
        t1, t2 = params.theta1, params.theta2
        return t1 * self.z + t2 * self.w + (1 - t1 - t2) * self.y


def init_state(problem: HorizontalProblem, x0) -> KatyushaState:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (problem.d,):
        raise ValueError(f"initial point has shape {x0.shape}, expected ({problem.d},)")
    return KatyushaState(x0.copy(), x0.copy(), x0.copy(), x0.copy(), problem.grad(x0))


def _families(compressors: Sequence[Compressor]) -> list[PermKFamily]:
    seen: dict[int, PermKFamily] = {}
    for c in compressors:
        if is_permk(c):
            seen.setdefault(id(c.family), c.family)
    return list(seen.values())


def _map(pool: Executor | None, fn, items):
    return list(pool.map(fn, items)) if pool is not None else [fn(it) for it in items]


def dhpl_gradient(
    problem: HorizontalProblem,
    x: np.ndarray,
    w: np.ndarray,
    anchor_grad: np.ndarray,
    compressors: Sequence[Compressor],
    pool: Executor | None = None,
) -> np.ndarray:
    """``(1/n) sum_i Q_i(grad f_i(x) - grad f_i(w)) + grad f(w)``."""
    if len(compressors) != problem.n:
        raise ValueError(f"{len(compressors)} compressors for {problem.n} workers")
    if x.shape != (problem.d,) or w.shape != (problem.d,):
        raise ValueError("dimension mismatch")
    for fam in _families(compressors):
        fam.fresh_round()

    def work(i):
        shard = problem.shards[i]
        return compressors[i](shard.grad(x) - shard.grad(w))

    parts = _map(pool, work, range(problem.n))
    return np.mean(parts, axis=0) + anchor_grad


def katyusha_update(x, z, g, params: HyperParams):
    es = params.eta * params.sigma
    z_new = (es * x + z - (params.eta / params.Ltilde) * g) / (1 + es)
    y_new = x + params.theta1 * (z_new - z)
    return z_new, y_new


def dhpl_step(
    state: KatyushaState,
    problem: HorizontalProblem,
    compressors: Sequence[Compressor],
    params: HyperParams,
    fab: Fabric,
    ledger: CostLedger,
    pool: Executor | None = None,
) -> KatyushaState:
    d = problem.d
    x = state.current_x(params)
    g = dhpl_gradient(problem, x, state.w, state.anchor_grad, compressors, pool)
    ledger.broadcast(d / compressors[0].beta, "compressed")
    z, y = katyusha_update(x, state.z, g, params)
    coin = fab.shared_coin(params.p)
    w, anchor = state.w, state.anchor_grad
    if coin:
        w = state.y
        anchor = np.mean(_map(pool, lambda sh: sh.grad(w), problem.shards), axis=0)
        ledger.broadcast(d, "anchor")
    ledger.end_round()
    return KatyushaState(x, z, y, w, anchor, state.k + 1, coin)


@dataclass
class BaselineState:
    x: np.ndarray
    x_prev: np.ndarray
    k: int = 0

    @classmethod
    def start(cls, x0) -> "BaselineState":
        x0 = np.asarray(x0, dtype=np.float64)
        return cls(x0.copy(), x0.copy())


def gd_step(state: BaselineState, problem, L: float, ledger: CostLedger) -> BaselineState:
    x = state.x - problem.grad(state.x) / L
    ledger.broadcast(len(x), "gradient")
    ledger.end_round()
    return BaselineState(x, state.x, state.k + 1)


def nesterov_momentum(L: float, mu: float) -> float:
    rl, rm = math.sqrt(L), math.sqrt(mu)
    return (rl - rm) / (rl + rm)


def agd_step(state: BaselineState, problem, L: float, mu: float, ledger: CostLedger) -> BaselineState:
    """Constant-momentum Nesterov step for L-smooth, mu-strongly convex objectives."""
    v = state.x + nesterov_momentum(L, mu) * (state.x - state.x_prev)
    x = v - problem.grad(v) / L
    ledger.broadcast(len(x), "gradient")
    ledger.end_round()
    return BaselineState(x, state.x, state.k + 1)
