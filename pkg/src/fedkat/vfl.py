"""Vertical regime: workers own feature blocks and exchange only scalar products.

Solvers: importance-sampled distributed L-Katyusha, its scalar-compressed and
PermK-over-samples variants (squared loss only), and GD / Nesterov baselines.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .comm_sim import STRICT, CostLedger, Fabric
from .compressors import Compressor, PermKFamily
from .data_io import FeatureBlock
from .hfl import HyperParams, katyusha_params, katyusha_update, nesterov_momentum
from .problems import LEAST_SQUARES, Problem, ProblemConstants


def _map(pool, fn, items):
    return list(pool.map(fn, items)) if pool is not None else [fn(it) for it in items]


def _total(parts: Sequence[np.ndarray]) -> np.ndarray:
    # fixed left-to-right order; with a single worker this is an exact copy
    out = parts[0].copy()
    for p in parts[1:]:
        out += p
    return out


class VerticalSystem:
    """A problem whose feature columns are partitioned among ``n`` workers."""

    def __init__(self, problem: Problem, blocks: Sequence[FeatureBlock | Sequence[int]]):
        cols = [np.asarray(b.cols if isinstance(b, FeatureBlock) else b, dtype=np.int64) for b in blocks]
        if not cols:
            raise ValueError("need at least one worker")
        seen = np.concatenate(cols)
        if len(seen) != problem.d or not np.array_equal(np.sort(seen), np.arange(problem.d)):
            raise ValueError("feature blocks must partition the columns exactly once")
        self.problem = problem
        self.cols = cols
        A = problem.A
        self.parts = [A[:, c].toarray() if sp.issparse(A) else np.ascontiguousarray(A[:, c]) for c in cols]

    @property
    def n(self) -> int:
        return len(self.cols)

    @property
    def s(self) -> int:
        return self.problem.s

    @property
    def d(self) -> int:
        return self.problem.d

    @property
    def kind(self) -> str:
        return self.problem.kind

    @property
    def lam(self) -> float:
        return self.problem.lam

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.d},)")
        return [x[c].copy() for c in self.cols]

    def join(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        self.check(blocks)
        out = np.empty(self.d)
        for c, v in zip(self.cols, blocks):
            out[c] = v
        return out

    def check(self, blocks) -> None:
        if len(blocks) != self.n or any(np.shape(v) != (len(c),) for c, v in zip(self.cols, blocks)):
            raise ValueError("block structure does not match the feature ownership")

    def products(self, blocks, rows=None, pool=None) -> np.ndarray:
        """``sum_i A[rows, cols_i] v_i``: each worker computes its partials, then they are summed."""
        if rows is None:
            parts = _map(pool, lambda i: self.parts[i] @ blocks[i], range(self.n))
        else:
            parts = _map(pool, lambda i: self.parts[i][rows] @ blocks[i], range(self.n))
        return _total(parts)

    def anchor_blocks(self, Aw: np.ndarray) -> list[np.ndarray]:
        """Data part of the gradient at ``w`` from the stored products ``Aw``."""
        r = self.problem.dlosses(Aw) / self.s
        return [Ai.T @ r for Ai in self.parts]

    def grad_blocks(self, blocks) -> list[np.ndarray]:
        u = self.products(blocks)
        return [g + self.lam * v for g, v in zip(self.anchor_blocks(u), blocks)]


@dataclass(frozen=True, eq=False)
class VerticalHyperParams(HyperParams):
    Kbatch: int = 1
    pj: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.Kbatch < 1:
            raise ValueError("batch size must be positive")
        if self.pj is not None and abs(float(np.sum(self.pj)) - 1.0) > 1e-12:
            raise ValueError("sampling weights must sum to one")

    def base(self) -> HyperParams:
        return HyperParams(self.eta, self.sigma, self.theta1, self.theta2, self.p, self.Ltilde)


def _vertical(hp: HyperParams, K: int, pj) -> VerticalHyperParams:
    return VerticalHyperParams(hp.eta, hp.sigma, hp.theta1, hp.theta2, hp.p, hp.Ltilde, K, pj)


def _check_batch(K: int, s: int) -> None:
    if not 1 <= K <= s:
        raise ValueError(f"batch size {K} outside [1, {s}]")


def dvpl_params(consts: ProblemConstants, Kbatch: int, s: int | None = None, **overrides) -> VerticalHyperParams:
    """``Ltilde = max(L, Lbar/K)``, ``p = K/s``, ``theta1 = min(sqrt(2 sigma s K / 3), 1/2)``,
    importance weights ``p_j = L_j / (s Lbar)``."""
    s = consts.s if s is None else s
    _check_batch(Kbatch, s)
    if consts.Lbar <= 0:
        raise ValueError("all per-sample constants are zero")
    Ltilde = overrides.pop("Ltilde", None) or max(consts.L, consts.Lbar / Kbatch)
    p = overrides.pop("p", None) or Kbatch / s
    hp = katyusha_params(consts.mu, Ltilde, s * Kbatch, p, **overrides)
    pj = consts.Lj / consts.Lj.sum()
    return _vertical(hp, Kbatch, pj)


def scalar_Ltilde(consts: ProblemConstants, omega: float) -> float:
    return consts.L * (1 + (omega - 1) * consts.s * float(np.sum(consts.Lj**2)) / consts.mu**2)


def permk_Ltilde(consts: ProblemConstants) -> float:
    return 2 * consts.L * consts.s * float(np.sum(consts.Lj**2)) / consts.mu**2


def dvpl_scalar_params(consts: ProblemConstants, Kbatch: int, omega: float, **overrides) -> VerticalHyperParams:
    s = consts.s
    _check_batch(Kbatch, s)
    Ltilde = overrides.pop("Ltilde", None) or scalar_Ltilde(consts, omega)
    p = overrides.pop("p", None) or Kbatch / s
    hp = katyusha_params(consts.mu, Ltilde, s * Kbatch, p, **overrides)
    return _vertical(hp, Kbatch, np.full(s, 1.0 / s))


def dvpl_permk_params(consts: ProblemConstants, n: int, **overrides) -> VerticalHyperParams:
    s = consts.s
    if not 1 <= n <= s:
        raise ValueError(f"PermK over samples needs 1 <= n <= s, got n={n}, s={s}")
    Ltilde = overrides.pop("Ltilde", None) or permk_Ltilde(consts)
    p = overrides.pop("p", None) or 1.0 / n
    hp = katyusha_params(consts.mu, Ltilde, n, p, **overrides)
    return _vertical(hp, s, None)


@dataclass
class VerticalState:
    x: list[np.ndarray]
    z: list[np.ndarray]
    y: list[np.ndarray]
    w: list[np.ndarray]
    anchor_products: np.ndarray  # A w, length s
    anchor_grad: list[np.ndarray]  # data part of grad f(w), per block
    k: int = 0
    coin: bool | None = None

    def current_x(self, params: HyperParams) -> list[np.ndarray]:
        t1, t2 = params.theta1, params.theta2
        return [t1 * z + t2 * w + (1 - t1 - t2) * y for z, w, y in zip(self.z, self.w, self.y)]


def init_state(sys: VerticalSystem, x0) -> VerticalState:
    blocks = sys.split(x0)
    Aw = sys.products(blocks)
    copies = lambda: [b.copy() for b in blocks]
    return VerticalState(copies(), copies(), copies(), copies(), Aw, sys.anchor_blocks(Aw))


def _refresh(sys: VerticalSystem, state: VerticalState, ledger: CostLedger, pool):
    w = state.y
    Aw = sys.products(w, pool=pool)
    ledger.broadcast(sys.s, "anchor")
    return w, Aw, sys.anchor_blocks(Aw)


def _advance(sys, state, x, g, params, fab, ledger, pool) -> VerticalState:
    zs, ys = zip(*(katyusha_update(xi, zi, gi, params) for xi, zi, gi in zip(x, state.z, g)))
    coin = fab.shared_coin(params.p)
    w, Aw, anchor = state.w, state.anchor_products, state.anchor_grad
    if coin:
        w, Aw, anchor = _refresh(sys, state, ledger, pool)
    ledger.end_round()
    return VerticalState(x, list(zs), list(ys), w, Aw, anchor, state.k + 1, coin)


def dvpl_gradient(sys: VerticalSystem, x, w, anchor, J: np.ndarray, pj: np.ndarray, pool=None) -> list[np.ndarray]:
    """Importance-sampled estimator over the shared multiset ``J``."""
    K = len(J)
    ux = sys.products(x, J, pool)
    uw = sys.products(w, J, pool)
    coef = (sys.problem.dlosses(ux, J) - sys.problem.dlosses(uw, J)) / (K * sys.s * pj[J])
    return _map(pool, lambda i: sys.parts[i][J].T @ coef + anchor[i] + sys.lam * x[i], range(sys.n))


def dvpl_step(
    state: VerticalState,
    sys: VerticalSystem,
    params: VerticalHyperParams,
    fab: Fabric,
    ledger: CostLedger,
    pool: Executor | None = None,
) -> VerticalState:
    sys.check(state.z)
    x = state.current_x(params)
    J = fab.shared_index_sample(params.pj, params.Kbatch)
    g = dvpl_gradient(sys, x, state.w, state.anchor_grad, J, params.pj, pool)
    # compact accounting charges the K sampled products once; strict mode also counts the anchor products at w
    ledger.broadcast(params.Kbatch * (2 if ledger.mode == STRICT else 1), "products")
    return _advance(sys, state, x, g, params, fab, ledger, pool)


def _require_mse(sys: VerticalSystem) -> None:
    if sys.kind != LEAST_SQUARES:
        raise ValueError("scalar-compressed and PermK vertical variants are defined for least squares only")


def dvpl_scalar_gradient(sys: VerticalSystem, x, w, anchor, J, compressors: Sequence[Compressor], pool=None):
    _require_mse(sys)
    if len(compressors) != sys.n:
        raise ValueError(f"{len(compressors)} compressors for {sys.n} workers")
    K = len(J)
    q = _total(_map(pool, lambda i: compressors[i](sys.parts[i][J] @ (x[i] - w[i])), range(sys.n)))
    return _map(pool, lambda i: (2.0 / K) * (sys.parts[i][J].T @ q) + anchor[i] + sys.lam * x[i], range(sys.n))


def dvpl_scalar_step(
    state: VerticalState,
    sys: VerticalSystem,
    params: VerticalHyperParams,
    compressors: Sequence[Compressor],
    fab: Fabric,
    ledger: CostLedger,
    pool: Executor | None = None,
) -> VerticalState:
    _require_mse(sys)
    sys.check(state.z)
    x = state.current_x(params)
    J = fab.shared_index_sample(params.pj, params.Kbatch)
    g = dvpl_scalar_gradient(sys, x, state.w, state.anchor_grad, J, compressors, pool)
    ledger.broadcast(params.Kbatch / compressors[0].beta, "compressed products")
    return _advance(sys, state, x, g, params, fab, ledger, pool)


def sample_family(sys: VerticalSystem, fab: Fabric) -> PermKFamily:
    if sys.n > sys.s:
        raise ValueError(f"PermK over samples needs n <= s, got n={sys.n}, s={sys.s}")
    return PermKFamily(sys.n, sys.s, fab.shared)


def dvpl_permk_gradient(sys: VerticalSystem, x, w, anchor, family: PermKFamily, pool=None):
    """Each worker sends ``n``-scaled difference products for its own disjoint sample set."""
    _require_mse(sys)
    family.fresh_round()
    u = np.zeros(sys.s)

    def own(i):
        rows = family.block(i)
        return rows, sys.n * (sys.parts[i][rows] @ (x[i] - w[i]))

    for rows, vals in _map(pool, own, range(sys.n)):
        u[rows] = vals
    return _map(pool, lambda i: (2.0 / sys.s) * (sys.parts[i].T @ u) + anchor[i] + sys.lam * x[i], range(sys.n))


def dvpl_permk_step(
    state: VerticalState,
    sys: VerticalSystem,
    params: VerticalHyperParams,
    family: PermKFamily,
    fab: Fabric,
    ledger: CostLedger,
    pool: Executor | None = None,
) -> VerticalState:
    sys.check(state.z)
    x = state.current_x(params)
    g = dvpl_permk_gradient(sys, x, state.w, state.anchor_grad, family, pool)
    ledger.broadcast(sys.s / family.beta, "permk products")
    return _advance(sys, state, x, g, params, fab, ledger, pool)


@dataclass
class VerticalBaselineState:
    x: list[np.ndarray]
    x_prev: list[np.ndarray]
    k: int = 0

    @classmethod
    def start(cls, sys: VerticalSystem, x0) -> "VerticalBaselineState":
        return cls(sys.split(x0), sys.split(x0))


def vertical_gd_step(state: VerticalBaselineState, sys: VerticalSystem, L: float, ledger: CostLedger):
    g = sys.grad_blocks(state.x)
    ledger.broadcast(sys.s, "products")
    ledger.end_round()
    return VerticalBaselineState([x - gi / L for x, gi in zip(state.x, g)], state.x, state.k + 1)


def vertical_nesterov_step(state: VerticalBaselineState, sys: VerticalSystem, L: float, mu: float, ledger: CostLedger):
    m = nesterov_momentum(L, mu)
    v = [x + m * (x - xp) for x, xp in zip(state.x, state.x_prev)]
    g = sys.grad_blocks(v)
    ledger.broadcast(sys.s, "products")
    ledger.end_round()
    return VerticalBaselineState([vi - gi / L for vi, gi in zip(v, g)], state.x, state.k + 1)
