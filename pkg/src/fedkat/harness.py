"""Seeded experiment runner: config -> problem -> solver loop -> trace."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, NamedTuple

import numpy as np
import yaml

from . import analysis, hfl, vfl
from .comm_sim import COMPACT, CostLedger, Fabric
from .compressors import Identity, NaturalDithering, PermKFamily, RandK
from .data_io import Dataset, load_libsvm, split_horizontal, split_vertical
from .problems import KINDS, LEAST_SQUARES, LOGISTIC, HorizontalProblem, Problem, _data_L, estimate_constants

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
ALGORITHMS = {
    "dhpl": HORIZONTAL,
    "gd": HORIZONTAL,
    "agd": HORIZONTAL,
    "dvpl": VERTICAL,
    "dvpl_scalar": VERTICAL,
    "dvpl_permk": VERTICAL,
    "vgd": VERTICAL,
    "vnesterov": VERTICAL,
}
OVERRIDES = ("theta1", "theta2", "p", "eta", "Ltilde")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class CompressorSpec:
    kind: str = "identity"  # identity | randk | natural | permk
    K: int | None = None
    frac: float | None = None

    def count(self, dim: int) -> int:
        if self.K is not None:
            return int(self.K)
        if self.frac is not None:
            return max(1, int(round(self.frac * dim)))
        return dim


@dataclass
class SyntheticSpec:
    s: int = 40
    d: int = 10
    seed: int = 0
    cond: float = 1.0  # ratio of largest to smallest column variance
    noise: float = 0.1


@dataclass
class ExperimentConfig:
    algorithm: str = "dhpl"
    regime: str | None = None
    n: int | None = None
    loss: str | None = None
    dataset: str | None = None
    synthetic: SyntheticSpec | None = None
    lam: float | None = None
    lam_ratio: float = 0.01
    compressor: CompressorSpec = field(default_factory=CompressorSpec)
    batch: int | None = None
    overrides: dict[str, float] = field(default_factory=dict)
    eps: float = 1e-6
    relative: bool = True
    max_rounds: int = 1000
    seed: int = 0
    accounting: str = COMPACT
    stride: int = 1
    record_psi: bool = False
    threads: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticSpec(**self.synthetic)
        if isinstance(self.compressor, dict):
            self.compressor = CompressorSpec(**self.compressor)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        expected = ALGORITHMS[self.algorithm]
        if self.regime is None:
            self.regime = expected
        elif self.regime != expected:
            raise ConfigError(f"algorithm {self.algorithm} requires the {expected} regime, got {self.regime}")
        if self.n is None:
            self.n = 100 if self.regime == HORIZONTAL else 5
        if self.loss is None:
            self.loss = LOGISTIC if self.regime == HORIZONTAL else LEAST_SQUARES
        if self.loss not in KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of dataset and synthetic")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.stride < 1 or self.max_rounds < 0:
            raise ConfigError("stride must be positive and max_rounds non-negative")
        unknown = set(self.overrides) - set(OVERRIDES)
        if unknown:
            raise ConfigError(f"unknown overrides {sorted(unknown)}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.loads(fh.read())


def synthetic_dataset(spec: SyntheticSpec, loss: str) -> Dataset:
    """Gaussian design with geometrically scaled columns and planted labels."""
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.s, spec.d))
    if spec.cond != 1.0 and spec.d > 1:
        A *= spec.cond ** (-0.5 * np.arange(spec.d) / (spec.d - 1))
    x_true = rng.standard_normal(spec.d) / math.sqrt(spec.d)
    margin = A @ x_true + spec.noise * rng.standard_normal(spec.s)
    b = np.where(margin >= 0, 1.0, -1.0) if loss == LOGISTIC else margin
    return Dataset.from_dense(A, b)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return synthetic_dataset(cfg.synthetic, cfg.loss)
    ds = load_libsvm(cfg.dataset)
    if cfg.loss == LOGISTIC and not ds.is_binary():
        raise ConfigError("logistic loss needs a two-class dataset")
    return ds


class TraceRow(NamedTuple):
    round: int
    scalars: float
    subopt: float
    dist2: float
    psi: float
    coin: str


COLUMNS = TraceRow._fields


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def append(self, row: TraceRow) -> None:
        if self.rows and (row.round <= self.rows[-1].round or row.scalars < self.rows[-1].scalars):
            raise ValueError("trace rows must advance in round with non-decreasing cost")
        self.rows.append(row)

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def scalars_to(self, target: float) -> float:
        """Cost of the first row at or below ``target`` suboptimality (inf if never)."""
        for r in self.rows:
            if r.subopt <= target:
                return r.scalars
        return math.inf


@dataclass
class Setup:
    """Everything a run needs besides the loop itself."""

    cfg: ExperimentConfig
    problem: Any  # HorizontalProblem or VerticalSystem
    consts: Any
    xstar: np.ndarray
    fstar: float
    f: Any

    @property
    def d(self) -> int:
        return self.problem.d


def build_problem(cfg: ExperimentConfig, ds: Dataset | None = None):
    ds = load_dataset(cfg) if ds is None else ds
    full = Problem.from_dataset(cfg.loss, ds)
    lam = cfg.lam if cfg.lam is not None else cfg.lam_ratio * _data_L(full)
    if cfg.regime == HORIZONTAL:
        shards = split_horizontal(ds, cfg.n, shuffle=cfg.shuffle, seed=cfg.seed)
        prob = HorizontalProblem([Problem.from_dataset(cfg.loss, sh.data, lam) for sh in shards])
        consts = prob.constants()
        f = prob.value
    else:
        blocks = split_vertical(ds, cfg.n, shuffle=cfg.shuffle, seed=cfg.seed)
        base = Problem(cfg.loss, full.A, full.b, lam)
        prob = vfl.VerticalSystem(base, blocks)
        consts = estimate_constants(base)
        f = base.value
    return prob, consts, f


def prepare(cfg: ExperimentConfig) -> Setup:
    prob, consts, f = build_problem(cfg)
    target = prob.problem if isinstance(prob, vfl.VerticalSystem) else prob
    xstar = analysis.reference_solution(target, consts=consts)
    return Setup(cfg, prob, consts, xstar, f(xstar), f)


class _Runner:
    """Wraps one algorithm behind ``step()`` / ``point()`` / ``psi()``."""

    def __init__(self, setup: Setup, pool):
        cfg = setup.cfg
        self.setup = setup
        self.pool = pool
        self.fab = Fabric(cfg.n, cfg.seed)
        self.ledger = CostLedger(cfg.accounting)
        self.params = None
        x0 = np.zeros(setup.d)
        alg, prob, consts, ov = cfg.algorithm, setup.problem, setup.consts, dict(cfg.overrides)
        if alg == "dhpl":
            comps, omega, permk = self._horizontal_compressors()
            self.comps = comps
            self.params = hfl.dhpl_params(consts, omega, comps[0].beta, cfg.n, permk=permk, **ov)
            self.state = hfl.init_state(prob, x0)
            self._step = lambda st: hfl.dhpl_step(st, prob, self.comps, self.params, self.fab, self.ledger, pool)
        elif alg in ("gd", "agd"):
            self.state = hfl.BaselineState.start(x0)
            if alg == "gd":
                self._step = lambda st: hfl.gd_step(st, prob, consts.L, self.ledger)
            else:
                self._step = lambda st: hfl.agd_step(st, prob, consts.L, consts.mu, self.ledger)
        elif alg in ("vgd", "vnesterov"):
            self.state = vfl.VerticalBaselineState.start(prob, x0)
            if alg == "vgd":
                self._step = lambda st: vfl.vertical_gd_step(st, prob, consts.L, self.ledger)
            else:
                self._step = lambda st: vfl.vertical_nesterov_step(st, prob, consts.L, consts.mu, self.ledger)
        else:
            self.state = vfl.init_state(prob, x0)
            if alg == "dvpl":
                K = cfg.batch or cfg.compressor.count(prob.s)
                self.params = vfl.dvpl_params(consts, K, **ov)
                self._step = lambda st: vfl.dvpl_step(st, prob, self.params, self.fab, self.ledger, pool)
            elif alg == "dvpl_scalar":
                K = cfg.batch or prob.s
                self.comps = [self._compressor(cfg.compressor, K, self.fab.worker_rng(i)) for i in range(cfg.n)]
                self.params = vfl.dvpl_scalar_params(consts, K, self.comps[0].omega, **ov)
                self._step = lambda st: vfl.dvpl_scalar_step(
                    st, prob, self.params, self.comps, self.fab, self.ledger, pool)
            else:
                self.family = vfl.sample_family(prob, self.fab)
                self.params = vfl.dvpl_permk_params(consts, cfg.n, **ov)
                self._step = lambda st: vfl.dvpl_permk_step(
                    st, prob, self.params, self.family, self.fab, self.ledger, pool)

    @staticmethod
    def _compressor(spec: CompressorSpec, dim: int, rng):
        if spec.kind == "identity":
            return Identity()
        if spec.kind == "randk":
            return RandK(dim, spec.count(dim), rng)
        if spec.kind == "natural":
            return NaturalDithering(rng)
        raise ConfigError(f"compressor {spec.kind!r} is not available here")

    def _horizontal_compressors(self):
        cfg, d = self.setup.cfg, self.setup.d
        if cfg.compressor.kind == "permk":
            fam = PermKFamily(cfg.n, d, self.fab.shared)
            return fam.members(), None, True
        comps = [self._compressor(cfg.compressor, d, self.fab.worker_rng(i)) for i in range(cfg.n)]
        return comps, comps[0].omega, False

    def step(self):
        self.state = self._step(self.state)

    def point(self) -> np.ndarray:
        st = self.state
        if self.params is None:
            x = st.x
        else:
            x = st.current_x(self.params)
        return self.setup.problem.join(x) if isinstance(x, list) else x

    def coin(self) -> str:
        c = getattr(self.state, "coin", None)
        return "" if c is None else str(int(c))

    def psi(self) -> float:
        if self.params is None:
            return math.nan
        s = self.setup
        return analysis.lyapunov(self.state, self.params, s.xstar, s.problem, s.fstar).Psi


def run_setup(setup: Setup) -> Trace:
    cfg = setup.cfg
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 0 else None
    try:
        runner = _Runner(setup, pool)
        trace = Trace(meta={"algorithm": cfg.algorithm, "seed": cfg.seed})
        if runner.params is not None:
            trace.meta["params"] = {k: getattr(runner.params, k) for k in ("eta", "sigma", "theta1", "theta2", "p", "Ltilde")}

        def row(k):
            x = runner.point()
            sub = setup.f(x) - setup.fstar
            dx = x - setup.xstar
            psi = runner.psi() if cfg.record_psi else math.nan
            return TraceRow(k, runner.ledger.scalars_sent, sub, float(dx @ dx), psi, runner.coin())

        first = row(0)
        trace.append(first)
        eps = cfg.eps * first.subopt if cfg.relative else cfg.eps
        limit = 10 * max(first.subopt, 1e-300)
        last = first
        k = 0
        while last.subopt > eps and k < cfg.max_rounds:
            runner.step()
            k += 1
            cur = row(k)
            if not np.isfinite(cur.subopt) or cur.subopt > limit:
                raise DivergenceError(
                    f"round {k}: suboptimality {cur.subopt:.3e} exceeds 10x the initial {first.subopt:.3e}"
                )
            last = cur
            if k % cfg.stride == 0 or cur.subopt <= eps:
                trace.append(cur)
        if trace.final.round != last.round:
            trace.append(last)
        return trace
    finally:
        if pool is not None:
            pool.shutdown()


def run_experiment(cfg: ExperimentConfig) -> Trace:
    return run_setup(prepare(cfg))


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def trace_csv(trace: Trace) -> str:
    if not trace.rows:
        raise ValueError("cannot emit an empty trace")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in trace.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def trace_json(trace: Trace) -> str:
    if not trace.rows:
        raise ValueError("cannot emit an empty trace")
    # json writes floats with repr, the shortest exact round-trip form; nan becomes null
    rows = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r._asdict().items()}
            for r in trace.rows]
    return json.dumps(rows, indent=1, allow_nan=False) + "\n"


def emit(trace: Trace, path=None, fmt: str = "csv") -> str:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown trace format {fmt!r}")
    text = trace_csv(trace) if fmt == "csv" else trace_json(trace)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _row(d: dict) -> TraceRow:
    return TraceRow(int(d["round"]), float(d["scalars"]), float(d["subopt"]), float(d["dist2"]),
                    math.nan if d["psi"] in (None, "") else float(d["psi"]), str(d["coin"]))


def parse_trace(text: str, fmt: str = "csv") -> Trace:
    if fmt == "csv":
        rows = list(csv.DictReader(io.StringIO(text)))
    else:
        rows = json.loads(text)
    return Trace([_row(r) for r in rows])
