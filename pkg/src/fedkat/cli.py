"""Command line entry point.

    fedkat run --config exp.yaml [--seed N] [--out trace.csv] [--format csv|json]
    fedkat constants --config exp.yaml
    fedkat verify --suite lemmas [--trials N] [--states N]

Exit status: 0 success, 1 usage error, 2 bound violation or divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analysis, hfl, vfl
from .comm_sim import Fabric
from .compressors import PermKFamily, RandK
from .harness import ConfigError, DivergenceError, ExperimentConfig, build_problem, emit, run_experiment
from .problems import LEAST_SQUARES, LOGISTIC, HorizontalProblem, Problem, estimate_constants


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedkat", description="Compressed distributed L-Katyusha experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    con = sub.add_parser("constants", help="print smoothness constants of the configured problem")
    con.add_argument("--config", required=True)
    ver = sub.add_parser("verify", help="Monte Carlo checks of the variance bounds")
    ver.add_argument("--suite", choices=("lemmas",), required=True)
    ver.add_argument("--trials", type=int, default=10_000)
    ver.add_argument("--states", type=int, default=20)
    ver.add_argument("--seed", type=int, default=0)
    return p


def _config(path, seed=None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(path)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args.config, args.seed)
    trace = run_experiment(cfg)
    text = emit(trace, args.out, args.format)
    if args.out is None:
        sys.stdout.write(text)
    else:
        last = trace.final
        print(f"{cfg.algorithm}: {last.round} rounds, {last.scalars:.6g} scalars, subopt {last.subopt:.3e}")
    return 0


def cmd_constants(args) -> int:
    cfg = _config(args.config)
    _, consts, _ = build_problem(cfg)
    print(json.dumps(consts.summary(), indent=1))
    return 0


def lemma_suite(trials: int = 10_000, states: int = 20, seed: int = 0, log=print) -> bool:
    """Variance-bound checks for every estimator family on small synthetic problems."""
    rng = np.random.default_rng(seed)
    ok = True

    def report(name, results):
        nonlocal ok
        passed = sum(r.passed for r in results)
        worst = max(r.lhs / max(r.rhs, 1e-300) for r in results)
        log(f"{name:<28} {passed}/{len(results)} states pass   worst lhs/rhs {worst:.3f}")
        ok &= passed == len(results)

    s, d, n = 40, 10, 2
    A = rng.standard_normal((s, d))
    labels = np.where(rng.standard_normal(s) >= 0, 1.0, -1.0)
    shards = [Problem(LOGISTIC, A[i::n], labels[i::n], 0.1) for i in range(n)]
    hp = HorizontalProblem(shards)
    L = hp.constants().L
    pts = [(rng.standard_normal(d), rng.standard_normal(d)) for _ in range(states)]

    fab = Fabric(n, seed)
    comps = [RandK(d, 1, fab.worker_rng(i)) for i in range(n)]
    report("randk horizontal", [analysis.variance_gap(
        analysis.dhpl_estimator(hp, comps, x, w, L * d / n), trials) for x, w in pts])
    fam = PermKFamily(n, d, fab.shared)
    report("permk horizontal", [analysis.variance_gap(
        analysis.dhpl_estimator(hp, fam.members(), x, w, L), trials) for x, w in pts])

    mse = Problem(LEAST_SQUARES, A, A @ rng.standard_normal(d), 0.1)
    consts = estimate_constants(mse)
    sysv = vfl.VerticalSystem(mse, np.array_split(np.arange(d), 5))
    fabv = Fabric(5, seed + 1)
    K = 4
    par = vfl.dvpl_params(consts, K)
    report("importance sampling", [analysis.variance_gap(
        analysis.dvpl_estimator(sysv, par, x, w, fabv), trials) for x, w in pts])
    scomp = [RandK(K, 2, fabv.worker_rng(i)) for i in range(5)]
    spar = vfl.dvpl_scalar_params(consts, K, scomp[0].omega)
    report("scalar compression", [analysis.variance_gap(
        analysis.dvpl_scalar_estimator(sysv, spar, scomp, x, w, fabv), trials) for x, w in pts])
    vfam = vfl.sample_family(sysv, fabv)
    report("permk over samples", [analysis.variance_gap(
        analysis.dvpl_permk_estimator(sysv, vfam, x, w, vfl.permk_Ltilde(consts)), trials, factor=4.0)
        for x, w in pts])
    return ok


def cmd_verify(args) -> int:
    if args.trials < 1000:
        raise UsageError("--trials must be at least 1000")
    return 0 if lemma_suite(args.trials, args.states, args.seed) else 2


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": cmd_run, "constants": cmd_constants, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"fedkat: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"fedkat: diverged: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
