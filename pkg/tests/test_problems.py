import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedkat.problems import (
    LEAST_SQUARES,
    LOGISTIC,
    ConvergenceError,
    HorizontalProblem,
    Problem,
    ProblemConstants,
    estimate_constants,
    extreme_eigs,
    power_iteration,
    with_l2_ratio,
)


def test_ls_identity_value_and_grad():
    prob = Problem(LEAST_SQUARES, np.eye(2), np.zeros(2))
    v, g = prob.eval([1.0, 1.0])
    assert v == 1.0
    assert g.tolist() == [1.0, 1.0]


def test_logistic_single_sample():
    prob = Problem(LOGISTIC, np.array([[1.0, 0.0]]), np.array([1.0]))
    v, g = prob.eval(np.zeros(2))
    assert v == pytest.approx(math.log(2), abs=1e-15)
    assert g.tolist() == [-0.5, 0.0]


def test_ls_diag_value_and_grad():
    prob = Problem(LEAST_SQUARES, np.diag([1.0, 2.0]), np.zeros(2))
    v, g = prob.eval(np.ones(2))
    assert v == 2.5
    assert g.tolist() == [1.0, 4.0]


def test_dimension_mismatch():
    prob = Problem(LEAST_SQUARES, np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        prob.eval(np.ones(3))


def test_logistic_rejects_real_labels():
    with pytest.raises(ValueError):
        Problem(LOGISTIC, np.eye(2), np.array([0.5, 1.0]))


def test_sample_grad_examples():
    prob = Problem(LEAST_SQUARES, np.array([[1.0, 1.0], [0.0, 0.0]]), np.zeros(2))
    assert prob.sample_grad(0, [1.0, 1.0]).tolist() == [4.0, 4.0]
    assert prob.sample_grad(1, [3.0, -2.0]).tolist() == [0.0, 0.0]
    lg = Problem(LOGISTIC, np.array([[2.0, 0.0]]), np.array([-1.0]))
    assert lg.sample_grad(0, np.zeros(2)).tolist() == [1.0, 0.0]
    with pytest.raises(IndexError):
        prob.sample_grad(2, np.zeros(2))


def _random_problem(kind, seed, s=15, d=6, lam=0.05):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((s, d))
    b = np.where(rng.random(s) < 0.5, -1.0, 1.0) if kind == LOGISTIC else rng.standard_normal(s)
    return Problem(kind, A, b, lam), rng


@pytest.mark.parametrize("kind", [LOGISTIC, LEAST_SQUARES])
def test_gradient_matches_finite_differences(kind):
    prob, rng = _random_problem(kind, 1)
    for _ in range(100):
        x = rng.standard_normal(prob.d)
        g = prob.grad(x)
        fd = np.empty_like(x)
        for i in range(len(x)):
            h = 1e-6 * (1 + abs(x[i]))
            e = np.zeros_like(x)
            e[i] = h
            fd[i] = (prob.value(x + e) - prob.value(x - e)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-8)


@pytest.mark.parametrize("kind", [LOGISTIC, LEAST_SQUARES])
def test_sample_gradients_average_to_full(kind):
    prob, rng = _random_problem(kind, 2)
    x = rng.standard_normal(prob.d)
    avg = sum(prob.sample_grad(j, x) for j in range(prob.s)) / prob.s + prob.lam * x
    g = prob.grad(x)
    assert np.linalg.norm(avg - g) <= 1e-12 * np.linalg.norm(g)


def test_constants_diag_example():
    c = estimate_constants(Problem(LEAST_SQUARES, np.diag([1.0, 2.0]), np.zeros(2)))
    assert c.L == pytest.approx(4.0, rel=1e-6)
    assert c.mu == pytest.approx(1.0, rel=1e-6)
    assert c.Lj.tolist() == [2.0, 8.0]
    assert c.Lbar == 5.0


def test_constants_zero_logistic():
    c = estimate_constants(Problem(LOGISTIC, np.zeros((3, 2)), np.ones(3), 0.1))
    assert c.L == pytest.approx(0.1) and c.mu == pytest.approx(0.1)


def test_constants_lower_bound_matrix():
    a, b = 1.3, 0.4
    c = estimate_constants(Problem(LEAST_SQUARES, np.array([[a, a], [b, -b]]), np.zeros(2)))
    # (2/s) A^T A with s = 2 is A^T A itself
    assert c.L == pytest.approx(2 * a * a, rel=1e-6)
    assert c.mu == pytest.approx(2 * b * b, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_constants_against_dense_eigensolver(seed):
    prob, _ = _random_problem(LEAST_SQUARES, seed, s=30, d=8, lam=0.0)
    eig = np.linalg.eigvalsh(2 / prob.s * prob.A.T @ prob.A)
    c = estimate_constants(prob)
    assert c.L == pytest.approx(eig[-1], rel=1e-6)
    assert c.mu == pytest.approx(eig[0], rel=1e-5)


def test_power_iteration_reports_residual():
    M = np.diag([1.0, 1.0 - 1e-9, 0.5])
    with pytest.raises(ConvergenceError) as err:
        power_iteration(lambda v: M @ v, 3, tol=1e-14, max_iter=5)
    assert err.value.residual > 0


def test_constants_invariants():
    with pytest.raises(ValueError):
        ProblemConstants(L=1.0, mu=0.0, Lj=[1.0])
    with pytest.raises(ValueError):
        ProblemConstants(L=1.0, mu=2.0, Lj=[1.0])


@pytest.mark.parametrize("kind", [LOGISTIC, LEAST_SQUARES])
def test_smoothness_and_convexity_certificates(kind):
    prob, rng = _random_problem(kind, 3)
    c = estimate_constants(prob)
    X = rng.standard_normal((1000, 2, prob.d)) * 3
    for x, y in X:
        fx, gx = prob.eval(x)
        lin = fx + gx @ (y - x)
        q = 0.5 * (y - x) @ (y - x)
        fy = prob.value(y)
        assert fy <= lin + c.L * q + 1e-10 * (1 + abs(fy))
        assert fy >= lin + c.mu * q - 1e-10 * (1 + abs(fy))


def test_l2_ratio_two_pass():
    prob, _ = _random_problem(LOGISTIC, 4, lam=0.0)
    L0 = estimate_constants(Problem(LOGISTIC, prob.A, prob.b, 1e-12)).L
    reg = with_l2_ratio(prob, 0.01)
    assert reg.lam == pytest.approx(L0 / 100, rel=1e-5)
    assert estimate_constants(reg).L == pytest.approx(L0 + reg.lam, rel=1e-5)


@given(st.integers(1, 4), st.integers(0, 1000))
def test_horizontal_average(n, seed):
    prob, rng = _random_problem(LEAST_SQUARES, seed, s=12, d=4)
    shards = [Problem(prob.kind, prob.A[i::n], prob.b[i::n], prob.lam) for i in range(n)]
    hp = HorizontalProblem(shards)
    x = rng.standard_normal(4)
    manual = np.mean([sh.grad(x) for sh in shards], axis=0)
    assert np.allclose(hp.grad(x), manual, rtol=1e-13, atol=0)
    assert hp.bregman(x, x) == 0.0


def test_horizontal_constants_bound_every_shard():
    prob, _ = _random_problem(LEAST_SQUARES, 5, s=24, d=5)
    hp = HorizontalProblem([Problem(prob.kind, prob.A[i::3], prob.b[i::3], prob.lam) for i in range(3)])
    c = hp.constants()
    assert all(estimate_constants(sh).L <= c.L * (1 + 1e-9) for sh in hp.shards)
    H = np.mean([2 / sh.s * sh.A.T @ sh.A for sh in hp.shards], axis=0) + prob.lam * np.eye(5)
    assert c.mu == pytest.approx(np.linalg.eigvalsh(H)[0], rel=1e-5)


def test_shifted_iteration_for_operator_without_matrix():
    rng = np.random.default_rng(3)
    eigs = np.array([9.0, 4.0, 2.5, 1.0, 0.5])
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    M = (Q * eigs) @ Q.T
    lmax, lmin = extreme_eigs(lambda v: M @ v, 5, tol=1e-10)
    assert lmax == pytest.approx(9.0, rel=1e-8)
    assert lmin == pytest.approx(0.5, rel=1e-6)
