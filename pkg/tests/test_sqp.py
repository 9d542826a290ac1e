import numpy as np
import pytest

from mixsolve import mixem, mixsqp
from mixsolve.baselines import FirstOrderConfig
from mixsolve.objective import LikelihoodOperator, eval_derivatives, eval_objective
from mixsolve.problem import InvalidInputError
from mixsolve.sqp import SqpConfig, line_search, normalize_solution

from oracles import loss, random_likelihood, simulated_matrix


@pytest.mark.parametrize("use_lowrank", [True, False])
def test_symmetric_problem(use_lowrank):
    L = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    r = mixsqp(L, SqpConfig(use_lowrank=use_lowrank))
    assert r.converged
    np.testing.assert_allclose(r.x, [0.5, 0.5], atol=1e-8)
    assert r.objective == pytest.approx(-(2 * np.log(0.5)) / 3, abs=1e-8)
    assert r.x.sum() == 1.0


@pytest.mark.parametrize("use_lowrank", [True, False])
def test_dominated_column_gets_zero_weight(use_lowrank):
    r = mixsqp(np.array([[1.0, 0.5], [1.0, 0.5]]), SqpConfig(use_lowrank=use_lowrank))
    assert r.converged
    np.testing.assert_allclose(r.x, [1.0, 0.0], atol=1e-8)


def test_normalize_solution():
    np.testing.assert_array_equal(normalize_solution([2, 2]), [0.5, 0.5])
    np.testing.assert_array_equal(normalize_solution([1, 0, 3]), [0.25, 0, 0.75])
    with pytest.raises(InvalidInputError):
        normalize_solution([0, 0])
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.exponential(size=9) * (rng.random(9) < 0.6)
        v[rng.integers(9)] += 1.0
        x = normalize_solution(v)
        assert x.sum() == 1.0
        assert np.array_equal(x > 0, v > 0)


def test_line_search_accepts_unit_step():
    op = LikelihoodOperator(np.array([[1.0]]))
    x, p = np.array([0.9]), np.array([0.1])
    b = eval_derivatives(op, x)
    alpha, f_new, trials = line_search(op, x, p, b.gradient, b.objective, SqpConfig())
    assert alpha == 1.0 and trials == 1
    assert f_new == pytest.approx(1.0)


def test_line_search_zero_direction():
    op = LikelihoodOperator(np.eye(2))
    x = np.array([0.5, 0.5])
    b = eval_derivatives(op, x)
    alpha, f_new, _ = line_search(op, x, np.zeros(2), b.gradient, b.objective, SqpConfig())
    assert alpha == 1.0 and f_new == b.objective


def test_line_search_halves_once():
    # f*(x) = -log x + x at x = 0.1; the full step overshoots to 5.1
    op = LikelihoodOperator(np.array([[1.0]]))
    x, p = np.array([0.1]), np.array([5.0])
    b = eval_derivatives(op, x)
    assert eval_objective(op, x + p) > b.objective
    alpha, _, trials = line_search(op, x, p, b.gradient, b.objective, SqpConfig())
    assert alpha == 0.5 and trials == 2


def test_line_search_gives_up():
    op = LikelihoodOperator(np.array([[1.0]]))
    x = np.array([0.5])
    b = eval_derivatives(op, x)
    # g = -1 at 0.5, so p = -0.4 is an ascent direction and Armijo never holds
    alpha, f_new, trials = line_search(op, x, np.array([-0.4]), b.gradient, b.objective,
                                       SqpConfig(max_linesearch=5))
    assert alpha is None and trials == 5 and f_new == b.objective


@pytest.mark.parametrize("seed", range(6))
def test_random_problems_satisfy_kkt(seed):
    rng = np.random.default_rng(seed)
    A = random_likelihood(rng, 300, 12)
    seen = []
    r = mixsqp(A, SqpConfig(use_lowrank=False, delta=0.0, callback=seen.append))
    assert r.converged
    g = eval_derivatives(LikelihoodOperator(A), r.x).gradient
    assert r.dual_residual <= 1e-8
    assert np.max(np.abs(r.x * g)) <= 1e-6
    assert abs(r.pre_normalization_sum - 1) <= 1e-6
    assert seen == r.trace
    f = [rec.objective for rec in r.trace]
    assert np.all(np.diff(f) <= 1e-12)
    assert all(0 < rec.alpha <= 1 and 1 <= rec.nnz <= 12 for rec in r.trace)


def test_dense_and_lowrank_solutions_agree():
    L = simulated_matrix(2000, 30)
    dense = mixsqp(L, SqpConfig(use_lowrank=False))
    approx = mixsqp(L, SqpConfig(rtol_qr=1e-12))
    assert approx.factor_rank > 0 and dense.factor_rank == 0
    assert np.abs(dense.x - approx.x).sum() <= 1e-6


def test_solution_is_sparse():
    r = mixsqp(simulated_matrix(2000, 60))
    assert r.converged
    assert r.nnz <= 60 / 4


def test_agrees_with_long_em_run():
    L = simulated_matrix(2000, 20, seed=3)
    r = mixsqp(L)
    em = mixem(L, FirstOrderConfig(max_iter=20000, tol=0.0, record_trace=False))
    assert abs(em.objective - r.objective) <= 1e-5
    assert r.objective <= em.objective + 1e-9


def test_deterministic_traces():
    L = simulated_matrix(1000, 25)
    a, b = mixsqp(L), mixsqp(L)
    assert np.array_equal(a.x, b.x)
    strip = lambda tr: [(t.iter, t.objective, t.dual_residual, t.alpha) for t in tr]  # noqa: E731
    assert strip(a.trace) == strip(b.trace)


def test_objective_is_for_callers_scaling():
    L = simulated_matrix(500, 10)
    r = mixsqp(L)
    assert r.objective == pytest.approx(loss(L.values, r.x), abs=1e-14)
    scaled = L.values * np.linspace(0.5, 2, 500)[:, None]
    rs = mixsqp(scaled)
    assert rs.objective == pytest.approx(loss(scaled, rs.x), abs=1e-12)


def test_max_iter_status():
    r = mixsqp(simulated_matrix(500, 10), SqpConfig(max_iter=1))
    assert r.status == "max_iter" and r.n_iter == 1
    assert r.x.sum() == 1.0


def test_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        mixsqp(np.array([[1.0, -1.0]]))
    with pytest.raises(InvalidInputError):
        mixsqp(np.eye(2), x0=[0.7, 0.7])
    with pytest.raises(InvalidInputError):
        SqpConfig(xi=1.5)
    with pytest.raises(InvalidInputError):
        SqpConfig(rtol_qr=0.0)
