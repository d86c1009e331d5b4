import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from rsma_urllc import convex


def _ball(x):
    return (np.array([x @ x - 1.0]), 2.0 * x[None, :], np.full((1, x.size), 2.0))


def _linear(c):
    return lambda x: (float(c @ x), c.copy(), np.zeros_like(x))


def test_linear_over_ball_matches_analytic():
    c = np.array([3.0, -1.0, 2.0])
    res = convex.barrier_maximize(_linear(c), _ball, np.zeros(3), gap=1e-10)
    np.testing.assert_allclose(res.x, c / np.linalg.norm(c), atol=1e-6)
    assert res.objective == pytest.approx(np.linalg.norm(c), rel=1e-8)


def test_log_sum_exp_constraint_with_rank_one_hessian():
    # maximize a.z s.t. log sum exp z <= 0; optimum exp(z) = a / sum(a)
    a = np.array([1.0, 2.0, 5.0])

    def cons(z):
        e = np.exp(z)
        w = e / e.sum()
        f = np.array([np.log(e.sum())])
        return f, w[None, :], w[None, :], w[None, :]

    res = convex.barrier_maximize(_linear(a), cons, np.full(3, -2.0), gap=1e-10)
    np.testing.assert_allclose(np.exp(res.x), a / a.sum(), rtol=1e-6)


def test_infeasible_start_rejected():
    with pytest.raises(convex.InfeasibleError):
        convex.barrier_maximize(_linear(np.ones(2)), _ball, np.array([2.0, 0.0]))


def test_phase_one_finds_interior_point():
    def cons(x):
        f = np.array([x @ x - 1.0, 0.5 - x[0]])
        J = np.vstack([2 * x, [-1.0, 0.0]])
        Hd = np.array([[2.0, 2.0], [0.0, 0.0]])
        return f, J, Hd
    x = convex.phase_one(cons, np.array([-3.0, 3.0]))
    assert np.all(cons(x)[0] < 0)


def test_phase_one_reports_empty_set():
    def cons(x):
        f = np.array([x @ x - 1.0, 2.0 - x[0]])
        J = np.vstack([2 * x, [-1.0, 0.0]])
        Hd = np.array([[2.0, 2.0], [0.0, 0.0]])
        return f, J, Hd
    with pytest.raises(convex.InfeasibleError):
        convex.phase_one(cons, np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_concave_qcqp_matches_slsqp(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, 3
    c = rng.normal(size=n)
    d = rng.uniform(0.5, 2.0, n)
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.5, 1.5, m)
    r2 = rng.uniform(1.0, 4.0)

    def obj(x):
        return float(c @ x - 0.5 * d @ x ** 2), c - d * x, -d

    def cons(x):
        f = np.concatenate((A @ x - b, [x @ x - r2]))
        J = np.vstack((A, 2 * x))
        Hd = np.vstack((np.zeros((m, n)), np.full(n, 2.0)))
        return f, J, Hd

    res = convex.barrier_maximize(obj, cons, np.zeros(n), gap=1e-10)
    ref = optimize.minimize(lambda x: -obj(x)[0], np.zeros(n), jac=lambda x: -obj(x)[1],
                            method="SLSQP",
                            constraints=[{"type": "ineq", "fun": lambda x: -cons(x)[0],
                                          "jac": lambda x: -cons(x)[1]}],
                            options=dict(ftol=1e-14, maxiter=500))
    assert ref.success
    assert res.objective == pytest.approx(-ref.fun, abs=1e-7)
