import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit, logit

from sctmle.errors import DomainError
from sctmle.glm import SCORE_TOL, fit_fluctuation, fit_linear, fit_logistic, fit_probit


def _loglik(beta, X, y, offset=0.0):
    eta = X @ beta + offset
    return float(np.sum(y * eta - np.logaddexp(0, eta)))


def _brute_logistic(X, y, offset=0.0):
    """Coarse grid over the coefficient box, then Nelder-Mead polish."""
    axes = [np.linspace(-4, 4, 41)] * X.shape[1]
    grid = np.array(np.meshgrid(*axes)).reshape(X.shape[1], -1).T
    start = grid[np.argmax([_loglik(b, X, y, offset) for b in grid])]
    res = minimize(lambda b: -_loglik(b, X, y, offset), start, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 20000, "maxfev": 40000})
    return res.x


def _sample(n, seed, beta=(0.3, -0.8)):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), x])
    y = (rng.random(n) < expit(X @ np.array(beta))).astype(float)
    return X, y


def test_intercept_only_balanced():
    fit = fit_logistic(np.ones((4, 1)), [1, 0, 1, 0])
    assert fit.converged
    assert abs(fit.coefficients[0]) < 1e-12


def test_all_ones_is_capped():
    fit = fit_logistic(np.ones((4, 1)), [1, 1, 1, 1])
    assert fit.max_abs_coefficient_capped
    assert not fit.converged


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_logistic_matches_optimizer(seed):
    X, y = _sample(20, seed)
    fit = fit_logistic(X, y)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, _brute_logistic(X, y), atol=1e-6)


def test_logistic_with_offset_matches_optimizer():
    X, y = _sample(20, 5)
    off = np.linspace(-1, 1, 20)
    fit = fit_logistic(X, y, offset=off)
    np.testing.assert_allclose(fit.coefficients, _brute_logistic(X, y, off), atol=1e-6)


def test_score_and_finite_difference_at_optimum():
    X, y = _sample(200, 3)
    fit = fit_logistic(X, y)
    score = X.T @ (y - fit.predict(X))
    assert np.max(np.abs(score)) <= SCORE_TOL
    h = 1e-5
    for j in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[j] = h
        fd = (_loglik(fit.coefficients + e, X, y) - _loglik(fit.coefficients - e, X, y)) / (2 * h)
        assert abs(fd) < 1e-5


def test_offset_shifts_intercept():
    X, y = _sample(100, 4)
    base = fit_logistic(X, y)
    shifted = fit_logistic(X, y, offset=np.full(100, 0.7))
    np.testing.assert_allclose(shifted.coefficients, base.coefficients - [0.7, 0], atol=1e-7)


def test_separation_flagged():
    x = np.arange(-5.0, 5.0)
    fit = fit_logistic(np.column_stack([np.ones(10), x]), (x > 0).astype(float))
    assert fit.max_abs_coefficient_capped
    assert np.max(np.abs(fit.coefficients)) <= 20


def test_rank_deficiency_named_or_dropped():
    X, y = _sample(30, 6)
    Xd = np.column_stack([X, 2 * X[:, 1]])
    with pytest.raises(DomainError, match="w_dup"):
        fit_logistic(Xd, y, column_names=("(intercept)", "w", "w_dup"))
    fit = fit_logistic(Xd, y, rank="drop")
    assert fit.aliased == (2,)
    np.testing.assert_allclose(fit.coefficients[:2], fit_logistic(X, y).coefficients, atol=1e-9)


def test_probit_recovers_coefficients():
    rng = np.random.default_rng(9)
    x = rng.normal(size=40000)
    X = np.column_stack([np.ones_like(x), x])
    from scipy.stats import norm

    y = (rng.random(x.size) < norm.cdf(0.2 + 0.5 * x)).astype(float)
    fit = fit_probit(X, y)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, [0.2, 0.5], atol=0.03)


# --- least squares -----------------------------------------------------------


def test_linear_mean():
    assert fit_linear(np.ones((2, 1)), [2, 4]).coefficients[0] == pytest.approx(3)


def test_linear_identity():
    y = np.array([1.0, -2.0, 3.5])
    fit = fit_linear(y[:, None], y)
    assert fit.coefficients[0] == pytest.approx(1)
    np.testing.assert_allclose(fit.predict(y[:, None]) - y, 0, atol=1e-14)


def _adjugate_solve(G, b):
    """3x3 inverse by cofactors: beta = adj(G) b / det(G)."""
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(G, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    det = sum(G[0, j] * cof[0, j] for j in range(3))
    return cof.T @ b / det


@pytest.mark.parametrize("seed", range(5))
def test_linear_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    fit = fit_linear(X, y)
    np.testing.assert_allclose(fit.coefficients, _adjugate_solve(X.T @ X, X.T @ y), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_linear_offset_identity(seed, shift):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(12), rng.normal(size=12)])
    y = rng.normal(size=12)
    a = fit_linear(X, y, offset=np.full(12, shift)).coefficients
    b = fit_linear(X, y).coefficients
    np.testing.assert_allclose(a, b - [shift, 0], atol=1e-10)


# --- fluctuation ----------------------------------------------------------


def test_fluctuation_zero_residual():
    q = np.array([0.1, 2.0, -1.0])
    assert fit_fluctuation(q, q, np.array([1.0, -2.0, 3.0]), "continuous") == 0


def test_fluctuation_constant_residual():
    assert fit_fluctuation([2, 2], [0, 0], [1, 1], "continuous") == pytest.approx(2)


def _golden(f, lo, hi, tol=1e-12):
    phi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    while b - a > tol:
        if f(c) < f(d):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    return (a + b) / 2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_binary_fluctuation_matches_line_search(seed):
    rng = np.random.default_rng(seed)
    n = 50
    q0 = rng.uniform(0.1, 0.9, n)
    a = rng.integers(0, 2, n)
    g = rng.uniform(0.2, 0.8, n)
    h = a / g - (1 - a) / (1 - g)
    y = (rng.random(n) < expit(logit(q0) + 0.3 * h)).astype(float)

    def nll(e):
        return -_loglik(np.array([e]), h[:, None], y, logit(q0))

    grid = np.linspace(-3, 3, 6001)
    e0 = grid[np.argmin([nll(e) for e in grid])]
    oracle = _golden(nll, e0 - 1e-3, e0 + 1e-3)
    assert fit_fluctuation(y, q0, h, "binary") == pytest.approx(oracle, abs=1e-6)


def test_fluctuation_rejects_zero_direction():
    with pytest.raises(DomainError):
        fit_fluctuation([1, 0], [0.5, 0.5], [0, 0], "binary")


def test_binary_fluctuation_requires_open_interval():
    with pytest.raises(DomainError):
        fit_fluctuation([1, 0], [1.0, 0.5], [1, 1], "binary")
