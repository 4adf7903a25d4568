import numpy as np
import pytest
from scipy.special import expit

from sctmle.errors import DomainError
from sctmle.estimators import (
    NuisanceFits,
    clever_covariate,
    eic_values,
    estimate_aipw,
    estimate_ipw,
    estimate_stabilized_ipw,
    estimate_tmle,
    fit_nuisance,
    inference,
    targeted_update,
)
from sctmle.tabular import Dataset


def _data(a, y, W=None, family="continuous"):
    a = np.asarray(a)
    W = np.zeros((a.size, 0)) if W is None else np.asarray(W, dtype=float)
    names = tuple(f"w{j}" for j in range(W.shape[1]))
    return Dataset(names, W, a, np.asarray(y, dtype=float), family)


def _random_instance(n, seed, family="continuous"):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    a[:2] = (0, 1)
    g = rng.uniform(0.15, 0.85, n)
    if family == "binary":
        y = rng.integers(0, 2, n).astype(float)
        q1, q0 = rng.uniform(0.1, 0.9, n), rng.uniform(0.1, 0.9, n)
    else:
        y = rng.normal(size=n)
        q1, q0 = rng.normal(size=n), rng.normal(size=n)
    return _data(a, y, family=family), NuisanceFits.from_predictions(a, g, q1, q0)


@pytest.mark.parametrize("a,g,expected", [(1, 0.5, 2), (0, 0.5, -2), (1, 0.2, 5)])
def test_clever_covariate(a, g, expected):
    assert clever_covariate(a, g) == pytest.approx(expected)


def test_eic_hand_value():
    d = _data([1], [1.5])
    fits = NuisanceFits.from_predictions([1], 0.5, 1.0, 0.0)
    assert eic_values(d, fits, 1.0)[0] == pytest.approx(1.0)


def test_eic_mean_zero_when_q_exact():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, 30)
    q1, q0 = rng.normal(size=30), rng.normal(size=30)
    y = np.where(a == 1, q1, q0)
    fits = NuisanceFits.from_predictions(a, rng.uniform(0.2, 0.8, 30), q1, q0)
    ic = eic_values(_data(a, y), fits, float(np.mean(q1 - q0)))
    assert abs(ic.mean()) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_eic_term_by_term(seed):
    d, fits = _random_instance(15, seed)
    psi = 0.37
    expected = []
    for i in range(d.n):
        g = fits.g1w[i]
        h = 1 / g if d.A[i] == 1 else -1 / (1 - g)
        qa = fits.q_1[i] if d.A[i] == 1 else fits.q_0[i]
        expected.append(h * (d.Y[i] - qa) + fits.q_1[i] - fits.q_0[i] - psi)
    np.testing.assert_allclose(eic_values(d, fits, psi), expected, atol=1e-12)


# --- IPW family ---------------------------------------------------------------


def test_ipw_hand():
    d = _data([1, 0], [1, 0])
    assert estimate_ipw(d, NuisanceFits.from_predictions(d.A, 0.5, 0, 0)).psi == pytest.approx(1)


def test_ipw_zero_outcome():
    d = _data([1, 0, 1], [0, 0, 0])
    assert estimate_ipw(d, NuisanceFits.from_predictions(d.A, 0.3, 0, 0)).psi == 0


def test_ipw_unit_outcome():
    a = np.array([1, 1, 0, 1, 0])
    d = _data(a, np.ones(5))
    psi = estimate_ipw(d, NuisanceFits.from_predictions(a, 0.5, 0, 0)).psi
    assert psi == pytest.approx(2 * a.mean() - 2 * (1 - a).mean())


def test_sipw_constant_outcome():
    d = _data([1, 0, 1, 0], [3, 3, 3, 3])
    assert estimate_stabilized_ipw(d, NuisanceFits.from_predictions(d.A, 0.3, 0, 0)).psi == pytest.approx(0)


def test_sipw_equal_weights_is_difference_in_means():
    d = _data([1, 0, 1, 0, 1], [2.0, 1.0, 4.0, 0.5, 3.0])
    psi = estimate_stabilized_ipw(d, NuisanceFits.from_predictions(d.A, 0.5, 0, 0)).psi
    assert psi == pytest.approx(3.0 - 0.75)


@pytest.mark.parametrize("seed", range(5))
def test_sipw_two_pass_oracle(seed):
    d, fits = _random_instance(18, seed)
    num1 = den1 = num0 = den0 = 0.0
    for i in range(d.n):
        if d.A[i] == 1:
            num1 += d.Y[i] / fits.g1w[i]
            den1 += 1 / fits.g1w[i]
        else:
            num0 += d.Y[i] / (1 - fits.g1w[i])
            den0 += 1 / (1 - fits.g1w[i])
    assert estimate_stabilized_ipw(d, fits).psi == pytest.approx(num1 / den1 - num0 / den0, abs=1e-12)


def test_sipw_needs_both_arms():
    d = _data([1, 1], [0, 1])
    with pytest.raises(DomainError):
        estimate_stabilized_ipw(d, NuisanceFits.from_predictions(d.A, 0.5, 0, 0))


# --- AIPW ---------------------------------------------------------------------


def test_aipw_exact_q_is_plugin():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2, 20)
    q1, q0 = rng.normal(size=20), rng.normal(size=20)
    d = _data(a, np.where(a == 1, q1, q0))
    fits = NuisanceFits.from_predictions(a, rng.uniform(0.2, 0.8, 20), q1, q0)
    assert estimate_aipw(d, fits).psi == pytest.approx(np.mean(q1 - q0), abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_aipw_with_zero_q_equals_ipw(seed):
    d, fits = _random_instance(20, seed)
    zero = NuisanceFits.from_predictions(d.A, fits.g1w, 0, 0)
    assert estimate_aipw(d, zero).psi == pytest.approx(estimate_ipw(d, zero).psi, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_aipw_term_by_term(seed):
    d, fits = _random_instance(20, seed)
    total = 0.0
    for i in range(d.n):
        g = fits.g1w[i]
        if d.A[i] == 1:
            total += (d.Y[i] - fits.q_1[i]) / g
        else:
            total -= (d.Y[i] - fits.q_0[i]) / (1 - g)
        total += fits.q_1[i] - fits.q_0[i]
    assert estimate_aipw(d, fits).psi == pytest.approx(total / d.n, abs=1e-12)


def test_aipw_can_leave_bounds_tmle_cannot():
    # binary outcome, extreme weight on one poorly fitted treated unit
    a = np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 1])
    y = np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 1.0])
    g = np.array([0.02, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5])
    d = _data(a, y, family="binary")
    fits = NuisanceFits.from_predictions(a, g, 0.05, 0.05, g_bound=0.01)
    assert estimate_aipw(d, fits).psi > 1
    assert -1 <= estimate_tmle(d, fits).psi <= 1


# --- TMLE ---------------------------------------------------------------------


def test_tmle_no_update_when_score_solved():
    a = np.array([1, 0, 1, 0])
    q1 = np.array([1.0, 2.0, 3.0, 4.0])
    q0 = np.array([0.5, 0.0, 1.0, 2.0])
    d = _data(a, np.where(a == 1, q1, q0))
    fits = NuisanceFits.from_predictions(a, 0.4, q1, q0)
    _, eps = targeted_update(d, fits)
    assert eps == 0
    assert estimate_tmle(d, fits).psi == pytest.approx(np.mean(q1 - q0))


def test_tmle_hand_two_points():
    # g = 0.5 so H = (2, -2); residuals (1, 0.5)
    d = _data([1, 0], [2.0, 1.5])
    fits = NuisanceFits.from_predictions(d.A, 0.5, [1.0, 1.0], [1.0, 1.0])
    eps_hand = (2 * 1.0 + (-2) * 0.5) / (4 + 4)
    q1 = 1 + eps_hand * 2
    q0 = 1 - eps_hand * 2
    targeted, eps = targeted_update(d, fits)
    assert eps == pytest.approx(eps_hand)
    assert estimate_tmle(d, fits).psi == pytest.approx(q1 - q0)


@pytest.mark.parametrize("family,tol", [("continuous", 1e-8), ("binary", 1e-6)])
def test_tmle_solves_score(family, tol):
    for seed in range(25):
        d, fits = _random_instance(60, seed, family)
        rep = estimate_tmle(d, fits)
        assert abs(rep.influence_values.mean()) <= tol


def test_fitted_nuisance_tmle_near_truth():
    rng = np.random.default_rng(0)
    n = 4000
    W = rng.normal(size=(n, 2))
    a = (rng.random(n) < expit(0.4 * W[:, 0] - 0.3 * W[:, 1])).astype(int)
    y = 1 + 2 * a + W @ [1.0, -0.5] + rng.normal(size=n)
    d = Dataset(("w1", "w2"), W, a, y)
    rep = estimate_tmle(d, fit_nuisance(d))
    assert abs(rep.psi - 2) < 3 * rep.se


def test_known_g_ipw_null_calibration():
    # null effect, correctly known g: the IPW Wald interval should cover 0 close to nominal
    rng = np.random.default_rng(11)
    covered = 0
    reps = 400
    for _ in range(reps):
        w = rng.normal(size=300)
        g = expit(0.5 * w)
        a = (rng.random(300) < g).astype(int)
        y = w + rng.normal(size=300)
        rep = estimate_ipw(_data(a, y), NuisanceFits.from_predictions(a, g, 0, 0))
        covered += rep.ci_lower <= 0 <= rep.ci_upper
    assert 0.92 <= covered / reps <= 0.98


# --- inference ------------------------------------------------------------------


def test_inference_degenerate():
    se, ci, p = inference(np.zeros(10), 0.0)
    assert se == 0 and p == 1 and ci == (0, 0)


def test_inference_se_formula():
    ic = np.random.default_rng(2).normal(size=100)
    se, _, _ = inference(ic, 0.1)
    assert se == pytest.approx(np.std(ic, ddof=1) / 10)


def test_inference_p_at_critical_value():
    ic = np.random.default_rng(3).normal(size=100)
    se = np.std(ic, ddof=1) / 10
    _, _, p = inference(ic, 1.959964 * se)
    assert p == pytest.approx(0.05, abs=1e-6)


def test_g_bound_validation():
    with pytest.raises(DomainError):
        NuisanceFits.from_predictions([1, 0], 0.5, 0, 0, g_bound=0.5)
    fits = NuisanceFits.from_predictions([1, 0], [0.0, 1.0], 0, 0, g_bound=0.05)
    np.testing.assert_array_equal(fits.g1w, [0.05, 0.95])
