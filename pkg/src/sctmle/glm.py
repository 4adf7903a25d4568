"""Logistic (IRLS) and least-squares regression with an optional fixed offset."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit, logit
from scipy.stats import norm

from sctmle.errors import DomainError

DEVIANCE_TOL = 1e-8
SCORE_TOL = 1e-6
MAX_ITER = 100
COEF_CAP = 20.0
RANK_TOL = 1e-7
Q_CLIP = 1e-6

RankMode = Literal["raise", "drop"]


@dataclass(frozen=True)
class DesignSpec:
    column_names: tuple[str, ...]
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if len(set(self.column_names)) != len(self.column_names):
            raise DomainError("duplicate design columns")

    def matrix(self, W: np.ndarray, names: Sequence[str]) -> np.ndarray:
        idx = [list(names).index(c) for c in self.column_names]
        X = W[:, idx]
        if self.include_intercept:
            X = np.column_stack([np.ones(W.shape[0]), X])
        return X


@dataclass(frozen=True)
class GlmFit:
    family: Literal["logistic", "probit", "linear"]
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_coefficient_capped: bool = False
    aliased: tuple[int, ...] = ()

    def linear_predictor(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = X @ self.coefficients
        return eta if offset is None else eta + offset

    def predict(self, X: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
        eta = self.linear_predictor(X, offset)
        if self.family == "logistic":
            return expit(eta)
        if self.family == "probit":
            return norm.cdf(eta)
        return eta


def _dependent_columns(X: np.ndarray, tol: float = RANK_TOL) -> list[int]:
    """Columns that are (numerically) linear combinations of the columns before them."""
    if X.shape[1] == 0:
        return []
    r = np.linalg.matrix_rank(X)
    if r == X.shape[1]:
        return []
    basis = np.empty((X.shape[0], 0))
    dependent = []
    for j in range(X.shape[1]):
        x = X[:, j]
        xnorm = np.linalg.norm(x)
        resid = x - basis @ (basis.T @ x) if basis.shape[1] else x
        rnorm = np.linalg.norm(resid)
        if xnorm == 0 or rnorm <= tol * xnorm:
            dependent.append(j)
            continue
        basis = np.column_stack([basis, resid / rnorm])
    return dependent


def _check_inputs(X, y, offset):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if X.shape[0] != n:
        raise DomainError(f"design has {X.shape[0]} rows but response has {n}")
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if offset.shape != (n,):
        raise DomainError("offset length must match response")
    return X, y, offset


def _resolve_rank(X, rank: RankMode, column_names):
    dep = _dependent_columns(X)
    if dep and rank == "raise":
        j = dep[0]
        label = column_names[j] if column_names is not None else f"column {j}"
        raise DomainError(f"design matrix is rank deficient: {label} is linearly dependent")
    keep = np.array([j for j in range(X.shape[1]) if j not in set(dep)], dtype=int)
    return keep, tuple(dep)


def _wls(X, w, z):
    """Weighted least squares via Cholesky of X'WX; SVD fallback when it is not positive definite."""
    Xw = X * w[:, None]
    try:
        return cho_solve(cho_factor(X.T @ Xw), Xw.T @ z)
    except LinAlgError:
        sw = np.sqrt(w)
        return np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]


def _bernoulli_deviance(y, mu):
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    return -2.0 * np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))


def fit_logistic(
    X,
    y,
    offset=None,
    *,
    max_iter: int = MAX_ITER,
    tol: float = DEVIANCE_TOL,
    cap: float = COEF_CAP,
    rank: RankMode = "raise",
    column_names: Sequence[str] | None = None,
) -> GlmFit:
    """Maximum-likelihood logistic regression by IRLS.

    Parameters
    ----------
    X : array (n, k)
        Design matrix; include a column of ones for an intercept.
    y : array (n,)
        0/1 response.
    offset : array (n,), optional
        Fixed term added to the linear predictor.
    rank : {"raise", "drop"}
        What to do with linearly dependent columns. ``"drop"`` pins their
        coefficients at zero and reports them in ``aliased``.

    Returns
    -------
    GlmFit
        If any coefficient would exceed ``cap`` in absolute value (separation)
        the coefficients are clipped, iteration stops and
        ``max_abs_coefficient_capped`` is set.
    """
    X, y, offset = _check_inputs(X, y, offset)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("logistic response must be 0/1")
    keep, aliased = _resolve_rank(X, rank, column_names)
    Xk = X[:, keep]
    beta = np.zeros(Xk.shape[1])
    eta = offset.copy()
    mu = expit(eta)
    dev = _bernoulli_deviance(y, mu)
    converged = capped = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.maximum(mu * (1 - mu), 1e-12)
        z = Xk @ beta + (y - mu) / w
        new_beta = _wls(Xk, w, z)
        # step-halving guards against deviance increases far from the optimum
        for _ in range(30):
            new_eta = offset + Xk @ new_beta
            new_mu = expit(new_eta)
            new_dev = _bernoulli_deviance(y, new_mu)
            if np.isfinite(new_dev) and new_dev <= dev + 1e-10 * (abs(dev) + 1):
                break
            new_beta = 0.5 * (new_beta + beta)
        if np.max(np.abs(new_beta), initial=0.0) > cap:
            beta = np.clip(new_beta, -cap, cap)
            capped = True
            break
        rel = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, eta, mu, dev = new_beta, new_eta, new_mu, new_dev
        score = Xk.T @ (y - mu)
        if rel < tol and np.max(np.abs(score), initial=0.0) <= SCORE_TOL:
            converged = True
            break
    full = np.zeros(X.shape[1])
    full[keep] = beta
    return GlmFit("logistic", full, converged, it, capped, aliased)


def fit_probit(X, y, *, max_iter: int = MAX_ITER, tol: float = DEVIANCE_TOL, cap: float = COEF_CAP,
               rank: RankMode = "raise", column_names: Sequence[str] | None = None) -> GlmFit:
    """Bernoulli regression with a probit link by Fisher scoring. Same capping rules as :func:`fit_logistic`."""
    X, y, _ = _check_inputs(X, y, None)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("probit response must be 0/1")
    keep, aliased = _resolve_rank(X, rank, column_names)
    Xk = X[:, keep]
    beta = np.zeros(Xk.shape[1])
    eta = np.zeros(len(y))
    mu = norm.cdf(eta)
    dev = _bernoulli_deviance(y, mu)
    converged = capped = False
    it = 0
    for it in range(1, max_iter + 1):
        dens = norm.pdf(eta)
        w = np.maximum(dens**2 / np.maximum(mu * (1 - mu), 1e-300), 1e-12)
        z = eta + (y - mu) / np.maximum(dens, 1e-300)
        new_beta = _wls(Xk, w, z)
        for _ in range(30):
            new_eta = Xk @ new_beta
            new_mu = norm.cdf(new_eta)
            new_dev = _bernoulli_deviance(y, new_mu)
            if np.isfinite(new_dev) and new_dev <= dev + 1e-10 * (abs(dev) + 1):
                break
            new_beta = 0.5 * (new_beta + beta)
        if np.max(np.abs(new_beta), initial=0.0) > cap:
            beta = np.clip(new_beta, -cap, cap)
            capped = True
            break
        rel = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, eta, mu, dev = new_beta, new_eta, new_mu, new_dev
        if rel < tol:
            converged = True
            break
    full = np.zeros(X.shape[1])
    full[keep] = beta
    return GlmFit("probit", full, converged, it, capped, aliased)


def fit_linear(
    X,
    y,
    offset=None,
    *,
    rank: RankMode = "raise",
    column_names: Sequence[str] | None = None,
) -> GlmFit:
    """Ordinary least squares of ``y - offset`` on ``X``."""
    X, y, offset = _check_inputs(X, y, offset)
    keep, aliased = _resolve_rank(X, rank, column_names)
    beta = np.linalg.lstsq(X[:, keep], y - offset, rcond=None)[0]
    full = np.zeros(X.shape[1])
    full[keep] = beta
    return GlmFit("linear", full, True, 1, False, aliased)


def fit_fluctuation(y, q0, h, family: Literal["binary", "continuous"]) -> float:
    """One-dimensional targeting step: the coefficient of ``h`` with ``q0`` held as offset.

    Binary outcomes regress ``y`` on ``h`` with offset ``logit(q0)``; continuous
    outcomes take the no-intercept least-squares slope of ``y - q0`` on ``h``.
    """
    y = np.asarray(y, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    h = np.asarray(h, dtype=float)
    if not np.any(h != 0):
        raise DomainError("clever covariate is identically zero; no fluctuation direction")
    if family == "continuous":
        return float(h @ (y - q0) / (h @ h))
    if family != "binary":
        raise DomainError(f"unknown family {family!r}")
    if np.any((q0 <= 0) | (q0 >= 1)):
        raise DomainError("binary fluctuation needs initial predictions strictly inside (0, 1)")
    fit = fit_logistic(h[:, None], y, offset=logit(q0))
    return float(fit.coefficients[0])


def clip_probability(q, bound: float = Q_CLIP) -> np.ndarray:
    return np.clip(q, bound, 1 - bound)
