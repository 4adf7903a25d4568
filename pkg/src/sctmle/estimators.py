"""IPW, stabilized IPW, AIPW and TMLE estimators of the average treatment effect.

All estimators read nuisance predictions from a :class:`NuisanceFits`, so a
known propensity score or a hand-built outcome regression can be supplied
in place of fitted models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from sctmle.errors import DomainError
from sctmle.glm import (
    DesignSpec,
    GlmFit,
    clip_probability,
    fit_fluctuation,
    fit_linear,
    fit_logistic,
    fit_probit,
)
from sctmle.tabular import Dataset

Z_975 = 1.959964
DEFAULT_G_BOUND = 0.01
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class NuisanceFits:
    """Propensity and outcome-regression predictions evaluated on a dataset.

    ``g1w`` is P(A=1|W), already clamped to ``[g_bound, 1 - g_bound]``.
    ``q_a``, ``q_1``, ``q_0`` are the outcome regression at the observed
    treatment, at A=1 and at A=0.
    """

    g1w: np.ndarray
    q_a: np.ndarray
    q_1: np.ndarray
    q_0: np.ndarray
    g_bound: float = DEFAULT_G_BOUND
    g_fit: GlmFit | None = None
    q_fit: GlmFit | None = None
    g_spec: DesignSpec | None = None
    q_spec: DesignSpec | None = None

    def __post_init__(self):
        if not 0 < self.g_bound < 0.5:
            raise DomainError("g_bound must lie in (0, 0.5)")
        g = np.clip(np.asarray(self.g1w, dtype=float), self.g_bound, 1 - self.g_bound)
        object.__setattr__(self, "g1w", g)
        for name in ("q_a", "q_1", "q_0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def from_predictions(cls, a, g1w, q_1, q_0, g_bound: float = DEFAULT_G_BOUND) -> NuisanceFits:
        a = np.asarray(a)
        q_1 = np.broadcast_to(np.asarray(q_1, dtype=float), a.shape).copy()
        q_0 = np.broadcast_to(np.asarray(q_0, dtype=float), a.shape).copy()
        g1w = np.broadcast_to(np.asarray(g1w, dtype=float), a.shape).copy()
        return cls(g1w=g1w, q_a=np.where(a == 1, q_1, q_0), q_1=q_1, q_0=q_0, g_bound=g_bound)


def fit_propensity(
    d: Dataset,
    columns: Sequence[str] | None = None,
    *,
    g_bound: float = DEFAULT_G_BOUND,
    rank="raise",
    link: str = "logit",
) -> tuple[GlmFit, DesignSpec, np.ndarray]:
    """Main-terms binary regression of A on W; returns the fit, its design and clamped P(A=1|W)."""
    spec = DesignSpec(d.names if columns is None else columns)
    X = spec.matrix(d.W, d.names)
    fitter = {"logit": fit_logistic, "probit": fit_probit}[link]
    fit = fitter(X, d.A, rank=rank, column_names=("(intercept)", *spec.column_names))
    return fit, spec, np.clip(fit.predict(X), g_bound, 1 - g_bound)


def fit_outcome(d: Dataset, columns: Sequence[str] | None = None, *, rank="raise"):
    """Main-terms regression of Y on (A, W) in the outcome's family.

    Returns the fit, its covariate design, and predictions ``(q_a, q_1, q_0)``.
    """
    spec = DesignSpec(d.names if columns is None else columns)
    Xw = spec.matrix(d.W, d.names)

    def design(a):
        return np.column_stack([Xw[:, :1], a, Xw[:, 1:]])

    labels = ("(intercept)", d.treatment_name, *spec.column_names)
    fitter = fit_logistic if d.outcome_family == "binary" else fit_linear
    fit = fitter(design(d.A), d.Y, rank=rank, column_names=labels)
    ones = np.ones(d.n)
    preds = tuple(fit.predict(design(a)) for a in (d.A, ones, 0 * ones))
    return fit, spec, preds


def fit_nuisance(
    d: Dataset,
    g_columns: Sequence[str] | None = None,
    q_columns: Sequence[str] | None = None,
    g_bound: float = DEFAULT_G_BOUND,
    g_link: str = "logit",
) -> NuisanceFits:
    """Fit main-terms g and initial Q-bar on ``d`` (all covariates by default)."""
    g_fit, g_spec, g1w = fit_propensity(d, g_columns, g_bound=g_bound, link=g_link)
    q_fit, q_spec, (q_a, q_1, q_0) = fit_outcome(d, q_columns)
    return NuisanceFits(g1w, q_a, q_1, q_0, g_bound, g_fit, q_fit, g_spec, q_spec)


@dataclass
class EstimateReport:
    estimator: str
    psi: float
    se: float
    ci_lower: float
    ci_upper: float
    p_value: float
    influence_values: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    n: int = 0
    se_method: str = "efficient influence curve"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "estimator": self.estimator,
            "psi": self.psi,
            "se": self.se,
            "ci": [self.ci_lower, self.ci_upper],
            "p_value": self.p_value,
            "n": self.n,
            "se_method": self.se_method,
        }


def clever_covariate(a, g1w):
    """``a / g(1|W) - (1 - a) / (1 - g(1|W))``."""
    a = np.asarray(a, dtype=float)
    g1w = np.asarray(g1w, dtype=float)
    return a / g1w - (1 - a) / (1 - g1w)


def eic_values(d: Dataset, fits: NuisanceFits, psi: float) -> np.ndarray:
    """Efficient influence curve of the ATE evaluated per observation."""
    h = clever_covariate(d.A, fits.g1w)
    return h * (d.Y - fits.q_a) + fits.q_1 - fits.q_0 - psi


def inference(influence_values, psi: float) -> tuple[float, tuple[float, float], float]:
    """Wald-type SE, 95% CI and two-sided p-value from per-observation influence values."""
    ic = np.asarray(influence_values, dtype=float)
    n = ic.shape[0]
    if n < 2:
        raise DomainError("inference needs at least two observations")
    se = float(np.std(ic, ddof=1) / np.sqrt(n))
    ci = (psi - Z_975 * se, psi + Z_975 * se)
    if se == 0:
        p = 1.0 if psi == 0 else 0.0
    else:
        p = float(2 * norm.sf(abs(psi) / se))
    return se, ci, p


def _report(name, psi, ic, n, *, se_method="efficient influence curve", keep_ic=True):
    se, (lo, hi), p = inference(ic, psi)
    return EstimateReport(
        estimator=name,
        psi=float(psi),
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        p_value=p,
        influence_values=np.asarray(ic, dtype=float) if keep_ic else np.empty(0),
        n=n,
        se_method=se_method,
    )


def estimate_ipw(d: Dataset, fits: NuisanceFits) -> EstimateReport:
    """Horvitz-Thompson IPW. SE comes from the variance of the per-observation summand."""
    g = fits.g1w
    summand = d.A * d.Y / g - (1 - d.A) * d.Y / (1 - g)
    psi = float(np.mean(summand))
    return _report("ipw", psi, summand - psi, d.n, se_method="summand variance", keep_ic=False)


def estimate_stabilized_ipw(d: Dataset, fits: NuisanceFits) -> EstimateReport:
    """Hajek IPW: difference of per-arm normalized weighted means."""
    if d.A.min() == d.A.max():
        raise DomainError("stabilized IPW needs both treatment arms present")
    g = fits.g1w
    w1 = d.A / g
    w0 = (1 - d.A) / (1 - g)
    mu1 = float(w1 @ d.Y / w1.sum())
    mu0 = float(w0 @ d.Y / w0.sum())
    psi = mu1 - mu0
    ic = w1 * (d.Y - mu1) / w1.mean() - w0 * (d.Y - mu0) / w0.mean()
    return _report("sipw", psi, ic, d.n, se_method="ratio-estimator influence curve")


def estimate_aipw(d: Dataset, fits: NuisanceFits) -> EstimateReport:
    h = clever_covariate(d.A, fits.g1w)
    psi = float(np.mean(h * (d.Y - fits.q_a) + fits.q_1 - fits.q_0))
    return _report("aipw", psi, eic_values(d, fits, psi), d.n)


def targeted_update(d: Dataset, fits: NuisanceFits) -> tuple[NuisanceFits, float]:
    """One TMLE fluctuation of the initial outcome regression along the clever covariate.

    Returns the targeted fits (same g) and the fitted epsilon.
    """
    g = fits.g1w
    h_a, h_1, h_0 = clever_covariate(d.A, g), 1 / g, -1 / (1 - g)
    if d.outcome_family == "binary":
        q_a, q_1, q_0 = (clip_probability(q) for q in (fits.q_a, fits.q_1, fits.q_0))
        eps = fit_fluctuation(d.Y, q_a, h_a, "binary")
        upd = [expit(logit(q) + eps * h) for q, h in ((q_a, h_a), (q_1, h_1), (q_0, h_0))]
    else:
        eps = fit_fluctuation(d.Y, fits.q_a, h_a, "continuous")
        upd = [q + eps * h for q, h in ((fits.q_a, h_a), (fits.q_1, h_1), (fits.q_0, h_0))]
    targeted = NuisanceFits(g, *upd, g_bound=fits.g_bound, g_fit=fits.g_fit, g_spec=fits.g_spec)
    return targeted, eps


def estimate_tmle(d: Dataset, fits: NuisanceFits) -> EstimateReport:
    targeted, _ = targeted_update(d, fits)
    psi = float(np.mean(targeted.q_1 - targeted.q_0))
    return _report("tmle", psi, eic_values(d, targeted, psi), d.n)


ESTIMATORS = {
    "ipw": estimate_ipw,
    "sipw": estimate_stabilized_ipw,
    "aipw": estimate_aipw,
    "tmle": estimate_tmle,
}
