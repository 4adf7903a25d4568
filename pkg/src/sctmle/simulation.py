"""Parametric-bootstrap simulation study.

The default data-generating process draws ``(W1, W2)`` from a bivariate
normal, treatment from a probit model in ``W`` and a continuous outcome that
is additive in ``A`` and ``W``, so the true ATE equals the outcome
coefficient on ``A``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from sctmle.ctmle import ctmle_greedy, ctmle_preordered, make_cv_plan, sl_ctmle
from sctmle.errors import DomainError
from sctmle.estimators import (
    DEFAULT_G_BOUND,
    SCHEMA_VERSION,
    EstimateReport,
    estimate_aipw,
    estimate_ipw,
    estimate_stabilized_ipw,
    estimate_tmle,
    fit_nuisance,
)
from sctmle.glm import fit_linear, fit_probit
from sctmle.tabular import Dataset

STUDY_ESTIMATORS = ("ipw", "sipw", "aipw", "tmle", "sl-ctmle")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the two-covariate parametric family.

    ``extra_treatment_coefs`` appends independent standard-normal covariates
    ``W3, W4, ...`` that enter the treatment model with the given coefficients
    and never the outcome: nonzero values make near-instruments, zeros make
    pure noise columns.
    """

    mu: tuple[float, float] = (1.0, 2.0)
    sigma: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 1.5), (1.5, 3.0))
    treatment_coefs: tuple[float, float, float] = (0.23, 0.1, 0.35)
    outcome_coefs: tuple[float, float, float, float] = (5.5, 1.0, 0.5, 4.5)
    noise_sd: float = 1.0
    link: Literal["probit", "logit"] = "probit"
    extra_treatment_coefs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        object.__setattr__(self, "sigma", tuple(tuple(float(v) for v in row) for row in self.sigma))
        object.__setattr__(self, "treatment_coefs", tuple(float(v) for v in self.treatment_coefs))
        object.__setattr__(self, "outcome_coefs", tuple(float(v) for v in self.outcome_coefs))
        object.__setattr__(self, "extra_treatment_coefs", tuple(float(v) for v in self.extra_treatment_coefs))
        if len(self.mu) != 2 or len(self.treatment_coefs) != 3 or len(self.outcome_coefs) != 4:
            raise DomainError("mu needs 2, treatment_coefs 3 and outcome_coefs 4 entries")
        S = np.asarray(self.sigma)
        if S.shape != (2, 2) or not np.allclose(S, S.T):
            raise DomainError(f"sigma must be a symmetric 2x2 matrix, got {self.sigma}")
        if np.linalg.eigvalsh(S).min() < -1e-12:
            raise DomainError("sigma is not positive semi-definite")
        if not self.noise_sd >= 0:
            raise DomainError("noise_sd must be nonnegative")
        if self.link not in ("probit", "logit"):
            raise DomainError(f"unknown link {self.link!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"W{i + 1}" for i in range(2 + len(self.extra_treatment_coefs)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> DgpConfig:
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown DGP fields {sorted(unknown)}")
        return cls(**raw)


def _link_inverse(link: str):
    return norm.cdf if link == "probit" else expit


def sample_dgp(cfg: DgpConfig, n: int, seed) -> Dataset:
    """Draw ``n`` observations. ``seed`` may be an int or a ``numpy`` SeedSequence/Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    # cholesky needs strict PD; fall back to the symmetric square root for singular sigma
    S = np.asarray(cfg.sigma)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        L = vecs * np.sqrt(np.clip(vals, 0, None))
    W = np.asarray(cfg.mu) + rng.standard_normal((n, 2)) @ L.T
    extra = rng.standard_normal((n, len(cfg.extra_treatment_coefs)))
    b0, b1, b2 = cfg.treatment_coefs
    eta = b0 + W @ np.array([b1, b2]) + extra @ np.asarray(cfg.extra_treatment_coefs, dtype=float)
    A = (rng.random(n) < _link_inverse(cfg.link)(eta)).astype(np.int64)
    c0, ca, c1, c2 = cfg.outcome_coefs
    Y = c0 + ca * A + W @ np.array([c1, c2]) + cfg.noise_sd * rng.standard_normal(n)
    return Dataset(cfg.names, np.column_stack([W, extra]), A, Y, "continuous")


def true_ate(cfg: DgpConfig) -> float:
    return cfg.outcome_coefs[1]


def fit_dgp_from_data(d: Dataset) -> DgpConfig:
    """Estimate the parametric DGP from data of the same shape (2 covariates, binary A, continuous Y).

    The fitted config's ``true_ate`` serves as the bootstrap truth.
    """
    if d.p != 2 or d.outcome_family != "continuous":
        raise DomainError("fit_dgp_from_data needs exactly 2 covariates and a continuous outcome")
    if d.missing.any():
        raise DomainError("dataset has missing covariates")
    mu = d.W.mean(axis=0)
    sigma = np.cov(d.W, rowvar=False)
    ones = np.ones(d.n)
    if d.A.min() == d.A.max():
        raise DomainError("probit fit needs both treatment values present")
    pfit = fit_probit(np.column_stack([ones, d.W]), d.A)
    if pfit.max_abs_coefficient_capped:
        raise DomainError("probit fit of treatment on covariates separated")
    t = pfit.coefficients
    X = np.column_stack([ones, d.A, d.W])
    fit = fit_linear(X, d.Y, column_names=("(intercept)", d.treatment_name, *d.names))
    resid = d.Y - X @ fit.coefficients
    noise = float(np.sqrt(resid @ resid / max(d.n - X.shape[1], 1)))
    return DgpConfig(tuple(mu), tuple(map(tuple, sigma)), tuple(t), tuple(fit.coefficients), noise)


# --- study -----------------------------------------------------------------------


@dataclass(frozen=True)
class StudyRow:
    name: str
    mean_psi: float
    empirical_se: float
    bias: float
    mse: float
    mean_se: float
    mean_ci_lower: float
    mean_ci_upper: float
    mean_ci_width: float
    ci_coverage: float
    replicates_used: int
    failed: int


@dataclass
class StudyReport:
    rows: list[StudyRow]
    replicates: int
    sample_size: int
    true_ate: float
    seed: int
    dgp: DgpConfig
    per_replicate: list[tuple[int, str, float, float, float, float]] = field(default_factory=list, repr=False)
    g_link: str = "probit"

    def row(self, name: str) -> StudyRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "replicates": self.replicates,
            "sample_size": self.sample_size,
            "true_ate": self.true_ate,
            "seed": self.seed,
            "dgp": self.dgp.to_dict(),
            "g_link": self.g_link,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_csv(self) -> str:
        """Summary in the ATE / SE / Bias / MSE / CI layout, plus coverage."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "ATE", "SE", "Bias", "MSE", "CI_lower", "CI_upper", "coverage", "failed"])
        for r in self.rows:
            w.writerow([r.name, r.mean_psi, r.empirical_se, r.bias, r.mse,
                        r.mean_ci_lower, r.mean_ci_upper, r.ci_coverage, r.failed])
        return buf.getvalue()

    def replicates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "estimator", "psi", "se", "ci_lower", "ci_upper"])
        w.writerows(self.per_replicate)
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out / "study.json",
            "table": out / "study_table.csv",
            "replicates": out / "study_replicates.csv",
        }
        paths["json"].write_text(self.to_json() + "\n")
        paths["table"].write_text(self.table_csv())
        paths["replicates"].write_text(self.replicates_csv())
        return paths


def _oracle(d: Dataset, truth: float) -> EstimateReport:
    return EstimateReport("oracle", truth, 0.0, truth, truth, 0.0, n=d.n, se_method="none")


def replicate_seed(seed: int, r: int, stream: int = 0) -> np.random.SeedSequence:
    """Seed for replicate ``r`` (stream 0: data, stream 1: CV folds), independent of other replicates."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(r, stream))


def run_estimators(
    d: Dataset,
    names: Sequence[str],
    *,
    truth: float,
    plan_seed: int,
    g_bound: float = DEFAULT_G_BOUND,
    g_link: str = "probit",
):
    """Apply each named estimator to ``d``; failures come back as the exception instance.

    IPW, stabilized IPW, AIPW and TMLE share one main-terms nuisance fit whose
    propensity link defaults to the DGP's probit. The CTMLE variants build
    their own logistic propensity sequences.
    """
    out: dict[str, EstimateReport | Exception] = {}
    fits = None
    for name in names:
        try:
            if name == "oracle":
                out[name] = _oracle(d, truth)
            elif name in ("ipw", "sipw", "aipw", "tmle"):
                if fits is None:
                    fits = fit_nuisance(d, g_bound=g_bound, g_link=g_link)
                fn = {"ipw": estimate_ipw, "sipw": estimate_stabilized_ipw,
                      "aipw": estimate_aipw, "tmle": estimate_tmle}[name]
                out[name] = fn(d, fits)
            elif name in ("sl-ctmle", "ctmle-preordered", "ctmle-greedy"):
                plan = make_cv_plan(d.A, seed=plan_seed)
                if name == "sl-ctmle":
                    out[name] = sl_ctmle(d, plan=plan, g_bound=g_bound)
                elif name == "ctmle-preordered":
                    out[name] = ctmle_preordered(d, plan=plan, g_bound=g_bound)
                else:
                    out[name] = ctmle_greedy(d, plan=plan, g_bound=g_bound)
            else:
                raise DomainError(f"unknown estimator {name!r}")
        except (DomainError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            out[name] = exc
    return out


KNOWN_ESTIMATORS = ("oracle", "ipw", "sipw", "aipw", "tmle", "sl-ctmle", "ctmle-preordered", "ctmle-greedy")


def _one_replicate(args):
    cfg, names, n, seed, r, g_bound, g_link = args
    d = sample_dgp(cfg, n, np.random.default_rng(replicate_seed(seed, r)))
    plan_seed = int(replicate_seed(seed, r, 1).generate_state(1)[0])
    res = run_estimators(d, names, truth=true_ate(cfg), plan_seed=plan_seed, g_bound=g_bound, g_link=g_link)
    return {
        k: (v.psi, v.se, v.ci_lower, v.ci_upper) if isinstance(v, EstimateReport) else None
        for k, v in res.items()
    }


def run_bootstrap_study(
    cfg: DgpConfig,
    estimator_set: Sequence[str] = STUDY_ESTIMATORS,
    replicates: int = 200,
    n: int = 1000,
    seed: int = 0,
    *,
    g_bound: float = DEFAULT_G_BOUND,
    g_link: str = "probit",
    workers: int = 1,
    progress: Callable[[int], None] | None = None,
) -> StudyReport:
    """Monte Carlo bias / SE / MSE / coverage of each estimator over parametric-bootstrap samples.

    Replicate ``r`` draws from ``replicate_seed(seed, r)``; aggregation runs
    in replicate order so results do not depend on ``workers``.
    """
    if replicates < 2:
        raise DomainError("need at least 2 replicates")
    unknown = [e for e in estimator_set if e not in KNOWN_ESTIMATORS]
    if unknown:
        raise DomainError(f"unknown estimators {unknown}; valid: {list(KNOWN_ESTIMATORS)}")
    truth = true_ate(cfg)
    jobs = [(cfg, tuple(estimator_set), n, seed, r, g_bound, g_link) for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replicate, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_one_replicate(job))
            if progress is not None:
                progress(len(results))

    rows, per_rep = [], []
    for name in estimator_set:
        vals = [(r, res[name]) for r, res in enumerate(results) if res[name] is not None]
        for r, (psi, se, lo, hi) in vals:
            per_rep.append((r, name, psi, se, lo, hi))
        if not vals:
            nan = float("nan")
            rows.append(StudyRow(name, nan, nan, nan, nan, nan, nan, nan, nan, nan, 0, replicates))
            continue
        arr = np.array([v for _, v in vals])
        psi, se, lo, hi = arr.T
        err = psi - truth
        rows.append(
            StudyRow(
                name=name,
                mean_psi=float(psi.mean()),
                empirical_se=float(psi.std(ddof=0)),
                bias=float(err.mean()),
                mse=float(np.mean(err**2)),
                mean_se=float(se.mean()),
                mean_ci_lower=float(lo.mean()),
                mean_ci_upper=float(hi.mean()),
                mean_ci_width=float((hi - lo).mean()),
                ci_coverage=float(np.mean((lo <= truth) & (truth <= hi))),
                replicates_used=len(vals),
                failed=replicates - len(vals),
            )
        )
    return StudyReport(rows, replicates, n, truth, seed, cfg, per_rep, g_link)
