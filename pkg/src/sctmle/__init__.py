"""Doubly-robust ATE estimation with scalable collaborative TMLE."""

from sctmle.errors import CsvParseError, DomainError
from sctmle.tabular import Dataset, TegRecord, impute_and_flag, load_csv, map_protocol
from sctmle.glm import GlmFit, fit_fluctuation, fit_linear, fit_logistic
from sctmle.estimators import (
    EstimateReport,
    NuisanceFits,
    estimate_aipw,
    estimate_ipw,
    estimate_stabilized_ipw,
    estimate_tmle,
    fit_nuisance,
)
from sctmle.ctmle import CvPlan, ctmle_greedy, ctmle_preordered, make_cv_plan, sl_ctmle

__version__ = "0.1.0"

__all__ = [
    "CsvParseError",
    "CvPlan",
    "Dataset",
    "DomainError",
    "EstimateReport",
    "GlmFit",
    "NuisanceFits",
    "TegRecord",
    "ctmle_greedy",
    "ctmle_preordered",
    "estimate_aipw",
    "estimate_ipw",
    "estimate_stabilized_ipw",
    "estimate_tmle",
    "fit_fluctuation",
    "fit_linear",
    "fit_logistic",
    "fit_nuisance",
    "impute_and_flag",
    "load_csv",
    "make_cv_plan",
    "map_protocol",
    "sl_ctmle",
]
