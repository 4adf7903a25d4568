"""Collaborative TMLE: greedy forward search, pre-ordered (scalable) search, and
a cross-validated selector over several pre-ordering schemes.

Every variant builds a sequence of candidates ``k = 0..p`` whose propensity
model uses ``k`` covariates. Candidate ``k`` fluctuates the current segment's
starting fit along the clever covariate of its own propensity model. When
adding a covariate fails to lower the empirical loss, the previous targeted
fit becomes the new starting point (a new fluctuation segment opens) and the
covariate is fluctuated again against it. The candidate with the lowest
cross-validated loss is returned.

Costs are tracked in a :class:`FitCounter`. One unit is one scored propensity
model (logistic fit, fluctuation, loss) on the full data; the loss-based
ordering scores each covariate once (across the CV folds). Refits of the
sequence inside CV folds are tallied separately in ``cv_fits``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit, logit

from sctmle.errors import DomainError
from sctmle.estimators import DEFAULT_G_BOUND, EstimateReport, _report, clever_covariate
from sctmle.glm import Q_CLIP, fit_linear, fit_logistic
from sctmle.tabular import Dataset

Scheme = Literal["loss_based", "partial_correlation"]
SCHEMES: tuple[str, ...] = ("loss_based", "partial_correlation")
SCHEME_ALIASES = {
    "loss": "loss_based",
    "loss_based": "loss_based",
    "pcor": "partial_correlation",
    "partial_correlation": "partial_correlation",
}
DEFAULT_FOLDS = 5
# relative score below which two partial correlations are treated as zero
PCOR_ZERO = 1e-10


def parse_scheme(name: str) -> str:
    try:
        return SCHEME_ALIASES[name]
    except KeyError:
        raise DomainError(f"unknown scheme {name!r}; expected one of {sorted(SCHEME_ALIASES)}") from None


@dataclass(frozen=True)
class CvPlan:
    V: int
    fold_assignment: np.ndarray
    seed: int

    def folds(self):
        for v in range(self.V):
            valid = np.flatnonzero(self.fold_assignment == v)
            train = np.flatnonzero(self.fold_assignment != v)
            yield train, valid


def make_cv_plan(A, V: int = DEFAULT_FOLDS, seed: int = 0) -> CvPlan:
    """Seeded V-fold assignment stratified on treatment, fold sizes within one of each other."""
    A = np.asarray(A)
    n = A.shape[0]
    if V < 2:
        raise DomainError("need at least 2 folds")
    if n < V:
        raise DomainError(f"cannot split {n} rows into {V} folds")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(A == 1)), rng.permutation(np.flatnonzero(A != 1))])
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % V
    return CvPlan(V, folds, seed)


@dataclass(frozen=True)
class Ordering:
    scheme: str
    ranked_columns: tuple[str, ...]
    per_column_score: np.ndarray


@dataclass(frozen=True)
class Fluctuation:
    epsilon: float
    g_columns: tuple[str, ...]
    g_coefficients: np.ndarray


@dataclass
class Candidate:
    k: int
    g_columns: tuple[str, ...]
    fluctuations: list[Fluctuation]
    train_loss: float
    cv_loss: float = float("nan")
    # full-data targeted predictions on the link scale and clamped g; used for the final estimate
    offsets: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    g1w: np.ndarray | None = field(default=None, repr=False)
    # k at which each fluctuation segment opened; one entry per element of ``fluctuations``
    segment_starts: tuple[int, ...] = (0,)


@dataclass
class FitCounter:
    ordering_fits: int = 0
    sequence_fits: int = 0
    cv_fits: int = 0

    @property
    def total(self) -> int:
        return self.ordering_fits + self.sequence_fits


@dataclass
class CtmleReport(EstimateReport):
    scheme: str = ""
    k_star: int = 0
    selected_columns: tuple[str, ...] = ()
    candidate_losses: list[tuple[str, int, float]] = field(default_factory=list)
    counter: FitCounter = field(default_factory=FitCounter, repr=False)
    orderings: dict[str, Ordering] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(
            scheme=self.scheme,
            k_star=self.k_star,
            selected_columns=list(self.selected_columns),
            candidate_losses=[[s, k, loss] for s, k, loss in self.candidate_losses],
            fit_count=self.counter.total,
        )
        return out


# --- internal data views -----------------------------------------------------


@dataclass(frozen=True)
class _View:
    """Rows of the data with the initial outcome fit on the link scale."""

    W: np.ndarray
    a: np.ndarray
    y: np.ndarray
    offsets: tuple[np.ndarray, np.ndarray, np.ndarray]
    family: str

    @property
    def n(self) -> int:
        return self.y.shape[0]


def _outcome_design(W, a, q_idx):
    return np.column_stack([np.ones(W.shape[0]), a, W[:, q_idx]])


def _initial_views(d: Dataset, q_idx, train, valid=None):
    """Fit the main-terms initial outcome model on ``train`` rows, return views for train (and valid)."""
    X = _outcome_design(d.W[train], d.A[train], q_idx)
    if d.outcome_family == "binary":
        fit = fit_logistic(X, d.Y[train], rank="drop")
    else:
        fit = fit_linear(X, d.Y[train], rank="drop")

    def view(rows):
        W, a = d.W[rows], d.A[rows]
        offs = []
        for arm in (a, np.ones_like(a), np.zeros_like(a)):
            eta = _outcome_design(W, arm, q_idx) @ fit.coefficients
            if d.outcome_family == "binary":
                eta = logit(np.clip(expit(eta), Q_CLIP, 1 - Q_CLIP))
            offs.append(eta)
        return _View(W, a.astype(float), d.Y[rows], tuple(offs), d.outcome_family)

    return view(train), (view(valid) if valid is not None else None)


def _loss_terms(y, offset, family):
    if family == "binary":
        return np.logaddexp(0.0, offset) - y * offset
    return (y - offset) ** 2


def _mean(view: _View, offset) -> np.ndarray:
    return expit(offset) if view.family == "binary" else offset


def _fit_g(view: _View, cols, g_bound):
    X = np.column_stack([np.ones(view.n), view.W[:, cols]])
    fit = fit_logistic(X, view.a, rank="drop")
    return fit, np.clip(expit(X @ fit.coefficients), g_bound, 1 - g_bound)


def _predict_g(view: _View, cols, fit, g_bound):
    X = np.column_stack([np.ones(view.n), view.W[:, cols]])
    return np.clip(expit(X @ fit.coefficients), g_bound, 1 - g_bound)


def _fluctuate(view: _View, start, g1w):
    """Fit epsilon against ``start`` and return (epsilon, updated offsets, mean training loss)."""
    h_a = clever_covariate(view.a, g1w)
    if view.family == "binary":
        eps = float(fit_logistic(h_a[:, None], view.y, offset=start[0]).coefficients[0])
    else:
        eps = float(h_a @ (view.y - start[0]) / (h_a @ h_a))
    updated = _apply(start, eps, view.a, g1w)
    return eps, updated, float(np.mean(_loss_terms(view.y, updated[0], view.family)))


def _apply(start, eps, a, g1w):
    hs = (clever_covariate(a, g1w), 1.0 / g1w, -1.0 / (1.0 - g1w))
    return tuple(o + eps * h for o, h in zip(start, hs))


@dataclass
class _Step:
    k: int
    cols: list[int]
    fluctuations: list[Fluctuation]
    train_loss: float
    offsets: tuple
    g1w: np.ndarray
    segment_starts: tuple[int, ...]
    valid_loss_sum: float = float("nan")


def _build_sequence(
    train: _View,
    names: Sequence[str],
    g_bound: float,
    order: Sequence[int] | None = None,
    valid: _View | None = None,
    on_fit=None,
) -> tuple[list[_Step], list[int]]:
    """Construct candidates k = 0..p.

    With ``order`` given, candidate k adds ``order[k-1]``; otherwise each step
    scores every remaining covariate and keeps the one with the lowest
    empirical loss (greedy forward search). ``on_fit`` is called once per
    scored propensity model.
    """
    p = train.W.shape[1]
    remaining = list(range(p))
    selected: list[int] = []
    start_tr = train.offsets
    start_va = valid.offsets if valid is not None else None
    history: list[Fluctuation] = []
    starts: tuple[int, ...] = (0,)
    steps: list[_Step] = []
    prev: _Step | None = None
    prev_va = None

    for k in range(p + 1):
        if k == 0:
            proposals = [None]
        elif order is not None:
            proposals = [order[k - 1]]
        else:
            proposals = remaining
        best = None
        for j in proposals:
            cols = selected if j is None else selected + [j]
            gfit, g_tr = _fit_g(train, cols, g_bound)
            eps, upd, loss = _fluctuate(train, start_tr, g_tr)
            if on_fit is not None:
                on_fit()
            if best is None or loss < best[0]:
                best = (loss, j, cols, gfit, g_tr, eps, upd)
        loss, j, cols, gfit, g_tr, eps, upd = best
        if prev is not None and not loss < prev.train_loss:
            # no improvement: open a new segment from the previous targeted fit
            history = list(prev.fluctuations)
            starts = prev.segment_starts + (k,)
            start_tr = prev.offsets
            start_va = prev_va
            eps, upd, loss = _fluctuate(train, start_tr, g_tr)
        if j is not None:
            selected.append(j)
            remaining.remove(j)
        col_names = tuple(names[c] for c in cols)
        fl = Fluctuation(eps, col_names, gfit.coefficients)
        step = _Step(k, list(cols), history + [fl], loss, upd, g_tr, starts)
        if valid is not None:
            g_va = _predict_g(valid, cols, gfit, g_bound)
            upd_va = _apply(start_va, eps, valid.a, g_va)
            step.valid_loss_sum = float(np.sum(_loss_terms(valid.y, upd_va[0], valid.family)))
            prev_va = upd_va
        if prev is not None and step.train_loss > prev.train_loss + 1e-9 * (1 + abs(prev.train_loss)):
            raise RuntimeError(
                f"candidate sequence loss increased at k={k}: {prev.train_loss} -> {step.train_loss}"
            )
        steps.append(step)
        prev = step
    return steps, selected


# --- orderings ----------------------------------------------------------------


def _fold_views(d: Dataset, q_idx, plan: CvPlan):
    return [_initial_views(d, q_idx, tr, va) for tr, va in plan.folds()]


def preorder_loss_based(d: Dataset, plan: CvPlan, *, q_columns=None, g_bound=DEFAULT_G_BOUND,
                        counter: FitCounter | None = None, _folds=None) -> Ordering:
    """Rank covariates by the cross-validated loss of a TMLE whose g uses only that covariate."""
    q_idx = _column_indices(d, q_columns)
    folds = _folds if _folds is not None else _fold_views(d, q_idx, plan)
    scores = np.zeros(d.p)
    for k in range(d.p):
        total = 0.0
        for train, valid in folds:
            gfit, g_tr = _fit_g(train, [k], g_bound)
            eps, _, _ = _fluctuate(train, train.offsets, g_tr)
            g_va = _predict_g(valid, [k], gfit, g_bound)
            upd = _apply(valid.offsets, eps, valid.a, g_va)
            total += float(np.sum(_loss_terms(valid.y, upd[0], valid.family)))
        scores[k] = total / d.n
        if counter is not None:
            counter.ordering_fits += 1
    ranks = np.argsort(scores, kind="stable")
    return Ordering("loss_based", tuple(d.names[i] for i in ranks), scores)


def preorder_partial_correlation(d: Dataset, *, q_columns=None, _full: _View | None = None) -> Ordering:
    """Rank covariates by |corr(W_k, Y - Qbar0(A, W))|, largest first; constant columns score 0."""
    if _full is None:
        _full, _ = _initial_views(d, _column_indices(d, q_columns), np.arange(d.n))
    resid = _full.y - _mean(_full, _full.offsets[0])
    rc = resid - resid.mean()
    rnorm = np.linalg.norm(rc)
    scores = np.zeros(d.p)
    for k in range(d.p):
        wc = d.W[:, k] - d.W[:, k].mean()
        wnorm = np.linalg.norm(wc)
        if wnorm <= 1e-12 * (1 + np.abs(d.W[:, k]).max()) or rnorm == 0:
            continue
        c = abs(float(wc @ rc) / (wnorm * rnorm))
        scores[k] = c if c > PCOR_ZERO else 0.0
    ranks = np.argsort(-scores, kind="stable")
    return Ordering("partial_correlation", tuple(d.names[i] for i in ranks), scores)


def _column_indices(d: Dataset, columns) -> list[int]:
    if columns is None:
        return list(range(d.p))
    return [d.names.index(c) for c in columns]


# --- sequence + selection ------------------------------------------------------


def build_candidate_sequence(
    d: Dataset,
    ordering: Ordering | None,
    plan: CvPlan,
    *,
    q_columns=None,
    g_bound: float = DEFAULT_G_BOUND,
    counter: FitCounter | None = None,
    _full: _View | None = None,
    _folds=None,
) -> tuple[list[Candidate], list[str]]:
    """Full-data candidate sequence with cross-validated losses.

    ``ordering=None`` runs the greedy forward search on the full data; the
    discovered order is then held fixed inside the CV folds. Returns the
    candidates and the covariate order used.
    """
    counter = counter if counter is not None else FitCounter()
    q_idx = _column_indices(d, q_columns)
    if _full is None:
        _full, _ = _initial_views(d, q_idx, np.arange(d.n))
    order = None if ordering is None else [d.names.index(c) for c in ordering.ranked_columns]

    def bump():
        counter.sequence_fits += 1

    steps, order = _build_sequence(_full, d.names, g_bound, order=order, on_fit=bump)

    def bump_cv():
        counter.cv_fits += 1

    folds = _folds if _folds is not None else _fold_views(d, q_idx, plan)
    cv_sum = np.zeros(len(steps))
    for train, valid in folds:
        fold_steps, _ = _build_sequence(train, d.names, g_bound, order=order, valid=valid, on_fit=bump_cv)
        cv_sum += [s.valid_loss_sum for s in fold_steps]
    candidates = [
        Candidate(
            k=s.k,
            g_columns=tuple(d.names[c] for c in s.cols),
            fluctuations=s.fluctuations,
            train_loss=s.train_loss,
            cv_loss=float(cv_sum[i] / d.n),
            offsets=s.offsets,
            g1w=s.g1w,
            segment_starts=s.segment_starts,
        )
        for i, s in enumerate(steps)
    ]
    return candidates, [d.names[c] for c in order]


def cv_select(candidates: Sequence[Candidate] | Sequence[float]) -> int:
    """Index of the smallest cross-validated loss; ties go to the smaller index."""
    losses = [c if isinstance(c, (int, float, np.floating)) else c.cv_loss for c in candidates]
    if not losses:
        raise DomainError("no candidates to select from")
    if not np.all(np.isfinite(losses)):
        raise DomainError("candidate losses must be finite")
    return int(np.argmin(losses))


def _finish(d: Dataset, name: str, scheme: str, cand: Candidate, grid, counter, orderings) -> CtmleReport:
    mean = expit if d.outcome_family == "binary" else (lambda x: x)
    q_a, q_1, q_0 = (mean(o) for o in cand.offsets)
    psi = float(np.mean(q_1 - q_0))
    ic = clever_covariate(d.A, cand.g1w) * (d.Y - q_a) + q_1 - q_0 - psi
    base = _report(name, psi, ic, d.n)
    return CtmleReport(
        **vars(base),
        scheme=scheme,
        k_star=cand.k,
        selected_columns=cand.g_columns,
        candidate_losses=grid,
        counter=counter,
        orderings=orderings,
    )


def _prepare(d: Dataset, plan: CvPlan | None, q_columns, seed):
    if d.missing.any():
        raise DomainError("dataset has missing covariates; run impute_and_flag first")
    if plan is None:
        plan = make_cv_plan(d.A, DEFAULT_FOLDS, seed)
    q_idx = _column_indices(d, q_columns)
    full, _ = _initial_views(d, q_idx, np.arange(d.n))
    folds = _fold_views(d, q_idx, plan)
    return plan, full, folds


def _scheme_sequence(d, scheme, plan, full, folds, q_columns, g_bound, counter):
    if scheme == "loss_based":
        ordering = preorder_loss_based(d, plan, g_bound=g_bound, counter=counter, _folds=folds)
    else:
        ordering = preorder_partial_correlation(d, _full=full)
    cands, _ = build_candidate_sequence(
        d, ordering, plan, q_columns=q_columns, g_bound=g_bound, counter=counter, _full=full, _folds=folds
    )
    return ordering, cands


def ctmle_preordered(
    d: Dataset,
    scheme: str = "loss_based",
    plan: CvPlan | None = None,
    g_bound: float = DEFAULT_G_BOUND,
    *,
    q_columns: Sequence[str] | None = None,
    seed: int = 0,
) -> CtmleReport:
    """Scalable CTMLE with covariates pre-ordered by ``scheme``."""
    return sl_ctmle(d, [scheme], plan, g_bound, q_columns=q_columns, seed=seed, _name="ctmle-preordered")


def ctmle_greedy(
    d: Dataset,
    plan: CvPlan | None = None,
    g_bound: float = DEFAULT_G_BOUND,
    *,
    q_columns: Sequence[str] | None = None,
    seed: int = 0,
) -> CtmleReport:
    """CTMLE whose covariate sequence comes from greedy forward search (p(p+1)/2 scored fits)."""
    plan, full, folds = _prepare(d, plan, q_columns, seed)
    counter = FitCounter()
    cands, order = build_candidate_sequence(
        d, None, plan, q_columns=q_columns, g_bound=g_bound, counter=counter, _full=full, _folds=folds
    )
    k = cv_select(cands)
    grid = [("greedy", c.k, c.cv_loss) for c in cands]
    ordering = Ordering("greedy", tuple(order), np.array([c.train_loss for c in cands[1:]]))
    return _finish(d, "ctmle-greedy", "greedy", cands[k], grid, counter, {"greedy": ordering})


def sl_ctmle(
    d: Dataset,
    schemes: Sequence[str] = SCHEMES,
    plan: CvPlan | None = None,
    g_bound: float = DEFAULT_G_BOUND,
    *,
    q_columns: Sequence[str] | None = None,
    seed: int = 0,
    _name: str = "sl-ctmle",
) -> CtmleReport:
    """Run the pre-ordered CTMLE once per ordering scheme and keep the (scheme, k) with lowest CV loss."""
    schemes = [parse_scheme(s) for s in schemes]
    if not schemes:
        raise DomainError("at least one ordering scheme is required")
    plan, full, folds = _prepare(d, plan, q_columns, seed)
    counter = FitCounter()
    grid: list[tuple[str, int, float]] = []
    pool: list[Candidate] = []
    orderings = {}
    for scheme in schemes:
        ordering, cands = _scheme_sequence(d, scheme, plan, full, folds, q_columns, g_bound, counter)
        orderings[scheme] = ordering
        grid += [(scheme, c.k, c.cv_loss) for c in cands]
        pool += cands
    i = sl_select(grid, schemes)
    return _finish(d, _name, grid[i][0], pool[i], grid, counter, orderings)


def sl_select(grid: Sequence[tuple[str, int, float]], schemes: Sequence[str]) -> int:
    """Index into ``grid`` of the (scheme, k, cv_loss) entry with lowest loss.

    Ties go to the smaller k, then to the scheme listed first.
    """
    if not grid:
        raise DomainError("no candidates to select from")
    rank = {s: i for i, s in enumerate(schemes)}
    return min(range(len(grid)), key=lambda i: (grid[i][2], grid[i][1], rank[grid[i][0]]))
