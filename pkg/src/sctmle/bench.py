"""Wall-clock and fit-count scaling of greedy vs pre-ordered CTMLE."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from sctmle.ctmle import ctmle_greedy, ctmle_preordered, make_cv_plan, sl_ctmle
from sctmle.errors import DomainError
from sctmle.estimators import DEFAULT_G_BOUND, SCHEMA_VERSION
from sctmle.simulation import DgpConfig, sample_dgp

VARIANTS = ("greedy", "preordered", "sl")
DEFAULT_EVALUATIONS = 20
# the initial outcome model uses only the two base covariates so it stays estimable when p >= n
BASE_Q_COLUMNS = ("W1", "W2")


@dataclass(frozen=True)
class BenchRow:
    variant: str
    n: int
    p: int
    median_ms: float
    fit_count: int
    cv_fit_count: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    evaluations_per_cell: int
    seed: int
    timings_ms: dict[tuple[str, int, int], list[float]] = field(default_factory=dict, repr=False)

    def cell(self, variant: str, n: int, p: int) -> BenchRow:
        for r in self.rows:
            if (r.variant, r.n, r.p) == (variant, n, p):
                return r
        raise KeyError((variant, n, p))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "evaluations_per_cell": self.evaluations_per_cell,
            "seed": self.seed,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "n", "p", "median_ms", "fit_count", "cv_fit_count"])
        for r in self.rows:
            w.writerow([r.variant, r.n, r.p, f"{r.median_ms:.3f}", r.fit_count, r.cv_fit_count])
        return buf.getvalue()


def bench_config(p: int) -> DgpConfig:
    """Default DGP padded with ``p - 2`` independent standard-normal noise covariates."""
    if p < 2:
        raise DomainError("benchmark dimension must be at least 2 (the base covariates)")
    return DgpConfig(extra_treatment_coefs=(0.0,) * (p - 2))


def expected_fit_count(variant: str, p: int) -> int:
    """Scored propensity models on the full data: p ordering + (p + 1) sequence, or 1 + p(p+1)/2 greedy."""
    if variant == "preordered":
        return 2 * p + 1
    if variant == "greedy":
        return p * (p + 1) // 2 + 1
    if variant == "sl":
        return p + 2 * (p + 1)
    raise DomainError(f"unknown variant {variant!r}")


def _run(variant, d, plan, g_bound):
    if variant == "greedy":
        return ctmle_greedy(d, plan, g_bound, q_columns=BASE_Q_COLUMNS)
    if variant == "preordered":
        return ctmle_preordered(d, "loss_based", plan, g_bound, q_columns=BASE_Q_COLUMNS)
    if variant == "sl":
        return sl_ctmle(d, ("loss_based", "partial_correlation"), plan, g_bound, q_columns=BASE_Q_COLUMNS)
    raise DomainError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def bench_scaling(
    n_grid: Sequence[int],
    p_grid: Sequence[int],
    evaluations: int = DEFAULT_EVALUATIONS,
    seed: int = 0,
    variants: Sequence[str] = ("greedy", "preordered"),
    g_bound: float = DEFAULT_G_BOUND,
) -> BenchReport:
    """Median wall time and fit counts per (variant, n, p) cell.

    Every evaluation draws a fresh sample; evaluation ``e`` of a cell uses the
    same sample for every variant. Runs are strictly sequential.
    """
    if not n_grid or not p_grid:
        raise DomainError("n_grid and p_grid must be nonempty")
    if evaluations < 1:
        raise DomainError("need at least one evaluation per cell")
    for v in variants:
        if v not in VARIANTS:
            raise DomainError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    rows, timings = [], {}
    for n in n_grid:
        for p in p_grid:
            cfg = bench_config(p)
            samples = []
            for e in range(evaluations):
                ss = np.random.SeedSequence(entropy=seed, spawn_key=(n, p, e))
                d = sample_dgp(cfg, n, np.random.default_rng(ss))
                samples.append((d, make_cv_plan(d.A, seed=int(ss.generate_state(1)[0]))))
            for variant in variants:
                times, counts, cv_counts = [], set(), set()
                for d, plan in samples:
                    t0 = time.perf_counter()
                    rep = _run(variant, d, plan, g_bound)
                    times.append((time.perf_counter() - t0) * 1e3)
                    counts.add(rep.counter.total)
                    cv_counts.add(rep.counter.cv_fits)
                if len(counts) != 1:
                    raise RuntimeError(f"fit count varied across evaluations for {variant} n={n} p={p}: {counts}")
                timings[(variant, n, p)] = times
                rows.append(BenchRow(variant, n, p, float(np.median(times)), counts.pop(), max(cv_counts)))
    return BenchReport(rows, evaluations, seed, timings)
