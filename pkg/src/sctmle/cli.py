"""Command-line entry point: ``sctmle {estimate,simulate,bench,map-protocol}``.

Machine-readable artifacts go to files, a short human summary to stdout and
diagnostics to stderr. Exit status 2 means invalid input, 3 an estimator failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from sctmle.bench import DEFAULT_EVALUATIONS, VARIANTS, bench_scaling
from sctmle.ctmle import DEFAULT_FOLDS, ctmle_greedy, ctmle_preordered, make_cv_plan, parse_scheme, sl_ctmle
from sctmle.errors import CsvParseError, DomainError
from sctmle.estimators import DEFAULT_G_BOUND, ESTIMATORS, fit_nuisance
from sctmle.simulation import KNOWN_ESTIMATORS, STUDY_ESTIMATORS, DgpConfig, run_bootstrap_study
from sctmle.tabular import MISSING_TOKENS, RuleId, TegRecord, impute_and_flag, load_csv, map_protocol

EXIT_INPUT = 2
EXIT_ESTIMATOR = 3
ESTIMATOR_NAMES = (*ESTIMATORS, "ctmle-greedy", "ctmle-preordered", "sl-ctmle")
CTMLE_NAMES = ("ctmle-greedy", "ctmle-preordered", "sl-ctmle")

# TEG CSV columns feeding each rule
RULE_COLUMNS = {
    RuleId.PLASMA: ("act", "plasma"),
    RuleId.CRYO: ("alpha", "cryo"),
    RuleId.PLATELET: ("ma", "plt"),
}


class InputError(Exception):
    pass


def _csv_list(text: str, cast=str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    try:
        return [cast(t) for t in items]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    return _csv_list(text, int)


def _g_bound(text: str) -> float:
    value = float(text)
    if not 0 < value < 0.5:
        raise argparse.ArgumentTypeError("g-bound must lie in (0, 0.5)")
    return value


def _folds(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("need at least 2 folds")
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


def cmd_estimate(args) -> int:
    if args.estimator in CTMLE_NAMES and args.seed is None:
        raise InputError(f"--seed is required for {args.estimator}")
    schemes = [parse_scheme(s) for s in args.schemes]
    d = impute_and_flag(load_csv(args.input, args.treatment, args.outcome, args.family))
    try:
        if args.estimator in ESTIMATORS:
            fits = fit_nuisance(d, g_bound=args.g_bound)
            report = ESTIMATORS[args.estimator](d, fits)
        else:
            plan = make_cv_plan(d.A, args.folds, args.seed)
            if args.estimator == "sl-ctmle":
                report = sl_ctmle(d, schemes, plan, args.g_bound)
            elif args.estimator == "ctmle-preordered":
                report = ctmle_preordered(d, schemes[0], plan, args.g_bound)
            else:
                report = ctmle_greedy(d, plan, args.g_bound)
    except (DomainError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: estimator {args.estimator} failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    payload = report.to_dict()
    if args.seed is not None:
        payload["seed"] = args.seed
    _write_json(Path(args.output), payload)
    if args.influence_csv and report.influence_values.size:
        np.savetxt(args.influence_csv, report.influence_values, header="influence", comments="", fmt="%.17g")
    print(f"{report.estimator}: psi={report.psi:.6g} se={report.se:.6g} "
          f"95% CI=({report.ci_lower:.6g}, {report.ci_upper:.6g}) p={report.p_value:.4g}")
    return 0


def _load_dgp(path: str | None) -> DgpConfig:
    if path is None:
        return DgpConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read DGP config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError("DGP config must be a JSON object")
    return DgpConfig.from_dict(raw)


def cmd_simulate(args) -> int:
    if args.replicates < 2:
        raise InputError("--replicates must be at least 2")
    cfg = _load_dgp(args.dgp)
    report = run_bootstrap_study(
        cfg, args.estimators, args.replicates, args.n, args.seed,
        g_bound=args.g_bound, g_link=args.g_link, workers=args.threads,
    )
    paths = report.write(args.output_dir)
    print(f"true ATE {report.true_ate:g}; {report.replicates} replicates of n={report.sample_size}")
    for r in report.rows:
        print(f"  {r.name:<16} mean={r.mean_psi:.4f} bias={r.bias:+.4f} se={r.empirical_se:.4f} "
              f"mse={r.mse:.5f} coverage={r.ci_coverage:.3f} failed={r.failed}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_bench(args) -> int:
    report = bench_scaling(args.n_grid, args.p_grid, args.evaluations, args.seed, args.variants, args.g_bound)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.table_csv())
    out.with_suffix(".json").write_text(report.to_json() + "\n")
    for r in report.rows:
        print(f"  {r.variant:<11} n={r.n:<6} p={r.p:<5} median={r.median_ms:10.2f} ms fits={r.fit_count}")
    print(f"wrote {out}, {out.with_suffix('.json')}")
    return 0


def cmd_map_protocol(args) -> int:
    rule = RuleId.parse(args.rule)
    measure_col, units_col = RULE_COLUMNS[rule]
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (measure_col, units_col) if c not in header]
        if missing:
            raise InputError(f"TEG file lacks column(s) {missing}")
        if "on_protocol" in header:
            raise InputError("input already has an on_protocol column")
        rows = list(reader)
    out_rows = []
    for i, row in enumerate(rows, start=1):
        m_tok, u_tok = row[measure_col], row[units_col]
        if m_tok is None or u_tok is None or m_tok.strip() in MISSING_TOKENS or u_tok.strip() in MISSING_TOKENS:
            raise InputError(f"row {i}: missing {measure_col} or {units_col}")
        try:
            measure, units = float(m_tok), float(u_tok)
        except ValueError:
            raise CsvParseError(f"row {i}: non-numeric {measure_col}/{units_col}", row=i) from None
        field_names = {RuleId.PLASMA: ("act", "plasma_units"), RuleId.CRYO: ("alpha", "cryo_units"),
                       RuleId.PLATELET: ("ma", "plt_units")}[rule]
        record = TegRecord(**{field_names[0]: measure, field_names[1]: units})
        out_rows.append({**row, "on_protocol": map_protocol(record, rule)})
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[*header, "on_protocol"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(out_rows)
    on = sum(r["on_protocol"] for r in out_rows)
    print(f"{rule.name.lower()} rule: {on}/{len(out_rows)} rows on protocol; wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sctmle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the ATE on a CSV file")
    est.add_argument("--input", required=True)
    est.add_argument("--output", required=True, help="path of the JSON report")
    est.add_argument("--treatment", default="a")
    est.add_argument("--outcome", default="y")
    est.add_argument("--family", choices=("binary", "continuous"), default="binary")
    est.add_argument("--estimator", choices=ESTIMATOR_NAMES, default="sl-ctmle")
    est.add_argument("--schemes", type=_csv_list, default=["loss", "pcor"],
                     help="ordering schemes for the CTMLE variants: loss, pcor")
    est.add_argument("--folds", type=_folds, default=DEFAULT_FOLDS)
    est.add_argument("--g-bound", type=_g_bound, default=DEFAULT_G_BOUND)
    est.add_argument("--seed", type=int)
    est.add_argument("--influence-csv", help="optional path for per-observation influence values")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="parametric-bootstrap simulation study")
    sim.add_argument("--replicates", type=int, default=200)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--dgp", help="JSON file overriding DGP fields")
    sim.add_argument("--estimators", type=_csv_list, default=list(STUDY_ESTIMATORS))
    sim.add_argument("--g-bound", type=_g_bound, default=DEFAULT_G_BOUND)
    sim.add_argument("--g-link", choices=("probit", "logit"), default="probit")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--output-dir", default="study")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", help="greedy vs pre-ordered CTMLE runtime scaling")
    bench.add_argument("--n-grid", type=_int_list, default=[100])
    bench.add_argument("--p-grid", type=_int_list, default=[5])
    bench.add_argument("--evaluations", type=int, default=DEFAULT_EVALUATIONS)
    bench.add_argument("--variants", type=_csv_list, default=["greedy", "preordered"],
                       help=f"subset of {','.join(VARIANTS)}")
    bench.add_argument("--seed", type=int, required=True)
    bench.add_argument("--g-bound", type=_g_bound, default=DEFAULT_G_BOUND)
    bench.add_argument("--output", default="bench.csv", help="timing CSV; a JSON twin is written alongside")
    bench.set_defaults(func=cmd_bench)

    mp = sub.add_parser("map-protocol", help="add an on_protocol column to a TEG CSV")
    mp.add_argument("--input", required=True)
    mp.add_argument("--output", required=True)
    mp.add_argument("--rule", required=True, choices=("plasma", "cryo", "platelet"))
    mp.set_defaults(func=cmd_map_protocol)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "estimators", None):
        bad = [e for e in args.estimators if e not in KNOWN_ESTIMATORS]
        if bad:
            parser.error(f"unknown estimators {bad}; valid: {', '.join(KNOWN_ESTIMATORS)}")
    try:
        return args.func(args)
    except (InputError, DomainError, CsvParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
