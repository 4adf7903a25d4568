"""Greedy vs pre-ordered CTMLE wall time and fit counts over a (n, p) grid.

    python3 scripts/run_benchmark.py --n-grid 100,1000 --p-grid 10,50,100 --evaluations 20
"""

import argparse
from pathlib import Path

from sctmle.bench import bench_scaling, expected_fit_count


def ints(text):
    return [int(t) for t in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-grid", type=ints, default=[100])
    ap.add_argument("--p-grid", type=ints, default=[10, 50, 100])
    ap.add_argument("--evaluations", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/benchmark")
    args = ap.parse_args()

    rep = bench_scaling(args.n_grid, args.p_grid, args.evaluations, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_table.csv").write_text(rep.table_csv())
    (out / "bench.json").write_text(rep.to_json() + "\n")

    print(f"{'n':>6} {'p':>5} {'greedy ms':>11} {'preord ms':>11} {'ratio':>6} {'fits g/p':>12}")
    for n in args.n_grid:
        for p in args.p_grid:
            g, pre = rep.cell("greedy", n, p), rep.cell("preordered", n, p)
            assert g.fit_count == expected_fit_count("greedy", p)
            assert pre.fit_count == expected_fit_count("preordered", p)
            print(f"{n:>6} {p:>5} {g.median_ms:>11.1f} {pre.median_ms:>11.1f} "
                  f"{g.median_ms / pre.median_ms:>6.1f} {g.fit_count:>6}/{pre.fit_count:<5}")


if __name__ == "__main__":
    main()
