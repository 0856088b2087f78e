"""Scenario-tree strategy comparison: coverage of the brute-force modality set and predictor cost.

    python3 scripts/run_table2.py --fixtures straight_road,merge,t_intersection --out results
"""

import argparse
import csv
import time
from pathlib import Path

from mindkit import fixtures
from mindkit.aime import AimeConfig, bench_strategies
from mindkit.planner import make_predictor
from mindkit.predictor import PredictorConfig

LABELS = {"ss": "SS", "aime": "AIME", "bf": "BF-SRCH"}


def bench(name, aime: AimeConfig, horizon: int):
    sc = fixtures.BUILDERS[name]()
    t0 = time.perf_counter()
    rows = bench_strategies(sc.history, sc.lane_graph, sc.ego_route,
                            lambda: make_predictor("intention", sc.lane_graph, PredictorConfig()), aime, horizon)
    return rows, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--fixtures", default=",".join(fixtures.BENCH_FIXTURES))
    ap.add_argument("--beta", type=float, default=AimeConfig.beta)
    ap.add_argument("--delta", type=float, default=AimeConfig.delta)
    ap.add_argument("--dmax", type=int, default=AimeConfig.d_max)
    ap.add_argument("--horizon", type=int, default=60)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    aime = AimeConfig(beta=args.beta, delta=args.delta, d_max=args.dmax)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "table2.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fixture", "strategy", "coverage_pct", "scenarios", "predictor_calls", "comp_cost"])
        for name in args.fixtures.split(","):
            rows, secs = bench(name, aime, args.horizon)
            for key, label in LABELS.items():
                r = rows[key]
                w.writerow([name, label, f"{r.coverage:.1f}", r.scenarios, r.calls, f"{r.cost_ratio:.1f}x"])
                print(f"{name:16s} {label:8s} coverage {r.coverage:5.1f}%  scenarios {r.scenarios:5d}  "
                      f"calls {r.calls:5d}  cost {r.cost_ratio:7.1f}x")
            print(f"{name}: {secs:.1f} s")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
