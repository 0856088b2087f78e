"""Closed-loop planner comparison on a fixture over several seeds.

    python3 scripts/run_table3.py --variants MIND,NN+CP,MB+CP --seeds 10 --out results
"""

import argparse
import csv
import time
from pathlib import Path

from mindkit import fixtures
from mindkit.config import RunConfig
from mindkit.planner import VARIANTS
from mindkit.sim import compare_planners


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--fixture", default="adversarial_intersection", choices=sorted(fixtures.BUILDERS))
    ap.add_argument("--variants", default="MIND,NN+CP,MB+CP")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    variants = tuple(args.variants.split(","))
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        ap.error(f"unknown variants: {', '.join(unknown)}")
    sc = fixtures.BUILDERS[args.fixture]()
    t0 = time.perf_counter()
    table = compare_planners(sc, variants, range(args.seeds), RunConfig(), jobs=args.jobs)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "table3.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["planner", "seed", "avgSpd", "maxAbsAcc", "rmsAcc", "collision"])
        for v in variants:
            for seed, m in table[v]["seeds"].items():
                w.writerow([v, seed, f"{m.avg_speed:.4f}", f"{m.max_abs_acc:.4f}", f"{m.rms_acc:.4f}",
                            int(m.collision)])
    print(f"{'planner':8s} {'avgSpd':>8s} {'maxAbsAcc':>10s} {'rmsAcc':>8s} {'coll':>5s}")
    for v in variants:
        m = table[v]["mean"]
        print(f"{v:8s} {m['avgSpd']:8.3f} {m['maxAbsAcc']:10.3f} {m['rmsAcc']:8.3f} {m['collisions']:5d}")
    print(f"{len(variants) * args.seeds} episodes in {elapsed:.0f} s; wrote {path}")


if __name__ == "__main__":
    main()
