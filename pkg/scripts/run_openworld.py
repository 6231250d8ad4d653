"""Open-world false positive / false negative rates across threshold percentiles.

    python3 scripts/run_openworld.py --x 50 70 90 --out results/open_world.json
"""

import argparse
import json
from pathlib import Path

from timefp.experiments import BenchmarkConfig, open_world


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--x", type=int, nargs="+", default=[50, 70, 90])
    ap.add_argument("--n-in", type=int, default=15, help="number of in-set sites")
    ap.add_argument("--grouping", choices=["predicted", "true"], default="predicted")
    ap.add_argument("--empty", choices=["error", "pool"], default="pool")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/open_world.json"))
    args = ap.parse_args(argv)

    bench = BenchmarkConfig(seeds=tuple(args.seeds))
    res = open_world(bench, xs=args.x, n_in=args.n_in, grouping=args.grouping, empty=args.empty, jobs=args.jobs)
    for x, r in res["rates"].items():
        print(f"x={x}: FP {r['false_positives']}/{r['n_out']} = {r['fp_rate']:.3f}  "
              f"FN {r['false_negatives']}/{r['n_in']} = {r['fn_rate']:.3f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"benchmark": bench.to_dict(), **res}, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
