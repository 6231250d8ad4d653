"""Closed-world accuracy on the synthetic benchmark, with and without slotting.

    python3 scripts/run_benchmark.py --out results/closed_world.json
"""

import argparse
import json
import time
from pathlib import Path

from timefp.experiments import BenchmarkConfig, closed_world


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--slots", type=float, nargs="*", default=[0.001, 0.010], help="slot sizes in seconds")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/closed_world.json"))
    args = ap.parse_args(argv)

    bench = BenchmarkConfig(seeds=tuple(args.seeds))
    runs = []
    for slot, method in [(None, "knn"), (None, "bayes"), *((s, "knn") for s in args.slots)]:
        t0 = time.perf_counter()
        res = closed_world(bench, slot=slot, method=method, jobs=args.jobs)
        res["seconds"] = round(time.perf_counter() - t0, 1)
        print(f"{method:5s} slot={slot!s:6s} mean={res['mean']:.4f} per_seed={res['per_seed']}")
        runs.append(res)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"benchmark": bench.to_dict(), "runs": runs}, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
