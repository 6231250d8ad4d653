"""Stream-location success rate against the number of fetches in the stream.

    python3 scripts/run_stream.py --trials 100 --out results/stream.json
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

from timefp.experiments import BenchmarkConfig, stream_benchmark, stream_success


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lengths", type=int, nargs="+", default=[2, 3, 4, 5])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--step", type=int, default=10)
    ap.add_argument("--w", type=float, default=0.2, help="tolerance as a fraction of exemplar length")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/stream.json"))
    args = ap.parse_args(argv)

    bench = BenchmarkConfig()
    _, trials = stream_benchmark(
        bench, seed=args.seed, lengths=tuple(args.lengths), trials=args.trials,
        step=args.step, w=args.w, jobs=args.jobs,
    )
    rates = stream_success(trials)
    for n, r in rates.items():
        print(f"{n} fetches: {r:.2f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    out = {"seed": args.seed, "step": args.step, "w": args.w, "success": {str(n): r for n, r in rates.items()},
           "trials": [asdict(t) for t in trials]}
    args.out.write_text(json.dumps(out, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
