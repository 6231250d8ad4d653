"""Benchmark protocols on synthetic sites, shared by scripts and tests."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .classify import DistanceCache, cross_validate, train
from .distortion import BENCHMARK_SIGNATURE, BENCHMARK_SPEC, DistortionSpec, SignatureConfig, synth_sites
from .dtw import DtwConfig
from .model import TrainedModel
from .openworld import calibration_populations, evaluate_open, thresholds_from
from .stream import build_stream, locate, locate_success
from .trace import Dataset


@dataclass(frozen=True)
class BenchmarkConfig:
    n_sites: int = 20
    samples: int = 30
    seeds: tuple[int, ...] = (0, 1, 2)
    folds: int = 10
    k: int = 5
    exemplars: int = 3
    cv_seed: int = 7
    signature: SignatureConfig = BENCHMARK_SIGNATURE
    spec: DistortionSpec = BENCHMARK_SPEC

    def dataset(self, seed: int, slot: float | None = None) -> Dataset:
        spec = self.spec if slot is None else self.spec.with_slot(slot)
        return synth_sites(self.n_sites, self.samples, spec, seed=seed, signature=self.signature)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["signature"] = self.signature.to_dict()
        d["spec"] = self.spec.to_dict()
        return d


def closed_world(bench: BenchmarkConfig, slot=None, method="knn", cfg=DtwConfig(), jobs=1) -> dict:
    per_seed = []
    for seed in bench.seeds:
        rep = cross_validate(
            bench.dataset(seed, slot), bench.folds, bench.k, bench.exemplars, cfg,
            seed=bench.cv_seed, method=method, jobs=jobs,
        )
        per_seed.append(rep.mean_accuracy)
    return {"slot": slot, "method": method, "per_seed": per_seed, "mean": float(np.mean(per_seed))}


def split_open(ds: Dataset, n_in: int, n_train: int):
    """First ``n_in`` labels are in-set; of those, the first ``n_train`` traces train."""
    labels = ds.labels
    ins, outs = labels[:n_in], labels[n_in:]
    train_ds = Dataset({s: ds.sites[s][:n_train] for s in ins})
    test_ds = Dataset({s: ds.sites[s][n_train:] for s in ins})
    return train_ds, test_ds, ds.subset(outs)


def open_world(
    bench: BenchmarkConfig,
    xs=(50, 70, 90),
    n_in: int = 15,
    n_train: int = 20,
    grouping: str = "predicted",
    empty: str = "pool",
    cfg=DtwConfig(),
    jobs=1,
) -> dict:
    """Per x: exact FP/FN counts summed over the benchmark seeds."""
    totals = {x: {"false_positives": 0, "n_out": 0, "false_negatives": 0, "n_in": 0} for x in xs}
    per_seed = []
    for seed in bench.seeds:
        train_ds, test_ds, out_ds = split_open(bench.dataset(seed), n_in, n_train)
        cache = DistanceCache(cfg, jobs)
        model = train(train_ds, bench.exemplars, cfg=cfg, cache=cache)
        pops = calibration_populations(model, train_ds, bench.k, grouping, cache)
        row = {"seed": seed}
        for x in xs:
            rep = evaluate_open(model, thresholds_from(pops, x, empty), test_ds, out_ds, bench.k, cache)
            for key in totals[x]:
                totals[x][key] += getattr(rep, key)
            row[str(x)] = {"fp_rate": rep.fp_rate, "fn_rate": rep.fn_rate}
        per_seed.append(row)
    rates = {
        str(x): {
            **t,
            "fp_rate": t["false_positives"] / t["n_out"],
            "fn_rate": t["false_negatives"] / t["n_in"],
        }
        for x, t in totals.items()
    }
    return {"grouping": grouping, "empty": empty, "rates": rates, "per_seed": per_seed}


@dataclass
class StreamTrial:
    trial: int
    length: int
    target: str
    truth: int
    offset: int
    distance: float
    success: bool


def _stream_plan(test_ds: Dataset, rng: np.random.Generator, max_len: int, pause_range):
    """Target, a full ``max_len`` fetch sequence around it, its pauses, and
    the nested blocks ``(first, last)`` used for each stream length."""
    labels = test_ds.labels
    target = labels[rng.integers(len(labels))]
    others = [s for s in labels if s != target]

    def pick(site):
        return test_ds.sites[site][rng.integers(len(test_ds.sites[site]))]

    pos = int(rng.integers(max_len))
    fetches = [pick(target) if k == pos else pick(others[rng.integers(len(others))]) for k in range(max_len)]
    pauses = rng.uniform(*pause_range, size=max_len - 1)
    blocks = {1: (pos, pos)}
    lo = hi = pos
    for n in range(2, max_len + 1):
        grow_left = lo > 0 and (hi == max_len - 1 or rng.random() < 0.5)
        lo, hi = (lo - 1, hi) if grow_left else (lo, hi + 1)
        blocks[n] = (lo, hi)
    return target, fetches, pauses, pos, blocks


def stream_trials(
    model: TrainedModel,
    test_ds: Dataset,
    lengths=(2, 3, 4, 5),
    trials: int = 100,
    seed: int = 0,
    step: int = 10,
    w: float = 0.2,
    pause_range=(5.0, 25.0),
    jobs: int = 1,
) -> list[StreamTrial]:
    """Random streams of held-out fetches containing one target fetch.

    Each trial draws one fetch sequence of the largest length with the
    target at a uniform position. The stream for each length is a contiguous
    block of it around the target, and each length's block extends the
    previous one by a fetch on a random side, so lengths are compared on
    common random numbers.
    """
    out = []
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        target, fetches, pauses, pos, blocks = _stream_plan(test_ds, rng, max(lengths), pause_range)
        for length in lengths:
            lo, hi = blocks[length]
            stream = build_stream(fetches[lo : hi + 1], pauses=pauses[lo:hi])
            truth = stream.segments[pos - lo].start
            loc = locate(model, stream, target, step, jobs=jobs)
            out.append(
                StreamTrial(i, length, target, truth, loc.offset, loc.distance, locate_success(loc, truth, w))
            )
    return out


def stream_success(trials: list[StreamTrial]) -> dict[int, float]:
    lengths = sorted({t.length for t in trials})
    return {n: float(np.mean([t.success for t in trials if t.length == n])) for n in lengths}


def stream_benchmark(bench: BenchmarkConfig, seed: int | None = None, n_train: int = 20, **kw):
    """Train on the first ``n_train`` traces per site and stream the rest."""
    seed = bench.seeds[0] if seed is None else seed
    ds = bench.dataset(seed)
    train_ds = Dataset({s: ds.sites[s][:n_train] for s in ds.labels})
    test_ds = Dataset({s: ds.sites[s][n_train:] for s in ds.labels})
    model = train(train_ds, bench.exemplars, cfg=kw.pop("cfg", DtwConfig()))
    return model, stream_trials(model, test_ds, seed=seed, **kw)
