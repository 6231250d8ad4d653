"""Open-world detection: is a trace from any site in the training set?

A trace is judged in-set when its F_min (smallest F-distance to the
exemplars of its K-NN best guess) is at most that site's threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .classify import DistanceCache, _cache_for, knn_classify
from .errors import CalibrationError, TraceValidationError
from .model import ThresholdTable, TrainedModel
from .trace import Dataset, Trace

GROUPINGS = ("predicted", "true")
EMPTY_POLICIES = ("error", "pool")


class FMin(NamedTuple):
    site: str
    fmin: float


def f_min(model: TrainedModel, trace: Trace, k: int = 5, cache: DistanceCache | None = None) -> FMin:
    res = knn_classify(model, trace, k, cache)
    return FMin(res.predicted, min(res.distances_for(res.predicted)))


@dataclass
class Populations:
    """F_min samples used to place thresholds, keyed by site.

    ``lower``: training traces against the full model, grouped by true site.
    ``upper``: each site's traces against the model with that site removed,
    grouped by best guess (``grouping="predicted"``) or by true site.
    """

    lower: dict[str, list[float]]
    upper: dict[str, list[float]]
    grouping: str = "predicted"


def calibration_populations(
    model: TrainedModel,
    dataset: Dataset,
    k: int = 5,
    grouping: str = "predicted",
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> Populations:
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}")
    missing = set(model.sites) - set(dataset.sites)
    if missing:
        raise CalibrationError(f"no calibration traces for model sites {sorted(missing)}")
    cache = _cache_for(model.cfg, cache, jobs)
    all_ex = [ex for s in model.sites for ex in model.exemplars[s].exemplars]
    cache.many([(t, ex) for s in model.sites for t in dataset.sites[s] for ex in all_ex])
    lower = {s: [] for s in model.sites}
    upper = {s: [] for s in model.sites}
    for s in model.sites:
        for t in dataset.sites[s]:
            lower[s].append(f_min(model, t, k, cache).fmin)
    for s in model.sites:
        reduced = model.without(s)
        for t in dataset.sites[s]:
            guess, fm = f_min(reduced, t, min(k, reduced.exemplar_count), cache)
            upper[guess if grouping == "predicted" else s].append(fm)
    return Populations(lower, upper, grouping)


def thresholds_from(pops: Populations, x: float, empty: str = "error") -> ThresholdTable:
    """Per site, the mean of the x-th percentile of ``lower`` and the
    (100 - x)-th percentile of ``upper`` (linear interpolation).

    A site that no left-out trace was attributed to has an empty upper
    population. ``empty="error"`` rejects it; ``empty="pool"`` substitutes the
    upper values of all sites together.
    """
    if not 0 <= x <= 100:
        raise ValueError(f"x must lie in [0, 100], got {x}")
    if empty not in EMPTY_POLICIES:
        raise ValueError(f"unknown empty-population policy {empty!r}")
    pooled = [v for s in sorted(pops.upper) for v in pops.upper[s]]
    out = {}
    for s in sorted(pops.lower):
        lo, up = pops.lower[s], pops.upper.get(s, [])
        if not lo:
            raise CalibrationError(f"site {s!r}: empty in-set F_min population")
        if not up and empty == "pool" and pooled:
            up = pooled
        if not up:
            raise CalibrationError(
                f"site {s!r}: no left-out trace was attributed to it; empty out-of-set population"
            )
        th = (float(np.percentile(lo, x)) + float(np.percentile(up, 100 - x))) / 2
        out[s] = min(max(th, 0.0), 1.0)
    return ThresholdTable(out, x, pops.grouping)


def calibrate(
    model: TrainedModel,
    dataset: Dataset,
    x: float = 90,
    k: int = 5,
    grouping: str = "predicted",
    cache: DistanceCache | None = None,
    jobs: int = 1,
    empty: str = "error",
) -> ThresholdTable:
    return thresholds_from(calibration_populations(model, dataset, k, grouping, cache, jobs), x, empty)


class OpenResult(NamedTuple):
    in_set: bool
    site: str
    fmin: float


def classify_open(
    model: TrainedModel,
    thresholds: ThresholdTable,
    trace: Trace,
    k: int = 5,
    cache: DistanceCache | None = None,
) -> OpenResult:
    missing = set(model.sites) - set(thresholds.thresholds)
    if missing:
        raise CalibrationError(f"no threshold for sites {sorted(missing)}")
    site, fm = f_min(model, trace, k, cache)
    return OpenResult(fm <= thresholds[site], site, fm)


@dataclass
class OpenReport:
    false_positives: int
    n_out: int
    false_negatives: int
    n_in: int
    per_site: dict[str, dict] = field(default_factory=dict)

    @property
    def fp_rate(self) -> float | None:
        return self.false_positives / self.n_out if self.n_out else None

    @property
    def fn_rate(self) -> float | None:
        return self.false_negatives / self.n_in if self.n_in else None

    def spread(self) -> dict[str, float | None]:
        """Standard deviation across sites of the per-site FN and FP rates."""
        fn = [v["rate"] for v in self.per_site.values() if v["kind"] == "in"]
        fp = [v["rate"] for v in self.per_site.values() if v["kind"] == "out"]
        return {
            "fn_std": float(np.std(fn)) if fn else None,
            "fp_std": float(np.std(fp)) if fp else None,
        }

    def to_dict(self) -> dict:
        return {
            "false_positives": self.false_positives,
            "n_out": self.n_out,
            "fp_rate": self.fp_rate,
            "false_negatives": self.false_negatives,
            "n_in": self.n_in,
            "fn_rate": self.fn_rate,
            **self.spread(),
            "per_site": self.per_site,
        }


def evaluate_open(
    model: TrainedModel,
    thresholds: ThresholdTable,
    inset: Dataset,
    outset: Dataset | None,
    k: int = 5,
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> OpenReport:
    """False positives: out-of-set traces accepted. False negatives: in-set traces rejected."""
    outset_sites = outset.sites if outset is not None else {}
    overlap = set(outset_sites) & (set(model.sites) | set(inset.sites))
    if overlap:
        raise TraceValidationError(f"out-of-set labels overlap the training sites: {sorted(overlap)}")
    cache = _cache_for(model.cfg, cache, jobs)
    all_ex = [ex for s in model.sites for ex in model.exemplars[s].exemplars]
    everything = [t for v in inset.sites.values() for t in v] + [t for v in outset_sites.values() for t in v]
    cache.many([(t, ex) for t in everything for ex in all_ex])
    per_site = {}
    fn = n_in = fp = n_out = 0
    for s in sorted(inset.sites):
        bad = sum(not classify_open(model, thresholds, t, k, cache).in_set for t in inset.sites[s])
        n = len(inset.sites[s])
        per_site[s] = {"kind": "in", "errors": bad, "n": n, "rate": bad / n}
        fn += bad
        n_in += n
    for s in sorted(outset_sites):
        bad = sum(classify_open(model, thresholds, t, k, cache).in_set for t in outset_sites[s])
        n = len(outset_sites[s])
        per_site[s] = {"kind": "out", "errors": bad, "n": n, "rate": bad / n}
        fp += bad
        n_out += n
    return OpenReport(fp, n_out, fn, n_in, per_site)


def is_monotone(values, increasing: bool = True) -> bool:
    pairs = zip(values, values[1:])
    return all((b >= a) if increasing else (b <= a) for a, b in pairs if not (math.isnan(a) or math.isnan(b)))
