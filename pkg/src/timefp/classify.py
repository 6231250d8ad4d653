"""Exemplar selection, K-NN and naive-Bayes classification, and k-fold cross-validation."""

from __future__ import annotations

import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from ._parallel import pmap
from .dtw import DtwConfig, f_distance
from .errors import FitError, InsufficientDataError, TimefpError
from .model import CRITERIA, BetaFit, ExemplarSet, TrainedModel
from .trace import Dataset, Trace

BETA_MIN = 1e-3
PHI_EPS = 1e-9


class DistanceCache:
    """Memoised F-distances keyed by ordered pairs of :attr:`Trace.key`."""

    def __init__(self, cfg: DtwConfig, jobs: int = 1):
        self.cfg = cfg
        self.jobs = jobs
        self._d: dict[tuple, float] = {}

    def __len__(self) -> int:
        return len(self._d)

    def many(self, pairs: Sequence[tuple[Trace, Trace]]) -> np.ndarray:
        missing = {}
        for a, b in pairs:
            key = (a.key, b.key)
            if key not in self._d and key not in missing:
                missing[key] = (a, b)
        if missing:
            cfg = self.cfg
            vals = pmap(lambda ab: f_distance(ab[0], ab[1], cfg), list(missing.values()), self.jobs)
            self._d.update(zip(missing.keys(), vals))
        return np.array([self._d[(a.key, b.key)] for a, b in pairs], dtype=np.float64)

    def get(self, a: Trace, b: Trace) -> float:
        return float(self.many([(a, b)])[0])

    def matrix(self, rows: Sequence[Trace], cols: Sequence[Trace]) -> np.ndarray:
        """``M[r, c] = phi(rows[r], cols[c])``."""
        pairs = [(r, c) for r in rows for c in cols]
        return self.many(pairs).reshape(len(rows), len(cols))


def _cache_for(cfg: DtwConfig, cache: DistanceCache | None, jobs: int) -> DistanceCache:
    if cache is None:
        return DistanceCache(cfg, jobs)
    if cache.cfg != cfg:
        raise ValueError("distance cache was built for a different DtwConfig")
    return cache


def rank_candidates(traces: Sequence[Trace], criterion: str, matrix: np.ndarray) -> list[int]:
    """Indices of ``traces`` ordered best first.

    ``matrix[a, b] = phi(traces[a], traces[b])``; candidate ``b`` is scored by
    the sum (``min_sum``) or variance (``min_variance``) of column ``b``.
    """
    if criterion == "min_sum":
        score = matrix.sum(axis=0)
    elif criterion == "min_variance":
        score = matrix.var(axis=0)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return sorted(range(len(traces)), key=lambda b: (score[b], traces[b].id))


def select_exemplars(
    traces: Sequence[Trace],
    count: int = 3,
    criterion: str = "min_sum",
    cfg: DtwConfig = DtwConfig(),
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> ExemplarSet:
    site = traces[0].site if traces else None
    if count < 1:
        raise ValueError("exemplar count must be >= 1")
    if len(traces) < count:
        raise InsufficientDataError(
            f"site {site!r}: {len(traces)} traces, need at least {count} for exemplars"
        )
    cache = _cache_for(cfg, cache, jobs)
    order = rank_candidates(traces, criterion, cache.matrix(traces, traces))
    return ExemplarSet(site, tuple(traces[i] for i in order[:count]), criterion)


# --- Beta fitting ------------------------------------------------------------


def beta_from_moments(mean: float, var: float) -> tuple[float, float]:
    """Method-of-moments Beta parameters, each clamped to at least 1e-3."""
    if not 0.0 < mean < 1.0:
        raise FitError(f"sample mean {mean} outside (0, 1)")
    if not var > 0.0:
        raise FitError("zero-variance sample; cannot fit a Beta distribution")
    common = mean * (1.0 - mean) / var - 1.0
    return max(mean * common, BETA_MIN), max((1.0 - mean) * common, BETA_MIN)


def fit_beta(sample: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(sample, dtype=np.float64)
    if x.size < 2:
        raise FitError("need at least 2 samples to fit a Beta distribution")
    return beta_from_moments(float(x.mean()), float(x.var()))


def bayes_fit(
    traces: Sequence[Trace],
    criterion: str = "min_sum",
    cfg: DtwConfig = DtwConfig(),
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> tuple[Trace, float, float]:
    """Pick one exemplar and fit a Beta to ``{phi(t, exemplar) : t in traces}``."""
    if len(traces) < 2:
        raise InsufficientDataError("naive Bayes fit needs at least 2 traces")
    cache = _cache_for(cfg, cache, jobs)
    m = cache.matrix(traces, traces)
    best = rank_candidates(traces, criterion, m)[0]
    try:
        a, b = fit_beta(m[:, best])
    except FitError as exc:
        raise FitError(f"site {traces[0].site!r}: {exc}") from None
    return traces[best], a, b


# --- training & classification ------------------------------------------------


def train(
    dataset: Dataset,
    exemplar_count: int = 3,
    criterion: str = "min_sum",
    cfg: DtwConfig = DtwConfig(),
    bayes_criterion: str | None = None,
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> TrainedModel:
    """Select exemplars for every site; also fit Beta models if ``bayes_criterion`` is set."""
    cache = _cache_for(cfg, cache, jobs)
    exemplars = {}
    bayes = {} if bayes_criterion else None
    for label in dataset.labels:
        traces = dataset.sites[label]
        exemplars[label] = select_exemplars(traces, exemplar_count, criterion, cfg, cache)
        if bayes is not None:
            bayes[label] = BetaFit(*bayes_fit(traces, bayes_criterion, cfg, cache))
    return TrainedModel(exemplars, cfg, bayes)


class Neighbour(NamedTuple):
    site: str
    distance: float
    exemplar: str


@dataclass
class ClassificationResult:
    predicted: str
    neighbours: list[Neighbour]
    votes: dict[str, int]
    k: int

    def distances_for(self, site: str) -> list[float]:
        return [n.distance for n in self.neighbours if n.site == site]


def neighbours(model: TrainedModel, trace: Trace, cache: DistanceCache | None = None) -> list[Neighbour]:
    """Distance from ``trace`` to every exemplar, ascending."""
    cache = _cache_for(model.cfg, cache, 1)
    pairs = [(trace, ex) for label in model.sites for ex in model.exemplars[label].exemplars]
    dists = cache.many(pairs)
    out = []
    pos = 0
    for label in model.sites:
        for rank, ex in enumerate(model.exemplars[label].exemplars):
            out.append((float(dists[pos]), label, rank, ex.id))
            pos += 1
    out.sort()
    return [Neighbour(site, d, ex_id) for d, site, _, ex_id in out]


def knn_classify(
    model: TrainedModel, trace: Trace, k: int = 5, cache: DistanceCache | None = None
) -> ClassificationResult:
    """Majority vote among the ``k`` exemplars closest to ``trace``.

    Vote ties go to the tied site with the smallest summed distance among the
    top ``k``, then to the lexicographically smallest label.
    """
    if not model.exemplars:
        raise TimefpError("empty model")
    if not 1 <= k <= model.exemplar_count:
        raise ValueError(f"K={k} must lie in [1, {model.exemplar_count}]")
    nb = neighbours(model, trace, cache)
    top = nb[:k]
    votes = Counter(n.site for n in top)
    best = max(votes.values())
    tied = [s for s, v in votes.items() if v == best]
    summed = {s: math.fsum(n.distance for n in top if n.site == s) for s in tied}
    predicted = min(tied, key=lambda s: (summed[s], s))
    return ClassificationResult(predicted, nb, dict(sorted(votes.items())), k)


def bayes_scores(model: TrainedModel, trace: Trace, cache: DistanceCache | None = None) -> dict[str, float]:
    """Log Beta density of each site's fitted model at ``phi(trace, exemplar)``."""
    if not model.bayes or set(model.bayes) != set(model.exemplars):
        raise TimefpError("naive Bayes needs Beta parameters for every site")
    cache = _cache_for(model.cfg, cache, 1)
    labels = model.sites
    phis = cache.many([(trace, model.bayes[s].exemplar) for s in labels])
    phis = np.clip(phis, PHI_EPS, 1.0 - PHI_EPS)
    return {
        s: float(stats.beta.logpdf(p, model.bayes[s].alpha, model.bayes[s].beta))
        for s, p in zip(labels, phis)
    }


def bayes_classify(model: TrainedModel, trace: Trace, cache: DistanceCache | None = None) -> str:
    scores = bayes_scores(model, trace, cache)
    return max(sorted(scores), key=lambda s: scores[s])


# --- cross-validation ------------------------------------------------------------


def _site_seed(seed: int, label: str) -> list[int]:
    return [seed, zlib.crc32(label.encode("utf-8"))]


def assign_folds(traces: Sequence[Trace], folds: int, seed: int) -> dict[str, int]:
    """Fold index per trace id; fold sizes differ by at most one.

    Depends only on the set of ids, the site label and the seed, never on
    list order.
    """
    ordered = sorted(traces, key=lambda t: t.id)
    label = ordered[0].site or ""
    perm = np.random.default_rng(_site_seed(seed, label)).permutation(len(ordered))
    return {ordered[p].id: r % folds for r, p in enumerate(perm)}


@dataclass
class CVReport:
    method: str
    folds: int
    fold_accuracy: dict[str, list[float]]
    correct: dict[str, int]
    total: dict[str, int]
    params: dict = field(default_factory=dict)

    @property
    def site_accuracy(self) -> dict[str, float]:
        return {s: self.correct[s] / self.total[s] for s in sorted(self.total)}

    @property
    def mean_accuracy(self) -> float:
        acc = self.site_accuracy
        return math.fsum(acc.values()) / len(acc)

    def box_stats(self) -> dict[str, dict[str, float]]:
        """Min, quartiles and max of the fold accuracies per site."""
        out = {}
        for s, v in sorted(self.fold_accuracy.items()):
            q = np.percentile(v, [0, 25, 50, 75, 100])
            out[s] = dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "folds": self.folds,
            "params": self.params,
            "mean_accuracy": self.mean_accuracy,
            "sites": {
                s: {
                    "correct": self.correct[s],
                    "total": self.total[s],
                    "accuracy": self.site_accuracy[s],
                    "fold_accuracy": self.fold_accuracy[s],
                    "box": self.box_stats()[s],
                }
                for s in sorted(self.total)
            },
        }

    def fold_rows(self) -> list[tuple[str, int, float]]:
        return [(s, f + 1, a) for s in sorted(self.fold_accuracy) for f, a in enumerate(self.fold_accuracy[s])]


def cross_validate(
    dataset: Dataset,
    folds: int = 10,
    k: int = 5,
    exemplar_count: int = 3,
    cfg: DtwConfig = DtwConfig(),
    seed: int = 0,
    method: str = "knn",
    criterion: str = "min_sum",
    cache: DistanceCache | None = None,
    jobs: int = 1,
) -> CVReport:
    """Per-site k-fold cross-validation against the full multi-site model.

    In fold ``f`` every site is trained on its samples outside fold ``f``;
    the held-out samples of all sites are then classified. ``method`` is
    ``"knn"`` or ``"bayes"`` (``criterion`` then selects the Beta exemplar).
    """
    if method not in ("knn", "bayes"):
        raise ValueError(f"unknown method {method!r}")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    for label in dataset.labels:
        n = len(dataset.sites[label])
        if n < folds:
            raise InsufficientDataError(f"site {label!r}: {n} samples, need at least {folds}")
    cache = _cache_for(cfg, cache, jobs)
    labels = dataset.labels
    fold_of = {}
    intra = {}
    for label in labels:
        traces = sorted(dataset.sites[label], key=lambda t: t.id)
        fold_of.update(assign_folds(traces, folds, seed))
        intra[label] = (traces, cache.matrix(traces, traces))

    correct = {s: 0 for s in labels}
    total = {s: 0 for s in labels}
    fold_acc: dict[str, list[float]] = {s: [] for s in labels}
    for f in range(folds):
        exemplars, bayes = {}, {}
        tests = []
        for label in labels:
            traces, m = intra[label]
            train_idx = [i for i, t in enumerate(traces) if fold_of[t.id] != f]
            tests.extend(t for t in traces if fold_of[t.id] == f)
            sub = m[np.ix_(train_idx, train_idx)]
            train_traces = [traces[i] for i in train_idx]
            if len(train_traces) < exemplar_count and method == "knn":
                raise InsufficientDataError(
                    f"site {label!r}: {len(train_traces)} training traces in fold {f + 1}, "
                    f"need {exemplar_count}"
                )
            if method == "knn":
                order = rank_candidates(train_traces, criterion, sub)
                exemplars[label] = ExemplarSet(
                    label, tuple(train_traces[i] for i in order[:exemplar_count]), criterion
                )
            else:
                best = rank_candidates(train_traces, criterion, sub)[0]
                try:
                    a, b = fit_beta(sub[:, best])
                except FitError as exc:
                    raise FitError(f"site {label!r}, fold {f + 1}: {exc}") from None
                exemplars[label] = ExemplarSet(label, (train_traces[best],), criterion)
                bayes[label] = BetaFit(train_traces[best], a, b)
        model = TrainedModel(exemplars, cfg, bayes or None)
        # Fill the cache for the whole fold at once so --jobs can parallelise it.
        cache.many([(t, ex) for t in tests for s in labels for ex in exemplars[s].exemplars])
        hits = Counter()
        counts = Counter()
        for t in tests:
            if method == "knn":
                pred = knn_classify(model, t, k, cache).predicted
            else:
                pred = bayes_classify(model, t, cache)
            counts[t.site] += 1
            hits[t.site] += pred == t.site
        for label in labels:
            correct[label] += hits[label]
            total[label] += counts[label]
            fold_acc[label].append(hits[label] / counts[label])
    params = {
        "folds": folds,
        "k": k,
        "exemplar_count": exemplar_count,
        "criterion": criterion,
        "seed": seed,
        "cfg": cfg.to_dict(),
    }
    return CVReport(method, folds, fold_acc, correct, total, params)
