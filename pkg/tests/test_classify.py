import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_trace
from timefp.classify import (
    DistanceCache,
    assign_folds,
    bayes_classify,
    beta_from_moments,
    cross_validate,
    fit_beta,
    knn_classify,
    rank_candidates,
    select_exemplars,
    train,
)
from timefp.distortion import BENCHMARK_SIGNATURE, BENCHMARK_SPEC, synth_sites
from timefp.dtw import DtwConfig, f_distance
from timefp.errors import FitError, InsufficientDataError
from timefp.model import BetaFit, ExemplarSet, ThresholdTable, TrainedModel, load_model, save_model
from timefp.trace import Dataset, as_trace

DIAG = DtwConfig(tie_break="prefer_diagonal")


@pytest.fixture(scope="module")
def small():
    return synth_sites(4, 10, BENCHMARK_SPEC, seed=3, signature=BENCHMARK_SIGNATURE)


def test_beta_moments_hand_value():
    a, b = beta_from_moments(0.2, 0.01)
    assert a == pytest.approx(3.0) and b == pytest.approx(12.0)


@given(st.floats(0.05, 50), st.floats(0.05, 50))
def test_beta_moments_round_trip(a, b):
    mean = a / (a + b)
    var = a * b / ((a + b) ** 2 * (a + b + 1))
    ra, rb = beta_from_moments(mean, var)
    assert ra == pytest.approx(a, rel=1e-9) and rb == pytest.approx(b, rel=1e-9)


def test_beta_recovered_from_sample():
    x = np.random.default_rng(0).beta(2, 5, size=10_000)
    a, b = fit_beta(x)
    assert abs(a - 2) / 2 < 0.1 and abs(b - 5) / 5 < 0.1


def test_beta_fit_errors():
    with pytest.raises(FitError):
        fit_beta([0.3, 0.3, 0.3])
    with pytest.raises(FitError):
        beta_from_moments(1.2, 0.1)
    assert min(beta_from_moments(0.5, 0.3)) == pytest.approx(1e-3)


def _model(sites: dict[str, list], bayes=None, cfg=DIAG):
    ex = {s: ExemplarSet(s, tuple(ts)) for s, ts in sites.items()}
    return TrainedModel(ex, cfg, bayes)


def test_bayes_prefers_matching_density():
    e1, e2 = as_trace([0, 1, 2], "e1", "A"), as_trace([0, 1, 2], "e2", "B")
    m = _model({"A": [e1], "B": [e2]}, {"A": BetaFit(e1, 2, 8), "B": BetaFit(e2, 8, 2)})

    class Fixed(DistanceCache):
        def many(self, pairs):
            return np.full(len(pairs), 0.1)

    assert bayes_classify(m, as_trace([0, 5]), Fixed(DIAG)) == "A"


def test_single_site_model():
    e = as_trace([0, 1, 2], "e", "only")
    m = _model({"only": [e]}, {"only": BetaFit(e, 2, 3)})
    t = as_trace([0, 0.3, 0.9, 4])
    assert knn_classify(m, t, 1).predicted == "only"
    assert bayes_classify(m, t) == "only"


def test_knn_vote_tie_goes_to_smaller_distance_sum():
    a1, a2 = as_trace([0, 1, 2, 3], "a1", "A"), as_trace([0, 1, 2, 30], "a2", "A")
    b1, b2 = as_trace([0, 1, 2, 3.5], "b1", "B"), as_trace([0, 1, 2, 31], "b2", "B")
    m = _model({"A": [a1, a2], "B": [b1, b2]})
    res = knn_classify(m, as_trace([0, 1, 2, 3], "q"), k=4)
    assert res.votes == {"A": 2, "B": 2}
    assert res.predicted == min(("A", "B"), key=lambda s: sum(res.distances_for(s)))
    assert sum(res.votes.values()) == 4


def test_knn_validates_k(small):
    m = train(small, 3)
    with pytest.raises(ValueError):
        knn_classify(m, small.sites["site00"][0], k=13)


def test_exemplars_self_classify(small):
    m = train(small, 3, cfg=DIAG)
    for s in m.sites:
        for ex in m.exemplars[s].exemplars:
            assert knn_classify(m, ex, 1).predicted == s


def test_rank_candidates_ties_by_id():
    ts = [as_trace([0], "b"), as_trace([0], "a"), as_trace([0], "c")]
    assert rank_candidates(ts, "min_sum", np.zeros((3, 3))) == [1, 0, 2]
    m = np.array([[0, 0.1, 0.5], [0.1, 0, 0.5], [0.5, 0.5, 0]])
    assert rank_candidates(ts, "min_sum", m)[0] in (0, 1)
    assert rank_candidates(ts, "min_variance", m)[-1] == 2


def test_select_exemplars_count(small):
    es = select_exemplars(small.sites["site01"], 3)
    assert len(es.exemplars) == 3 and es.site == "site01"
    assert len({t.id for t in es.exemplars}) == 3


@given(st.integers(2, 40), st.integers(2, 10), st.integers(0, 99))
def test_fold_partition(n, folds, seed):
    ts = [as_trace([0], f"t{i:02d}", "s") for i in range(n)]
    f = assign_folds(ts, folds, seed)
    assert set(f) == {t.id for t in ts}
    sizes = np.bincount(list(f.values()), minlength=folds)
    assert sizes.max() - sizes.min() <= 1
    assert assign_folds(list(reversed(ts)), folds, seed) == f


def test_crossval_separable_is_perfect():
    sites = {}
    for k, label in enumerate(["a", "b", "c"]):
        base = np.cumsum(np.r_[0, np.full(10 + 5 * k, 0.01 * (k + 1))])
        sites[label] = [as_trace(base, f"{label}{i}", label) for i in range(10)]
    rep = cross_validate(Dataset(sites), folds=5, k=3, cfg=DIAG)
    assert rep.mean_accuracy == 1.0


def test_crossval_leave_one_out_and_errors(small):
    rep = cross_validate(small, folds=10, k=3)
    assert 0 <= rep.mean_accuracy <= 1
    assert len(rep.fold_rows()) == 40
    with pytest.raises(InsufficientDataError):
        cross_validate(small, folds=11)


def test_crossval_permutation_invariant(small):
    shuffled = Dataset({s: list(reversed(small.sites[s])) for s in reversed(small.labels)})
    a = cross_validate(small, folds=5, k=3, seed=2)
    b = cross_validate(shuffled, folds=5, k=3, seed=2)
    assert a.to_dict() == b.to_dict()


def test_crossval_jobs_do_not_change_results(small):
    a = cross_validate(small, folds=5, k=3, seed=2, jobs=1)
    b = cross_validate(small, folds=5, k=3, seed=2, jobs=3)
    assert a.to_dict() == b.to_dict()


def test_crossval_bayes_runs(small):
    rep = cross_validate(small, folds=5, k=3, method="bayes")
    assert 0 <= rep.mean_accuracy <= 1


def test_model_round_trip(tmp_path, small):
    m = train(small, 3, bayes_criterion="min_variance")
    m.thresholds = ThresholdTable({s: 0.25 for s in m.sites}, 90)
    p = tmp_path / "m.json"
    save_model(m, p)
    back = load_model(p)
    assert back.sites == m.sites and back.cfg == m.cfg
    for s in m.sites:
        for x, y in zip(back.exemplars[s].exemplars, m.exemplars[s].exemplars):
            assert np.array_equal(x.timestamps, y.timestamps)
        assert back.bayes[s].alpha == m.bayes[s].alpha
    assert back.thresholds.thresholds == m.thresholds.thresholds


def test_model_without_site(small):
    m = train(small, 2)
    r = m.without("site00")
    assert "site00" not in r.sites and r.exemplar_count == 6


def test_cache_never_confuses_same_id(rng):
    cache = DistanceCache(DtwConfig())
    a = random_trace(rng, 20, id="same")
    b = random_trace(rng, 25, id="same")
    ref = random_trace(rng, 22, id="ref")
    cache.get(a, ref)
    assert cache.get(b, ref) == f_distance(b, ref)
    assert len(cache) == 2
