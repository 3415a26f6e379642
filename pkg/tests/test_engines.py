import numpy as np
import pytest

from fannplan.core import FilteredQuery, Interval, Predicate, knn_exact, matching_ids
from fannplan.engines import (
    BruteForceIndex,
    GraphParams,
    alpha_for,
    build_graph_index,
    load_index,
    postfilter_search,
    prefilter_search,
)
from fannplan.container import ContainerError

from conftest import random_predicate, small_corpus


@pytest.fixture(scope="module")
def graph_setup():
    c = small_corpus(n=3000, d=16, seed=4)
    return c, build_graph_index(c, GraphParams(ef_search=64), seed=1)


def test_prefilter_equals_oracle(corpus, rng):
    for _ in range(30):
        p = random_predicate(corpus, rng)
        q = rng.normal(size=corpus.d)
        rep = prefilter_search(corpus, FilteredQuery(q, p, 7))
        want = knn_exact(corpus, q, 7, p)
        np.testing.assert_array_equal(rep.results.ids, want.ids)
        assert rep.elapsed > 0 and rep.strategy == "pre"


def test_brute_postfilter_exact_and_alpha_doubles(corpus, rng):
    idx = BruteForceIndex(corpus)
    for _ in range(30):
        p = random_predicate(corpus, rng)
        q = FilteredQuery(rng.normal(size=corpus.d), p, 5)
        rep = postfilter_search(idx, corpus, q, alpha0=3)
        np.testing.assert_array_equal(rep.results.ids, prefilter_search(corpus, q).results.ids)
        j = np.log2(rep.alpha_final / 3)
        assert j == int(j) and j >= 0


def test_fallback_returns_all_matches():
    c = small_corpus(n=200, d=4, seed=1)
    few = matching_ids(c, Predicate(frozenset(), "x", (Interval(0.0, 0.2),)))
    assert 0 < len(few) < 10
    rep = postfilter_search(BruteForceIndex(c), c, FilteredQuery(np.zeros(4), Predicate(frozenset(), "x", (Interval(0.0, 0.2),)), 10), 2)
    assert rep.fallback
    assert sorted(rep.results.ids.tolist()) == sorted(few.tolist())
    assert rep.alpha_final * 10 >= c.n


def test_unfiltered_single_round_equals_index_topk(corpus):
    q = FilteredQuery(np.ones(corpus.d), Predicate(), 4)
    rep = postfilter_search(BruteForceIndex(corpus), corpus, q, alpha0=1)
    assert rep.iterations == 1 and rep.alpha_final == 1
    np.testing.assert_array_equal(rep.results.ids, knn_exact(corpus, q.q, 4).ids)


def test_alpha0_validation(corpus):
    with pytest.raises(ValueError):
        postfilter_search(BruteForceIndex(corpus), corpus, FilteredQuery(np.zeros(corpus.d)), alpha0=0)


def test_alpha_for_rule():
    assert alpha_for(0.01, 10, 100_000) == 100
    assert alpha_for(0.5, 10, 100_000) == 10
    assert alpha_for(1e-6, 10, 1000) == 100
    assert alpha_for(None, 10, 1000) == 10


def test_graph_recall_and_result_order(graph_setup):
    c, g = graph_setup
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(50):
        q = c.vectors[rng.integers(c.n)] + rng.normal(scale=0.1, size=c.d)
        ids, d = g.search(q, 10)
        assert len(set(ids.tolist())) == len(ids) == 10
        assert np.all(np.diff(d) >= 0)
        hits += len(np.intersect1d(ids, knn_exact(c, q, 10).ids))
    assert hits / 500 > 0.9


def test_graph_build_deterministic(graph_setup):
    c, g = graph_setup
    g2 = build_graph_index(c, GraphParams(ef_search=64), seed=1)
    for name, arr in g.arrays().items():
        np.testing.assert_array_equal(arr, g2.arrays()[name])


def test_graph_degree_bounds(graph_setup):
    c, g = graph_setup
    assert g.cnt0.max() <= g.params.level0_degree
    assert g.up_cnt.max() <= g.params.max_degree
    assert np.all(g.nbr0[np.arange(c.n)[:, None], np.arange(g.nbr0.shape[1])] < c.n)


def test_index_save_load(tmp_path, graph_setup):
    c, g = graph_setup
    g.save(tmp_path / "i.bin")
    back = load_index(tmp_path / "i.bin", c)
    q = np.zeros(c.d)
    np.testing.assert_array_equal(back.search(q, 10)[0], g.search(q, 10)[0])
    with pytest.raises(ContainerError):
        load_index(tmp_path / "i.bin", small_corpus(n=3000, d=16, seed=5))


def test_graph_postfilter_results_satisfy_predicate(graph_setup):
    c, g = graph_setup
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_predicate(c, rng)
        rep = postfilter_search(g, c, FilteredQuery(rng.normal(size=c.d), p, 10))
        allowed = set(matching_ids(c, p).tolist())
        assert set(rep.results.ids.tolist()) <= allowed
        assert len(rep.results) == min(10, len(allowed))
