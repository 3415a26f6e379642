import logging

import numpy as np
import pytest

from fannplan.core import FilteredQuery, Interval, Predicate, matching_ids
from fannplan.datasets import CorpusConfig
from fannplan.engines import GraphParams, alpha_for, build_graph_index, postfilter_search
from fannplan.learners import GBMConfig, MLPClassifier, TrainConfig, TrainingError
from fannplan.planner import (
    FEATURES_WITH_K,
    PlannerModel,
    TrainingRow,
    evaluate_decisions,
    generate_training_set,
    plan_and_execute,
    planner_features,
    recall_at_k,
    train_planner,
    utility,
    utility_label,
)
from fannplan.selectivity import SelectivityEstimator, train_estimator
from fannplan.stats import build_stats
from fannplan.workload import gen_workload, random_model_predicates


@pytest.fixture(scope="module")
def env():
    c = CorpusConfig.default(20_000, 32).generate(0)
    s = build_stats(c, seed=0)
    model = train_estimator(c, s, random_model_predicates(c, s, 200, seed=1), config=GBMConfig(n_estimators=60))
    est = SelectivityEstimator(s, model, s.fingerprint())
    idx = build_graph_index(c, GraphParams(), seed=0)
    return c, s, est, idx


def synthetic_rows(n, seed, threshold=0.1):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        s = float(rng.uniform(0.01, 0.25))
        feats = np.array([32.0, np.log(1e5), 1.4, s, 10.0])
        lab = utility_label(1.0, 1.0, 1.0, 2.0) if s <= threshold else utility_label(1.0, 2.0, 1.0, 1.0)
        rows.append(TrainingRow(feats, lab, None, s, s))
    return rows


def test_utility_examples():
    assert utility(1.0, 2.0) == 0.5
    assert utility_label(1.0, 0.5, 0.8, 0.1).label == "post"
    assert utility_label(1.0, 0.1, 0.8, 0.5).label == "pre"
    # exact tie goes to post
    assert utility_label(1.0, 1.0, 1.0, 1.0).label == "post"


def test_recall_denominators():
    truth = np.array([1, 2, 3])
    assert recall_at_k(np.array([1, 2, 3]), truth, 10) == 1.0
    assert recall_at_k(np.array([1, 2, 3]), truth, 10, mode="fixed") == 0.3
    assert recall_at_k(np.array([1, 9]), truth, 2, n_matching=3) == 0.5
    assert recall_at_k(np.array([], dtype=np.int64), np.array([], dtype=np.int64), 5) == 1.0


def test_planner_features_clamp():
    class S:
        n, d, distribution_measure = 1000, 8, 1.5
    f = planner_features(S, 0.0, 10)
    assert f.tolist() == [8.0, np.log(1000), 1.5, 1e-3, 10.0]
    assert len(planner_features(S, 2.0, 10, use_k=False)) == 4
    assert planner_features(S, 2.0, 10)[3] == 1.0


def test_separable_labels_learned():
    train, held = synthetic_rows(300, 0), synthetic_rows(200, 1)
    model = train_planner(train, TrainConfig(seed=0))
    ev = evaluate_decisions(model, held)
    assert ev["accuracy"] >= 0.95
    assert ev["roc_auc"] >= 0.5


def test_training_reproducible_and_self_consistent(tmp_path):
    rows = synthetic_rows(200, 2)
    a = train_planner(rows, TrainConfig(seed=3, max_epochs=50))
    b = train_planner(rows, TrainConfig(seed=3, max_epochs=50))
    assert a.to_bytes() == b.to_bytes()
    X = np.array([r.features for r in rows])
    a.save(tmp_path / "p.bin")
    back = PlannerModel.load(tmp_path / "p.bin")
    assert back.decide_many(X) == a.decide_many(X)


def test_single_class_rejected():
    rows = [r for r in synthetic_rows(100, 0) if r.label.label == "pre"]
    with pytest.raises(TrainingError, match="widen"):
        train_planner(rows)


def test_oracle_choice_dominates_pure_strategies():
    rng = np.random.default_rng(0)
    labs = [utility_label(1.0, rng.uniform(0.1, 2), rng.uniform(0.5, 1), rng.uniform(0.1, 2)) for _ in range(100)]
    oracle = np.mean([max(l.u_pre, l.u_post) for l in labs])
    assert oracle >= np.mean([l.u_pre for l in labs])
    assert oracle >= np.mean([l.u_post for l in labs])


def _hardwired(n_features, strategy):
    m = MLPClassifier.init(n_features, zero=True)
    m.biases[-1] = np.array([5.0, -5.0]) if strategy == "pre" else np.array([-5.0, 5.0])
    return PlannerModel(m, np.zeros(n_features), np.ones(n_features))


def test_hardwired_post_matches_postfilter(env):
    c, s, est, idx = env
    model = _hardwired(5, "post")
    wl = gen_workload(c, s, 20, seed=5)
    for q in wl.queries:
        rep = plan_and_execute(model, est, idx, c, q)
        ref = postfilter_search(idx, c, q, alpha_for(est.estimate(q.predicate), q.k, c.n))
        assert rep.strategy == "post"
        np.testing.assert_array_equal(rep.results.ids, ref.results.ids)
        assert rep.elapsed >= rep.planning_time > 0


def test_results_valid_for_either_strategy(env):
    c, s, est, idx = env
    wl = gen_workload(c, s, 20, seed=6)
    for strategy in ("pre", "post"):
        model = _hardwired(5, strategy)
        for q in wl.queries:
            rep = plan_and_execute(model, est, idx, c, q)
            allowed = set(matching_ids(c, q.predicate).tolist())
            assert rep.strategy == strategy
            assert set(rep.results.ids.tolist()) <= allowed
            assert len(rep.results) == min(q.k, len(allowed))


def test_missing_estimator_falls_back_to_post(env, caplog):
    c, s, _, idx = env
    bare = SelectivityEstimator(s, None)
    p = Predicate(frozenset({("c0", c.vocab["c0"][0])}), "price", (Interval(0, 50),))
    with caplog.at_level(logging.WARNING):
        rep = plan_and_execute(_hardwired(5, "pre"), bare, idx, c, FilteredQuery(np.zeros(c.d), p, 10))
    assert rep.strategy == "post"
    assert "falling back" in caplog.text


def test_training_set_rows(env):
    c, s, est, idx = env
    rows = generate_training_set(c, est, idx, 40, (0.01, 0.25), k=10, seed=7, repeats=1)
    assert len(rows) >= 35
    for r in rows:
        assert r.label.recall_pre == 1.0
        assert r.features.shape == (len(FEATURES_WITH_K),)
        assert r.label.t_pre > 0 and r.label.t_post > 0
    with pytest.raises(ValueError):
        generate_training_set(c, est, idx, 5, (0.3, 0.1))


def test_low_selectivity_prefers_pre_high_prefers_post(env):
    c, s, est, idx = env
    rows = generate_training_set(c, est, idx, 80, (0.01, 0.25), k=10, seed=8, repeats=3)
    low = [r.label.label for r in rows if r.selectivity < 0.03]
    high = [r.label.label for r in rows if r.selectivity > 0.18]
    assert low and high
    assert low.count("pre") > len(low) / 2
    assert high.count("post") > len(high) / 2
