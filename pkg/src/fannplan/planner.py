"""Learned choice between pre-filtering and post-filtering.

Training queries are executed under both strategies; the one with the higher
utility (recall@k divided by wall time) becomes the label. A small MLP over
dataset descriptors plus the estimated selectivity learns that choice.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from .core import FilteredQuery, VectorCorpus
from .engines import (
    POST,
    PRE,
    AnnIndex,
    ExecutionReport,
    alpha_for,
    postfilter_search,
    prefilter_search,
)
from .learners.mlp import MLPClassifier, TrainConfig, TrainingError, mlp_train
from .learners.selection import grid_search, roc_auc
from .selectivity import EstimatorMissingError, SelectivityEstimator
from .stats import DatasetStats
from .workload import Workload, gen_workload

logger = logging.getLogger(__name__)

PLANNER_KIND = "planner"
STRATEGIES = (PRE, POST)
TIE_EPS = 1e-9
FEATURES_WITH_K = ("dim", "log_corpus_size", "distribution_measure", "estimated_selectivity", "k")
DEFAULT_GRID = tuple({"l2_lambda": lam, "patience": pat} for lam in (1e-5, 1e-4, 1e-3) for pat in (10, 20))


def planner_features(stats: DatasetStats, selectivity: float, k: int, use_k: bool = True) -> np.ndarray:
    s = min(1.0, max(1.0 / stats.n, selectivity))
    row = [float(stats.d), math.log(stats.n), stats.distribution_measure, s]
    if use_k:
        row.append(float(k))
    return np.array(row, dtype=np.float64)


def recall_at_k(returned: np.ndarray, truth: np.ndarray, k: int, n_matching: int | None = None,
                mode: str = "min") -> float:
    """|returned & truth| / min(k, matching); ``mode="fixed"`` divides by k instead."""
    if n_matching is None:
        n_matching = len(truth)
    denom = k if mode == "fixed" else min(k, n_matching)
    if denom == 0:
        return 1.0
    hits = len(np.intersect1d(returned, truth[:k], assume_unique=True))
    return hits / denom


@dataclass
class UtilityLabel:
    u_pre: float
    u_post: float
    label: str
    recall_pre: float
    recall_post: float
    t_pre: float
    t_post: float


def utility(recall: float, seconds: float) -> float:
    return recall / seconds


def utility_label(recall_pre, t_pre, recall_post, t_post) -> UtilityLabel:
    u_pre, u_post = utility(recall_pre, t_pre), utility(recall_post, t_post)
    label = PRE if u_pre > u_post + TIE_EPS * max(abs(u_pre), abs(u_post), 1.0) else POST
    return UtilityLabel(u_pre, u_post, label, recall_pre, recall_post, t_pre, t_post)


@dataclass
class TrainingRow:
    features: np.ndarray
    label: UtilityLabel
    query: FilteredQuery
    selectivity: float
    estimated_selectivity: float


def _median_run(fn, repeats: int):
    reports = [fn() for _ in range(max(1, repeats))]
    times = sorted(r.elapsed for r in reports)
    return reports[0], times[len(times) // 2]


def label_query(corpus: VectorCorpus, index: AnnIndex, query: FilteredQuery, est: float, repeats: int = 3,
                alpha0: int | None = None) -> UtilityLabel:
    pre, t_pre = _median_run(lambda: prefilter_search(corpus, query), repeats)
    a0 = alpha0 if alpha0 is not None else alpha_for(est, query.k, corpus.n)
    post, t_post = _median_run(lambda: postfilter_search(index, corpus, query, a0), repeats)
    truth = pre.results.ids
    r_post = recall_at_k(post.results.ids, truth, query.k, len(truth))
    return utility_label(1.0, t_pre, r_post, t_post)


def generate_training_set(
    corpus: VectorCorpus,
    estimator: SelectivityEstimator,
    index: AnnIndex,
    n_queries: int,
    selectivity_range: tuple[float, float] = (0.01, 0.25),
    k: int = 10,
    seed: int = 0,
    repeats: int = 3,
    predicate_mix: dict | None = None,
    use_k: bool = True,
    workload: Workload | None = None,
) -> list[TrainingRow]:
    """Execute both strategies on a controlled-selectivity workload and label each query.

    Queries run sequentially; each strategy's time is the median of ``repeats``
    runs. Planner inference is not part of these labels.
    """
    lo, hi = selectivity_range
    if not 0 < lo <= hi <= 1:
        raise ValueError("selectivity_range must lie in (0, 1]")
    stats = estimator.stats
    if workload is None:
        workload = gen_workload(corpus, stats, n_queries, (lo, hi), predicate_mix, k, seed)
    # one untimed pass per strategy to settle caches and JIT
    for q in workload.queries[: min(5, len(workload))]:
        prefilter_search(corpus, q)
        postfilter_search(index, corpus, q)
    rows = []
    for q, achieved in zip(workload.queries, workload.achieved_selectivities):
        try:
            est = estimator.estimate(q.predicate)
        except EstimatorMissingError:
            logger.warning("no estimator for %s; query skipped", q.predicate)
            continue
        lab = label_query(corpus, index, q, est, repeats)
        rows.append(TrainingRow(planner_features(stats, est, q.k, use_k), lab, q, achieved, est))
    return rows


@dataclass
class PlannerModel:
    mlp: MLPClassifier
    mean: np.ndarray
    scale: np.ndarray
    use_k: bool = True
    stats_fingerprint: str = ""
    params: dict = field(default_factory=dict)
    grid_scores: list[float] = field(default_factory=list)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def predict_proba(self, X) -> np.ndarray:
        return self.mlp.predict_proba(self.standardize(X))

    def decide(self, features) -> str:
        p = self.predict_proba(features)
        return PRE if p[0] > p[1] else POST

    def decide_many(self, X) -> list[str]:
        p = self.predict_proba(np.atleast_2d(X))
        return [PRE if a > b else POST for a, b in p]

    def save(self, path) -> str:
        meta, arrays = self.mlp.to_arrays()
        meta.update({"use_k": self.use_k, "stats_fingerprint": self.stats_fingerprint, "params": self.params,
                     "grid_scores": self.grid_scores,
                     "features": list(FEATURES_WITH_K if self.use_k else FEATURES_WITH_K[:4])})
        arrays = dict(arrays, mean=self.mean, scale=self.scale)
        return container.save(path, PLANNER_KIND, meta, arrays)

    def to_bytes(self) -> bytes:
        meta, arrays = self.mlp.to_arrays()
        meta.update({"use_k": self.use_k, "stats_fingerprint": self.stats_fingerprint, "params": self.params})
        return container.dumps(PLANNER_KIND, meta, dict(arrays, mean=self.mean, scale=self.scale))

    @classmethod
    def load(cls, path, stats: DatasetStats | None = None) -> "PlannerModel":
        header, arrays = container.load(path, PLANNER_KIND)
        meta = header["meta"]
        mlp = MLPClassifier.from_arrays(meta, arrays)
        if len(arrays["mean"]) != mlp.n_features:
            raise container.ContainerError("planner scaler arity does not match the network")
        if stats is not None and meta.get("stats_fingerprint") != stats.fingerprint():
            logger.warning("planner was trained against different statistics")
        return cls(mlp, arrays["mean"], arrays["scale"], meta["use_k"], meta.get("stats_fingerprint", ""),
                   meta.get("params", {}), meta.get("grid_scores", []))


def _labels(rows: Sequence[TrainingRow]) -> np.ndarray:
    return np.array([0 if r.label.label == PRE else 1 for r in rows], dtype=np.int64)


def train_planner(
    rows: Sequence[TrainingRow],
    config: TrainConfig | None = None,
    grid: Sequence[dict] = DEFAULT_GRID,
    folds: int = 3,
    stats_fingerprint: str = "",
) -> PlannerModel:
    """Standardize, grid-search (cross-validated ROC-AUC), then fit the final MLP."""
    config = config or TrainConfig()
    if not rows:
        raise TrainingError("empty planner training set")
    X = np.array([r.features for r in rows])
    y = _labels(rows)
    if len(np.unique(y)) < 2:
        only = STRATEGIES[int(y[0])]
        raise TrainingError(f"every training query prefers {only!r}; widen the selectivity range")
    use_k = X.shape[1] == len(FEATURES_WITH_K)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale

    def fit(params, Xf, yf):
        return mlp_train(Xf, yf, _with(config, params))

    def score(model, Xv):
        return model.predict_proba(Xv)[:, 1]

    best, scores = grid_search(fit, score, Z, y, list(grid), folds, config.seed)
    mlp = mlp_train(Z, y, _with(config, best))
    return PlannerModel(mlp, mean, scale, use_k, stats_fingerprint, best, scores)


def _with(config: TrainConfig, params: dict) -> TrainConfig:
    from dataclasses import replace

    return replace(config, **params)


def plan_and_execute(
    model: PlannerModel,
    estimator: SelectivityEstimator,
    index: AnnIndex,
    corpus: VectorCorpus,
    query: FilteredQuery,
) -> ExecutionReport:
    """Estimate selectivity, ask the planner, run the chosen strategy.

    Reported ``elapsed`` covers estimation and inference as well as execution.
    """
    t0 = time.perf_counter()
    try:
        est = estimator.estimate(query.predicate)
    except EstimatorMissingError:
        logger.warning("no estimator for %s; falling back to post-filtering", query.predicate)
        est = None
    if est is None:
        strategy = POST
    else:
        strategy = model.decide(planner_features(estimator.stats, est, query.k, model.use_k))
    planning = time.perf_counter() - t0
    if strategy == PRE:
        rep = prefilter_search(corpus, query)
    else:
        rep = postfilter_search(index, corpus, query, alpha_for(est, query.k, corpus.n))
    rep.elapsed = time.perf_counter() - t0
    rep.planning_time = planning
    rep.estimated_selectivity = est
    return rep


def evaluate_decisions(model: PlannerModel, rows: Sequence[TrainingRow]) -> dict:
    """Accuracy and ROC-AUC of the planner against utility labels."""
    X = np.array([r.features for r in rows])
    y = _labels(rows)
    p = model.predict_proba(X)
    pred = np.where(p[:, 0] > p[:, 1], 0, 1)
    out = {"accuracy": float(np.mean(pred == y)), "n": len(rows)}
    if len(np.unique(y)) == 2:
        out["roc_auc"] = roc_auc(p[:, 1], y)
    return out
