"""Predicate selectivity estimation.

Routing:

* no terms              -> 1.0
* ranges only           -> histogram mass of the interval union
* one label             -> frequency table lookup
* two labels            -> co-occurrence table lookup
* three+ labels / mixed -> gradient-boosted regressor over summary features,
                           clamped to [1/N, 1]
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import container
from .core import Predicate, VectorCorpus, exact_selectivity
from .learners.gbm import GBMConfig, GBMRegressor, gbm_fit
from .stats import DatasetStats, histogram_mass, pmi

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "indep_product",
    "pair_joint_min",
    "pair_joint_mean",
    "pair_joint_max",
    "avg_pmi",
    "n_labels",
    "range_sel_hist",
    "range_total_width",
    "range_midpoint",
    "label_range_joint_sum",
)
ESTIMATOR_KIND = "estimator"

PATH_ALL = "all"
PATH_RANGE = "histogram"
PATH_LABEL = "label"
PATH_PAIR = "pair"
PATH_MODEL = "model"


class EstimatorMissingError(RuntimeError):
    """A predicate needs the learned estimator but none was supplied."""


class EstimatorTrainingError(ValueError):
    pass


def route(p: Predicate) -> str:
    if p.is_empty:
        return PATH_ALL
    if not p.label_terms:
        return PATH_RANGE
    if not p.has_range and p.n_labels == 1:
        return PATH_LABEL
    if not p.has_range and p.n_labels == 2:
        return PATH_PAIR
    return PATH_MODEL


def _overlap(lo: float, hi: float, p: Predicate) -> float:
    covered = 0.0
    for iv in p.intervals:
        covered += max(0.0, min(hi, iv.hi) - max(lo, iv.lo))
    return covered / (hi - lo)


def extract_features(stats: DatasetStats, p: Predicate) -> np.ndarray:
    """Fixed-arity feature row (see ``FEATURE_NAMES``).

    Pairs are enumerated in label-id order. With a single label the pairwise
    aggregates fall back to that label's frequency and the PMI average to 0.
    Label-only predicates zero the four range features.
    """
    labels = sorted(p.label_terms, key=lambda t: stats.label_id(*t))
    freqs = [stats.freq(*t) for t in labels]
    indep = float(np.prod(freqs)) if freqs else 1.0
    if len(labels) >= 2:
        pairs = list(itertools.combinations(labels, 2))
        joints = [stats.joint(x, y) for x, y in pairs]
        pmis = [pmi(stats, x, y) for x, y in pairs]
        pair_min, pair_mean, pair_max = min(joints), sum(joints) / len(joints), max(joints)
        avg_pmi = sum(pmis) / len(pmis)
    else:
        pair_min = pair_mean = pair_max = freqs[0] if freqs else 1.0
        avg_pmi = 0.0

    range_sel = width = mid = joint_sum = 0.0
    if p.has_range:
        attr = stats.schema[p.range_attr]
        span = attr.span
        range_sel = histogram_mass(stats, p.range_attr, p.intervals)
        clipped = [(max(iv.lo, attr.lo), min(iv.hi, attr.hi)) for iv in p.intervals]
        width = sum(max(0.0, hi - lo) for lo, hi in clipped) / span
        if p.intervals:
            hull_lo = max(min(iv.lo for iv in p.intervals), attr.lo)
            hull_hi = min(max(iv.hi for iv in p.intervals), attr.hi)
            mid = ((hull_lo + hull_hi) / 2.0 - attr.lo) / span
        edges = stats.super_edges(p.range_attr)
        weights = np.array([_overlap(edges[i], edges[i + 1], p) for i in range(len(edges) - 1)])
        table = stats.label_range_pair[p.range_attr]
        for t in labels:
            joint_sum += float(table[stats.label_id(*t)] @ weights)

    return np.array(
        [indep, pair_min, pair_mean, pair_max, avg_pmi, float(len(labels)), range_sel, width, mid, joint_sum],
        dtype=np.float64,
    )


def estimate_selectivity(stats: DatasetStats, model: GBMRegressor | None, p: Predicate) -> float:
    path = route(p)
    if path == PATH_ALL:
        return 1.0
    if path == PATH_RANGE:
        return histogram_mass(stats, p.range_attr, p.intervals)
    if path == PATH_LABEL:
        ((attr, label),) = tuple(p.label_terms)
        return stats.freq(attr, label)
    if path == PATH_PAIR:
        x, y = sorted(p.label_terms)
        return stats.joint(x, y)
    if model is None:
        raise EstimatorMissingError(f"predicate {p} needs a trained selectivity estimator")
    raw = model.predict_one(extract_features(stats, p))
    if not math.isfinite(raw):
        raw = 1.0 / stats.n
    return min(1.0, max(1.0 / stats.n, raw))


@dataclass
class SelectivityEstimator:
    """Statistics plus an optional trained regressor behind one ``estimate`` call."""

    stats: DatasetStats
    model: GBMRegressor | None = None
    stats_fingerprint: str = ""

    def estimate(self, p: Predicate) -> float:
        return estimate_selectivity(self.stats, self.model, p)

    def save(self, path) -> str:
        if self.model is None:
            raise EstimatorMissingError("no trained model to save")
        meta, arrays = self.model.to_arrays()
        meta["stats_fingerprint"] = self.stats_fingerprint or self.stats.fingerprint()
        meta["features"] = list(FEATURE_NAMES)
        return container.save(path, ESTIMATOR_KIND, meta, arrays)

    @classmethod
    def load(cls, path, stats: DatasetStats) -> "SelectivityEstimator":
        header, arrays = container.load(path, ESTIMATOR_KIND)
        meta = header["meta"]
        model = GBMRegressor.from_arrays(meta, arrays)
        if model.n_features != len(FEATURE_NAMES):
            raise container.ContainerError("estimator feature arity does not match")
        fp = stats.fingerprint()
        if meta.get("stats_fingerprint") != fp:
            logger.warning("estimator was trained against different statistics")
        return cls(stats, model, fp)


def estimator_training_rows(corpus: VectorCorpus, stats: DatasetStats, workload: Sequence[Predicate]):
    X, y = [], []
    for p in workload:
        if route(p) != PATH_MODEL:
            raise EstimatorTrainingError(f"predicate {p} is not a >=3-label or mixed predicate")
        target = exact_selectivity(corpus, p)
        if target <= 0:
            raise EstimatorTrainingError(f"predicate {p} matches no rows")
        X.append(extract_features(stats, p))
        y.append(target)
    return np.array(X), np.array(y)


def train_estimator(
    corpus: VectorCorpus,
    stats: DatasetStats,
    workload: Sequence[Predicate],
    seed: int = 0,
    config: GBMConfig | None = None,
) -> GBMRegressor:
    """Fit the regressor on exact full-corpus selectivities of ``workload``.

    Rows are put in a canonical order first so the result does not depend on
    workload order.
    """
    if not workload:
        raise EstimatorTrainingError("empty estimator workload")
    X, y = estimator_training_rows(corpus, stats, workload)
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    cfg = config or GBMConfig(seed=seed)
    return gbm_fit(X[order], y[order], cfg)
