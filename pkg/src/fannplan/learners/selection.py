"""ROC-AUC and cross-validated grid search."""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def kfold_indices(n: int, folds: int, seed: int, labels=None) -> list[np.ndarray]:
    """Random folds; with ``labels`` each class is dealt round-robin so folds stay stratified."""
    rng = np.random.default_rng(seed)
    if labels is None:
        return np.array_split(rng.permutation(n), folds)
    labels = np.asarray(labels)
    out: list[list[int]] = [[] for _ in range(folds)]
    start = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        for i, idx in enumerate(members):
            out[(start + i) % folds].append(int(idx))
        start = (start + len(members)) % folds
    return [np.sort(np.array(f, dtype=np.int64)) for f in out]


def grid_search(
    train_fn: Callable[[dict, np.ndarray, np.ndarray], object],
    score_fn: Callable[[object, np.ndarray], np.ndarray],
    X,
    y,
    grid: Sequence[dict],
    folds: int = 3,
    seed: int = 0,
) -> tuple[dict, list[float]]:
    """Pick the grid point with the best mean held-out ROC-AUC.

    ``train_fn(params, X, y)`` returns a model and ``score_fn(model, X)`` returns
    positive-class scores. Returns ``(best_params, mean_auc_per_point)``; ties go
    to the earlier grid point.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if not grid:
        raise ValueError("grid must be non-empty")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    splits = kfold_indices(len(y), folds, seed, labels=y)
    usable = []
    for i, val in enumerate(splits):
        train = np.concatenate([s for j, s in enumerate(splits) if j != i])
        if len(np.unique(y[val])) < 2 or len(np.unique(y[train])) < 2:
            logger.warning("fold %d has a single class; skipped", i)
            continue
        usable.append((train, val))
    if not usable:
        raise UndefinedMetricError("every cross-validation fold is single-class")

    means = []
    for params in grid:
        aucs = []
        for train, val in usable:
            model = train_fn(params, X[train], y[train])
            aucs.append(roc_auc(score_fn(model, X[val]), y[val]))
        means.append(float(np.mean(aucs)))
    best = int(np.argmax(means))
    return dict(grid[best]), means
