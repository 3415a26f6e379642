"""Squared-error gradient boosting over depth-limited regression trees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import InputError


@dataclass(frozen=True)
class GBMConfig:
    n_estimators: int = 300
    max_depth: int = 4
    learning_rate: float = 0.05
    min_samples_leaf: int = 5
    seed: int = 0


@dataclass
class RegressionTree:
    """Tree in heap layout: node i has children 2i+1 and 2i+2; feature -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        internal = np.flatnonzero(self.feature >= 0)
        if len(internal) == 0:
            return 0
        return int(np.floor(np.log2(internal.max() + 1))) + 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return self.value[node]
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(active, np.where(go_left, 2 * node + 1, 2 * node + 2), node)


def _best_split(X, r, idx, min_leaf):
    n = len(idx)
    total = r[idx].sum()
    base = total * total / n
    best = (0.0, -1, 0.0)
    for f in range(X.shape[1]):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cs = np.cumsum(r[idx][order])
        left_n = np.arange(1, n)
        left_s = cs[:-1]
        right_s = total - left_s
        gain = left_s * left_s / left_n + right_s * right_s / (n - left_n) - base
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(gain[i]), f, float(thr))
    return best


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int, min_samples_leaf: int) -> RegressionTree:
    size = 2 ** (max_depth + 1) - 1
    feature = np.full(size, -1, dtype=np.int64)
    threshold = np.zeros(size)
    value = np.zeros(size)
    stack = [(0, np.arange(len(r)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        value[node] = r[idx].mean()
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf:
            continue
        gain, f, thr = _best_split(X, r, idx, min_samples_leaf)
        if f < 0 or gain <= 0.0:
            continue
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((2 * node + 2, idx[~go_left], depth + 1))
        stack.append((2 * node + 1, idx[go_left], depth + 1))
    return RegressionTree(feature, threshold, value)


@dataclass
class GBMRegressor:
    base_prediction: float
    trees: list[RegressionTree]
    config: GBMConfig = field(default_factory=GBMConfig)
    n_features: int = 0
    train_mse: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._pack()

    def _pack(self):
        if self.trees:
            self._feat = np.stack([t.feature for t in self.trees])
            self._thr = np.stack([t.threshold for t in self.trees])
            self._val = np.stack([t.value for t in self.trees])
        else:
            self._feat = self._thr = self._val = None

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(len(X), self.base_prediction)
        if self._feat is None:
            return out
        n_trees = len(self.trees)
        t = np.arange(n_trees)[:, None]
        for start in range(0, len(X), 2048):
            Xc = X[start:start + 2048]
            node = np.zeros((n_trees, len(Xc)), dtype=np.int64)
            cols = np.arange(len(Xc))[None, :]
            for _ in range(self.config.max_depth):
                f = self._feat[t, node]
                go_left = Xc[cols, np.maximum(f, 0)] <= self._thr[t, node]
                node = np.where(f >= 0, np.where(go_left, 2 * node + 1, 2 * node + 2), node)
            out[start:start + 2048] += self.config.learning_rate * self._val[t, node].sum(axis=0)
        return out

    def predict_one(self, x) -> float:
        return float(self.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def to_arrays(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "base_prediction": self.base_prediction,
            "n_features": self.n_features,
            "n_estimators": self.config.n_estimators,
            "max_depth": self.config.max_depth,
            "learning_rate": self.config.learning_rate,
            "min_samples_leaf": self.config.min_samples_leaf,
            "seed": self.config.seed,
            "n_trees": len(self.trees),
        }
        size = 2 ** (self.config.max_depth + 1) - 1
        if self.trees:
            arrays = {"feature": self._feat, "threshold": self._thr, "value": self._val}
        else:
            arrays = {
                "feature": np.zeros((0, size), dtype=np.int64),
                "threshold": np.zeros((0, size)),
                "value": np.zeros((0, size)),
            }
        return meta, arrays

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "GBMRegressor":
        cfg = GBMConfig(
            meta["n_estimators"], meta["max_depth"], meta["learning_rate"], meta["min_samples_leaf"], meta["seed"]
        )
        size = 2 ** (cfg.max_depth + 1) - 1
        feat = arrays["feature"]
        if feat.ndim != 2 or (len(feat) and feat.shape[1] != size) or len(feat) != meta["n_trees"]:
            raise InputError("stored tree arrays do not match the declared depth")
        trees = [
            RegressionTree(feat[i].astype(np.int64), arrays["threshold"][i], arrays["value"][i])
            for i in range(len(feat))
        ]
        return cls(meta["base_prediction"], trees, cfg, meta["n_features"])


def gbm_fit(features, targets, config: GBMConfig | None = None) -> GBMRegressor:
    config = config or GBMConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise InputError("features must be a matrix with one row per target")
    if len(y) < 2:
        raise InputError("need at least two training rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("non-finite training values")

    base = float(y.mean())
    pred = np.full(len(y), base)
    trees: list[RegressionTree] = []
    history = [float(np.mean((y - pred) ** 2))]
    for _ in range(config.n_estimators):
        resid = y - pred
        tree = fit_tree(X, resid, config.max_depth, config.min_samples_leaf)
        if tree.feature[0] < 0:
            break
        trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(X)
        history.append(float(np.mean((y - pred) ** 2)))
    return GBMRegressor(base, trees, config, X.shape[1], history)


def gbm_predict(model: GBMRegressor, row) -> float:
    return model.predict_one(row)
