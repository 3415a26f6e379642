"""Two-hidden-layer ReLU classifier with softmax output, trained with Adam."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..core import InputError

HIDDEN = (64, 32)
N_CLASSES = 2


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 200
    adam_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20
    validation_fraction: float = 0.2
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if min(self.max_epochs, self.batch_size, self.patience) <= 0 or self.adam_lr <= 0:
            raise ValueError("training parameters must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MLPClassifier:
    """Weights ``W[i]`` have shape (fan_in, fan_out); class 0 = pre, class 1 = post."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    l2_lambda: float = 0.0
    history: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_features: int, seed: int = 0, zero: bool = False, l2_lambda: float = 0.0,
             hidden: tuple[int, ...] = HIDDEN) -> "MLPClassifier":
        sizes = (n_features, *hidden, N_CLASSES)
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if zero:
                weights.append(np.zeros((fan_in, fan_out)))
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, l2_lambda)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got {X.shape[1]}")
        p = _softmax(self.logits(X))
        return p[0] if single else p

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(np.atleast_2d(X)), axis=1)

    def loss(self, X: np.ndarray, y: np.ndarray, l2: bool = True) -> float:
        p = _softmax(self.logits(X))
        ce = -np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)))
        if l2 and self.l2_lambda:
            ce += self.l2_lambda * sum(float((W * W).sum()) for W in self.weights)
        return float(ce)

    def gradients(self, X: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
        """Analytic gradient of mean cross-entropy + l2 * sum ||W||^2, ordered like ``params()``."""
        acts = [X]
        pre = []
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        p = _softmax(h @ self.weights[-1] + self.biases[-1])
        delta = p
        delta[np.arange(len(y)), y] -= 1.0
        delta /= len(y)
        grads: list[np.ndarray] = []
        for layer in range(len(self.weights) - 1, -1, -1):
            gW = acts[layer].T @ delta + 2.0 * self.l2_lambda * self.weights[layer]
            gb = delta.sum(axis=0)
            grads[:0] = [gW, gb]
            if layer:
                delta = (delta @ self.weights[layer].T) * (pre[layer - 1] > 0)
        return grads

    def to_arrays(self) -> tuple[dict, dict[str, np.ndarray]]:
        arrays = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        return {"layer_sizes": list(self.layer_sizes), "l2_lambda": self.l2_lambda}, arrays

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "MLPClassifier":
        sizes = meta["layer_sizes"]
        weights = [arrays[f"W{i}"] for i in range(len(sizes) - 1)]
        biases = [arrays[f"b{i}"] for i in range(len(sizes) - 1)]
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise InputError(f"layer {i} shape does not match declared sizes {sizes}")
        return cls(weights, biases, meta["l2_lambda"])


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _split(y: np.ndarray, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(len(y))
    n_val = max(1, int(round(fraction * len(y))))
    return perm[n_val:], perm[:n_val]


def mlp_train(features, labels, config: TrainConfig | None = None) -> MLPClassifier:
    """Mini-batch Adam with early stopping; returns the best-validation snapshot."""
    config = config or TrainConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise InputError("features must be a matrix with one row per label")
    if len(np.unique(y)) < 2:
        raise TrainingError("training data contains a single class")
    rng = np.random.default_rng(config.seed)
    tr, va = _split(y, config.validation_fraction, rng)
    if len(np.unique(y[tr])) < 2:
        raise TrainingError("training split contains a single class")
    Xtr, ytr, Xva, yva = X[tr], y[tr], X[va], y[va]

    model = MLPClassifier.init(X.shape[1], seed=config.seed, l2_lambda=config.l2_lambda)
    opt = Adam(model.params(), config.adam_lr, config.beta1, config.beta2, config.epsilon)
    best_loss, best, stale = np.inf, copy.deepcopy(model), 0
    train_hist, val_hist = [], []
    for _ in range(config.max_epochs):
        order = rng.permutation(len(ytr))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.step(model.params(), model.gradients(Xtr[batch], ytr[batch]))
        train_hist.append(model.loss(Xtr, ytr))
        val_loss = model.loss(Xva, yva, l2=False)
        val_hist.append(val_loss)
        if val_loss < best_loss:
            best_loss, best, stale = val_loss, copy.deepcopy(model), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best.history = {"train_loss": train_hist, "val_loss": val_hist, "best_val_loss": best_loss}
    return best


def mlp_predict_proba(model: MLPClassifier, row) -> tuple[float, float]:
    p = model.predict_proba(np.asarray(row, dtype=np.float64).ravel())
    return float(p[0]), float(p[1])


def numeric_gradient_check(model: MLPClassifier, features, labels, h: float = 1e-5,
                           grad_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``grad_fn(model, X, y)`` replaces the analytic gradient (used for fault injection).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    analytic = (grad_fn or MLPClassifier.gradients)(model, X, y)
    worst = 0.0
    for p, g in zip(model.params(), analytic):
        flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss(X, y)
            flat[i] = orig - h
            down = model.loss(X, y)
            flat[i] = orig
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(gflat[i]), 1e-7)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst
