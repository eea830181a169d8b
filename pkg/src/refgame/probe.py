"""Linear probing of frozen encoder features.

A probe is multinomial logistic regression trained with minibatch
gradient descent and L2 weight decay on features that never receive
gradients.  Features are standardized with statistics fit on the probe's
training set, so encoders with wildly different activation scales (a
trained network versus a fresh initialization) compete on equal footing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .seeding import derive_rng

STANDARDIZE_EPS = 1e-8


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    batch_size: int = 64

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "weight_decay": self.weight_decay, "batch_size": self.batch_size}

    @staticmethod
    def from_dict(d: dict) -> "ProbeConfig":
        return ProbeConfig(epochs=int(d["epochs"]), learning_rate=float(d["learning_rate"]),
                           weight_decay=float(d["weight_decay"]), batch_size=int(d["batch_size"]))


@dataclass
class LinearProbe:
    classes: np.ndarray
    weights: np.ndarray       # (D, K)
    bias: np.ndarray          # (K,)
    feature_mean: np.ndarray
    feature_std: np.ndarray
    loss_curve: list[float] = field(default_factory=list)

    def _standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_std

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self._standardize(features) @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.logits(features), axis=1)]


@dataclass(frozen=True)
class ProbeEval:
    accuracy: float
    n_samples: int
    per_class: dict[int, float]

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n_samples": self.n_samples,
                "per_class": {str(k): v for k, v in sorted(self.per_class.items())}}


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def train_linear_probe(features: np.ndarray, labels: np.ndarray,
                       config: ProbeConfig | None = None,
                       rng: np.random.Generator | None = None) -> LinearProbe:
    """Fit the probe; features are treated as constants throughout."""
    cfg = config if config is not None else ProbeConfig()
    cfg.validate()
    if rng is None:
        rng = derive_rng(0, "probe")
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DataError(f"features {features.shape} and labels {labels.shape} disagree")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ConfigError(f"probing needs at least 2 classes, got {len(classes)}")
    n, d = features.shape
    k = len(classes)
    class_index = {c: i for i, c in enumerate(classes.tolist())}
    y = np.array([class_index[c] for c in labels.tolist()], dtype=np.int64)
    onehot = np.zeros((n, k), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0

    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), STANDARDIZE_EPS)
    x = (features - mean) / std

    w = np.zeros((d, k), dtype=np.float64)
    b = np.zeros(k, dtype=np.float64)
    probe = LinearProbe(classes=classes, weights=w, bias=b,
                        feature_mean=mean, feature_std=std)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], onehot[idx]
            probs = _softmax_rows(xb @ w + b)
            m = len(idx)
            epoch_loss -= float(np.log(probs[np.arange(m), y[order[start:start + cfg.batch_size]]]
                                       + 1e-300).sum())
            gz = (probs - yb) / m
            w -= cfg.learning_rate * (xb.T @ gz + cfg.weight_decay * w)
            b -= cfg.learning_rate * gz.sum(axis=0)
        probe.loss_curve.append(epoch_loss / n)
    return probe


def evaluate_probe(probe: LinearProbe, features: np.ndarray,
                   labels: np.ndarray) -> ProbeEval:
    """Top-1 accuracy plus a per-class breakdown."""
    if features.shape[0] != labels.shape[0]:
        raise DataError("features and labels disagree")
    if features.shape[0] == 0:
        raise DataError("cannot evaluate a probe on an empty set")
    predictions = probe.predict(features)
    correct = predictions == labels
    per_class: dict[int, float] = {}
    for c in np.unique(labels):
        mask = labels == c
        per_class[int(c)] = float(correct[mask].mean())
    return ProbeEval(accuracy=float(correct.mean()), n_samples=len(labels),
                     per_class=per_class)
