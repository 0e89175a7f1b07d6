"""Flattened-pressure baselines: k-nearest-neighbor vote and a two-hidden-layer MLP.

Both see only the raw pressure values of a window, never the robot pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .egnn import N_CLASSES
from .nn import MLP, cross_entropy, l2_penalty
from .training import TrainConfig, fit

K_NN = 5
MLP_HIDDEN = (256, 64)


@dataclass(frozen=True)
class FlatSample:
    vector: np.ndarray  # (W' * N,) float32
    label: int


def strided_frames(n_frames: int, stride: int) -> np.ndarray:
    """Frame indices kept at a stride, newest frame always included."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.arange(n_frames - 1, -1, -stride)[::-1]


def flatten(sample, stride: int = 1) -> FlatSample:
    """Every stride-th frame's pressures concatenated in time order."""
    p = np.asarray(sample.pressures, dtype=np.float32)
    rows = p[strided_frames(len(p), stride)]
    return FlatSample(rows.reshape(-1), int(sample.label))


def stack(flat_samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([f.vector for f in flat_samples])
    y = np.array([f.label for f in flat_samples], dtype=np.int64)
    return X, y


# --- nearest neighbors --------------------------------------------------------


def _sq_dist(train_X, query):
    d = train_X.astype(np.float64) - np.asarray(query, dtype=np.float64)[None, :]
    return np.einsum("ij,ij->i", d, d)


def knn_classify(train_X, train_y, query, k_nn: int = K_NN) -> int:
    """Majority class among the k_nn nearest training vectors.

    Distance ties keep the lower training index; vote ties go to the smallest class.
    """
    train_y = np.asarray(train_y)
    if len(train_y) == 0:
        raise ValueError("empty training set")
    if k_nn < 1:
        raise ValueError("k_nn must be >= 1")
    d2 = _sq_dist(np.asarray(train_X), query)
    nearest = np.argsort(d2, kind="stable")[: min(k_nn, len(d2))]
    votes = np.bincount(train_y[nearest], minlength=max(N_CLASSES, int(train_y.max()) + 1))
    return int(np.argmax(votes))


def knn_predict(train_X, train_y, queries, k_nn: int = K_NN) -> np.ndarray:
    return np.array([knn_classify(train_X, train_y, q, k_nn) for q in queries], dtype=np.int64)


# --- MLP ----------------------------------------------------------------------


class MlpClassifier:
    """Input -> 256 -> 64 -> 4 with SiLU hidden activations."""

    def __init__(self, in_dim: int, hidden=MLP_HIDDEN, seed: int = 0, n_classes: int = N_CLASSES):
        self.net = MLP([in_dim, *hidden, n_classes], np.random.default_rng(seed))

    def params(self):
        return self.net.params()

    def weights(self):
        return self.net.weights

    def logits(self, X):
        return self.net.forward(np.asarray(X, dtype=np.float64))[0]

    def loss_and_gradients(self, X, labels, l2: float = 0.0):
        logits, cache = self.net.forward(np.asarray(X, dtype=np.float64))
        loss, dlogits = cross_entropy(logits, labels)
        pen, pen_grads = l2_penalty(self.net.weights, l2)
        loss += pen
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss}")
        _, grads = self.net.backward(cache, dlogits, input_grad=False)
        wid = {id(W): g for W, g in zip(self.net.weights, pen_grads)}
        grads = [g + wid[id(p)] if id(p) in wid else g for p, g in zip(self.params(), grads)]
        return loss, grads, logits

    # interface for training.fit

    def batch_loss(self, items, labels, l2=0.0):
        return self.loss_and_gradients(np.stack(items), labels, l2)

    def batch_logits(self, items):
        return self.logits(np.stack(items))


def mlp_train(X, y, cfg: TrainConfig, hidden=MLP_HIDDEN):
    model = MlpClassifier(np.asarray(X).shape[1], hidden, seed=cfg.seed)
    return fit(model, list(np.asarray(X)), np.asarray(y), cfg)


def mlp_classify(model: MlpClassifier, X) -> np.ndarray:
    return model.logits(np.atleast_2d(X)).argmax(axis=1)
