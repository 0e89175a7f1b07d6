import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tactigraph.baselines import (
    FlatSample,
    MlpClassifier,
    flatten,
    knn_classify,
    knn_predict,
    mlp_classify,
    mlp_train,
    stack,
    strided_frames,
)
from tactigraph.segmentation import GestureSample, Segment
from tactigraph.training import TrainConfig


def sample(pressures, label=0):
    return GestureSample(np.asarray(pressures, np.float32), np.zeros((len(pressures), 6)), label, (0, Segment(0, 0)))


def oracle_knn(train_X, train_y, query, k):
    """Exhaustive scan with (distance, index) ordering and smallest-class vote ties."""
    scored = sorted((sum((float(a) - float(b)) ** 2 for a, b in zip(x, query)), i) for i, x in enumerate(train_X))
    votes = {}
    for _, i in scored[:k]:
        votes[int(train_y[i])] = votes.get(int(train_y[i]), 0) + 1
    best = max(votes.values())
    return min(c for c, v in votes.items() if v == best)


def test_flatten_dimensions(skin):
    rng = np.random.default_rng(0)
    P = rng.random((100, 2112))
    assert flatten(sample(P), 100).vector.shape == (2112,)
    np.testing.assert_array_equal(flatten(sample(P), 100).vector, P[99].astype(np.float32))
    assert flatten(sample(P), 5).vector.shape == (20 * 2112,)
    assert not flatten(sample(np.zeros((100, 2112)))).vector.any()
    assert list(strided_frames(10, 3)) == [0, 3, 6, 9]
    with pytest.raises(ValueError):
        flatten(sample(P), 0)


def test_flatten_keeps_time_order():
    P = np.arange(12, dtype=np.float32).reshape(6, 2)
    np.testing.assert_array_equal(flatten(sample(P), 2).vector, [2, 3, 6, 7, 10, 11])


def test_knn_examples():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]])
    y = np.array([1, 1, 3, 3, 2])
    assert knn_classify(X, y, X[4], 1) == 2
    assert knn_classify(X, y, [0.2, 0.0], 5) == 1  # global vote 2 x class 1, 2 x class 3: smallest wins
    assert knn_classify(X, np.array([0, 0, 1, 1, 1]), [0.0, 0.0], 5) == 1
    with pytest.raises(ValueError):
        knn_classify(X, y, X[0], 0)


def test_knn_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 4, size=(40, 6)).astype(np.float32)  # coarse grid: many distance ties
    y = rng.integers(0, 4, size=40)
    queries = rng.integers(0, 4, size=(100, 6)).astype(np.float32)
    for k in (1, 3, 5, 8):
        expected = [oracle_knn(X, y, q, k) for q in queries]
        np.testing.assert_array_equal(knn_predict(X, y, queries, k), expected)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_knn_property_vs_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.integers(0, 4, size=n)
    q = rng.normal(size=3)
    assert knn_classify(X, y, q, k) == oracle_knn(X, y, q, k)


def test_mlp_uniform_logits_and_gradients():
    rng = np.random.default_rng(2)
    m = MlpClassifier(12, hidden=(8, 6), seed=0)
    X = rng.random((5, 12))
    y = np.array([0, 1, 2, 3, 1])
    m.net.weights[-1][:] = 0.0
    m.net.biases[-1][:] = 0.0
    loss, _, _ = m.loss_and_gradients(X[:1], y[:1])
    assert loss == pytest.approx(math.log(4), abs=1e-12)

    m = MlpClassifier(12, hidden=(8, 6), seed=1)
    _, grads, _ = m.loss_and_gradients(X, y, 1e-3)
    worst = 0.0
    for p, g in zip(m.params(), grads):
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + 1e-4
            up = m.loss_and_gradients(X, y, 1e-3)[0]
            flat[i] = old - 1e-4
            down = m.loss_and_gradients(X, y, 1e-3)[0]
            flat[i] = old
            fd = (up - down) / 2e-4
            an = g.reshape(-1)[i]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-7))
    assert worst < 1e-4


def test_mlp_trains_deterministically():
    rng = np.random.default_rng(3)
    X = np.concatenate([rng.normal(-1, 0.3, (20, 10)), rng.normal(1, 0.3, (20, 10))])
    y = np.repeat([0, 2], 20)
    cfg = TrainConfig(epochs=15, lr=1e-2, batch_size=8, val_fraction=0.0)
    a, _ = mlp_train(X, y, cfg, hidden=(16, 8))
    b, _ = mlp_train(X, y, cfg, hidden=(16, 8))
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))
    assert (mlp_classify(a, X) == y).mean() >= 0.95


def test_stack():
    X, y = stack([FlatSample(np.ones(3, np.float32), 2), FlatSample(np.zeros(3, np.float32), 1)])
    assert X.shape == (2, 3) and list(y) == [2, 1]
