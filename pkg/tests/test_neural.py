import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcclens.neural import (
    DenseClassifier,
    DenseLayer,
    DenseNet,
    LRPHeatmaps,
    TrainingError,
    dumps,
    forward,
    load,
    loads,
    loss_and_gradients,
    lrp,
    normalized_entropy,
    predict_proba,
    save,
    train,
)


def test_zero_net_gives_uniform_softmax():
    net = DenseNet([DenseLayer(np.zeros((3, 4)), np.zeros(4), "identity")])
    assert np.allclose(predict_proba(net, np.ones(3)), 0.25)
    ident = DenseNet([DenseLayer(np.eye(2), np.zeros(2), "identity")])
    assert predict_proba(ident, np.zeros(2)).tolist() == [[0.5, 0.5]]


def test_hand_computed_forward():
    W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([0.0, 0.5])
    W2 = np.array([[1.0, 0.0], [-1.0, 1.0]])
    b2 = np.array([0.1, -0.1])
    net = DenseNet([DenseLayer(W1, b1), DenseLayer(W2, b2, "identity")])
    x = np.array([1.0, 2.0])
    h = np.maximum(x @ W1 + b1, 0)  # (2, 3.5)
    z = h @ W2 + b2
    p = np.exp(z) / np.exp(z).sum()
    assert h.tolist() == [2.0, 3.5]
    assert np.allclose(predict_proba(net, x)[0], p, atol=1e-9, rtol=0)


def _fd_check(net, X, y, h=1e-6):
    _, grads = loss_and_gradients(net, X, y)
    worst = 0.0
    for param, g in zip(net.parameters(), grads):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = param[i]
            param[i] = old + h
            lp, _ = loss_and_gradients(net, X, y)
            param[i] = old - h
            lm, _ = loss_and_gradients(net, X, y)
            param[i] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(1e-6, abs(num) + abs(g[i])))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    net = DenseNet.initialize((4, 5, 3), seed=2)
    for layer in net.layers:
        layer.bias += rng.normal(0, 0.1, size=layer.bias.shape)
    X = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    assert _fd_check(net, X, y) < 1e-4


def test_training_separable_and_deterministic():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    net = DenseNet.initialize((2, 8, 2), seed=0)
    a = train(net, X, y, epochs=60, learning_rate=0.1, seed=4)
    b = train(net, X, y, epochs=60, learning_rate=0.1, seed=4)
    assert a.equals(b)
    assert np.mean(np.argmax(forward(a, X).logits, axis=1) == y) >= 0.99
    assert train(net, X, y, epochs=0).equals(net)


def test_training_divergence_raises():
    X = np.array([[1e200, -1e200], [-1e200, 1e200]])
    net = DenseNet.initialize((2, 2), seed=0)
    with np.errstate(all="ignore"), pytest.raises(TrainingError):
        train(net, X, [0, 1], epochs=3, learning_rate=1e300)


def test_lrp_linear_layer_is_proportional_to_contribution():
    w = np.array([[2.0], [-1.0], [0.5]])
    net = DenseNet([DenseLayer(w, np.zeros(1), "identity")])
    x = np.array([1.0, 3.0, 4.0])
    R = lrp(net, x, 0, epsilon=1e-9)
    contrib = w[:, 0] * x
    assert np.allclose(R, contrib * (contrib.sum() / (contrib.sum() + 1e-9)), rtol=1e-12)


def test_lrp_single_path():
    net = DenseNet([DenseLayer(np.diag([1.0, 2.0, 3.0]), np.zeros(3)),
                    DenseLayer(np.ones((3, 1)), np.zeros(1), "identity")])
    R = lrp(net, np.array([0.0, 5.0, 0.0]), 0, epsilon=1e-9)
    assert R[0] == 0.0 and R[2] == 0.0 and R[1] == pytest.approx(10.0)


def test_lrp_conservation_on_random_nets():
    rng = np.random.default_rng(7)
    for trial in range(20):
        net = DenseNet.initialize((6, 8, 5, 3), seed=trial)
        x = rng.uniform(0, 1, size=6)
        R = lrp(net, x, 0, epsilon=1e-6)
        out = forward(net, x).logits.max()
        assert abs(R.sum() - out) <= 1e-3 * abs(out)


def test_lrp_batch_matches_rows():
    net = DenseNet.initialize((4, 6, 3), seed=1)
    X = np.random.default_rng(2).uniform(size=(5, 4))
    B = lrp(net, X, 1)
    assert B.shape == (5, 6)
    for i in range(5):
        assert np.allclose(B[i], lrp(net, X[i], 1))
    with pytest.raises(IndexError):
        lrp(net, X, 5)


def test_entropy_endpoints():
    assert normalized_entropy(np.full(4, 0.25)) == 1.0
    assert normalized_entropy(np.array([0.0, 1.0, 0.0])) == 0.0
    assert normalized_entropy(np.array([0.75, 0.25])) == pytest.approx(0.8113, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=8).filter(lambda v: sum(v) > 1e-3))
def test_entropy_in_unit_interval(values):
    p = np.array(values) / np.sum(values)
    assert 0.0 <= normalized_entropy(p) <= 1.0


def test_serialization_roundtrip(tmp_path):
    net = DenseNet.initialize((3, 4, 2), seed=5)
    assert loads(dumps(net)).equals(net)
    save(net, tmp_path / "m.txt")
    assert load(tmp_path / "m.txt").equals(net)
    with pytest.raises(ValueError):
        loads("othernet 1\n0\n")


def test_estimators():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] > 0).astype(int)
    clf = DenseClassifier(hidden_layer_sizes=(8,), epochs=30, learning_rate=0.1).fit(X, y)
    assert clf.score(X, y) > 0.95
    assert clf.predict_proba(X).shape == (120, 2)
    H = LRPHeatmaps(clf.net_, layer=1).fit().transform(X[:4])
    assert H.shape == (4, 8)
