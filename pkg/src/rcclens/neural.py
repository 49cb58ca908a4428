"""Small dense feedforward classifier: forward pass, SGD training, LRP heatmaps.

Layer-index convention for heatmaps: ``L = 0`` is the input vector and
``L = l`` (``1 <= l < n_layers``) is the activation vector feeding dense
layer ``l``.  A dense-layer heatmap is an ``N x 1`` matrix (N neurons).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (in, out) and bias (out,)")


@dataclass
class DenseNet:
    """Stack of dense layers; the last one is read through a softmax."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not match")

    @classmethod
    def initialize(cls, sizes, seed=0, final_activation="identity") -> "DenseNet":
        """He-initialized net with ReLU hidden layers, e.g. ``sizes=(32, 64, 9)``."""
        rng = np.random.default_rng(seed)
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
            layers.append(DenseLayer(W, np.zeros(n_out), final_activation if last else "relu"))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_widths(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    def copy(self) -> "DenseNet":
        return DenseNet([DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def equals(self, other: "DenseNet") -> bool:
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass(frozen=True, eq=False)
class ForwardResult:
    logits: np.ndarray
    probabilities: np.ndarray
    activations: list[np.ndarray]  # activations[l] feeds layer l; last entry = logits
    preactivations: list[np.ndarray] = field(repr=False)


@dataclass(frozen=True, eq=False)
class Heatmap:
    layer_index: int
    matrix: np.ndarray
    source: object = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if not np.all(np.isfinite(m)):
            raise ValueError("heatmap entries must be finite")
        object.__setattr__(self, "matrix", m)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.input_dim}")
    return x


def forward(net: DenseNet, x) -> ForwardResult:
    """Forward pass for one vector or a batch (rows)."""
    x = _check_input(net, x)
    a = x
    acts, pres = [a], []
    for layer in net.layers:
        z = a @ layer.weight + layer.bias
        pres.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(a)
    return ForwardResult(a, softmax(a), acts, pres)


def predict_proba(net: DenseNet, X) -> np.ndarray:
    return forward(net, np.atleast_2d(X)).probabilities


def loss_and_gradients(net: DenseNet, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and its gradient w.r.t. ``net.parameters()``."""
    X = np.atleast_2d(_check_input(net, X))
    y = np.asarray(y, dtype=int)
    n = len(X)
    fw = forward(net, X)
    p = fw.probabilities
    loss = -np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for k in range(net.n_layers - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            delta = delta * (fw.preactivations[k] > 0)
        gW = fw.activations[k].T @ delta
        gb = delta.sum(axis=0)
        grads[:0] = [gW, gb]
        if k:
            delta = delta @ layer.weight.T
    return float(loss), grads


def train(net: DenseNet, X, y, epochs: int = 10, learning_rate: float = 0.05, seed: int = 0,
          batch_size: int = 32) -> DenseNet:
    """Plain mini-batch SGD on cross-entropy; returns a trained copy."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise ValueError("labels out of range for the network's output width")
    net = net.copy()
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_gradients(net, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {start} (lr={learning_rate})")
            for param, g in zip(net.parameters(), grads):
                param -= learning_rate * g
            if not all(np.all(np.isfinite(p)) for p in net.parameters()):
                raise TrainingError(f"non-finite weights at epoch {epoch}, batch offset {start} (lr={learning_rate})")
    return net


def lrp(net: DenseNet, x, target_layer: int, epsilon: float = 1e-2, target_class=None) -> np.ndarray:
    """Epsilon-rule relevance of the neurons at ``target_layer``.

    Relevance starts as the winning (or given) output neuron's logit and is
    redistributed backwards: ``R_j = sum_k a_j w_jk / (z_k + eps*sign(z_k)) R_k``.
    Accepts a single input or a batch; returns ``(N,)`` or ``(n, N)``.
    """
    if not 0 <= target_layer < net.n_layers:
        raise IndexError(f"layer {target_layer} out of range 0..{net.n_layers - 1}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    fw = forward(net, np.atleast_2d(x))
    logits = fw.logits
    n = len(logits)
    k = np.argmax(logits, axis=1) if target_class is None else np.broadcast_to(np.asarray(target_class), (n,))
    R = np.zeros_like(logits)
    R[np.arange(n), k] = logits[np.arange(n), k]
    for l in range(net.n_layers - 1, target_layer - 1, -1):
        z = fw.preactivations[l]
        stab = z + epsilon * np.where(z >= 0, 1.0, -1.0)
        s = R / stab
        R = fw.activations[l] * (s @ net.layers[l].weight.T)
    return R[0] if single else R


def lrp_heatmap(net: DenseNet, x, target_layer: int, epsilon: float = 1e-2, source=None) -> Heatmap:
    return Heatmap(target_layer, lrp(net, x, target_layer, epsilon)[:, None], source)


def normalized_entropy(probabilities) -> np.ndarray | float:
    """Shannon entropy divided by ``ln K`` (``0 ln 0 = 0``); works row-wise."""
    p = np.asarray(probabilities, dtype=float)
    K = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1) / np.log(K)
    h = np.clip(h, 0.0, 1.0)
    # the uniform row hits 1 exactly instead of up to one ulp off
    h = np.where(np.all(p == p[..., :1], axis=-1), 1.0, h)
    return float(h) if np.ndim(h) == 0 else h


# -- serialization ------------------------------------------------------------

def dumps(net: DenseNet) -> str:
    """Textual format: header line, layer count, then per layer its dims,
    activation and row-major weights followed by the bias row."""
    out = io.StringIO()
    out.write(f"densenet {FORMAT_VERSION}\n{net.n_layers}\n")
    for layer in net.layers:
        n_in, n_out = layer.weight.shape
        out.write(f"{n_in} {n_out} {layer.activation}\n")
        for row in layer.weight:
            out.write(" ".join(repr(float(v)) for v in row) + "\n")
        out.write(" ".join(repr(float(v)) for v in layer.bias) + "\n")
    return out.getvalue()


def loads(text: str) -> DenseNet:
    lines = iter(text.splitlines())
    magic, version = next(lines).split()
    if magic != "densenet" or int(version) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {magic} {version}")
    layers = []
    for _ in range(int(next(lines))):
        n_in, n_out, act = next(lines).split()
        W = np.array([[float(v) for v in next(lines).split()] for _ in range(int(n_in))]).reshape(int(n_in), int(n_out))
        b = np.array([float(v) for v in next(lines).split()])
        layers.append(DenseLayer(W, b, act))
    return DenseNet(layers)


def save(net: DenseNet, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(net))


def load(path) -> DenseNet:
    with open(path) as fh:
        return loads(fh.read())


# -- estimator API --------------------------------------------------------------

class DenseClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper around :class:`DenseNet` and :func:`train`.

    With ``warm_start=True`` a second :meth:`fit` fine-tunes ``net_`` instead
    of re-initializing it.
    """

    def __init__(self, hidden_layer_sizes=(64, 32), epochs=40, learning_rate=0.05,
                 batch_size=32, n_classes=None, warm_start=False, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.warm_start = warm_start
        self.random_state = random_state

    @classmethod
    def from_net(cls, net: DenseNet, **params) -> "DenseClassifier":
        widths = net.layer_widths()
        est = cls(hidden_layer_sizes=tuple(widths[1:-1]), n_classes=net.n_classes, **params)
        est.net_ = net
        est.classes_ = np.arange(net.n_classes)
        est.n_features_in_ = net.input_dim
        return est

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        k = self.n_classes or len(unique_labels(y))
        if not (self.warm_start and hasattr(self, "net_")):
            sizes = (X.shape[1], *self.hidden_layer_sizes, k)
            self.net_ = DenseNet.initialize(sizes, seed=self.random_state)
        self.classes_ = np.arange(self.net_.n_classes)
        self.n_features_in_ = X.shape[1]
        self.net_ = train(self.net_, X, y, self.epochs, self.learning_rate, self.random_state, self.batch_size)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        return predict_proba(self.net_, check_array(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class LRPHeatmaps(TransformerMixin, BaseEstimator):
    """Transforms inputs into flattened relevance heatmaps of one layer."""

    def __init__(self, net=None, layer=1, epsilon=1e-2):
        self.net = net
        self.layer = layer
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        if self.net is None:
            raise ValueError("LRPHeatmaps needs a network")
        if not 0 <= self.layer < self.net.n_layers:
            raise IndexError(f"layer {self.layer} out of range")
        self.n_features_in_ = self.net.input_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return lrp(self.net, check_array(X), self.layer, self.epsilon)
