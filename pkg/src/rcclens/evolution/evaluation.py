"""Simulator-in-the-loop evaluation of chromosomes, cached per distinct chromosome."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..neural import DenseNet, forward, lrp, normalized_entropy
from ..simulator import Simulator
from ..space import Chromosome


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Row-aligned results for a batch of encoded chromosomes."""

    X: np.ndarray
    heatmaps: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.X)

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.probabilities, axis=1)

    @property
    def failing(self) -> np.ndarray:
        return self.predictions != self.labels

    @property
    def entropy(self) -> np.ndarray:
        return np.atleast_1d(normalized_entropy(self.probabilities))

    def take(self, idx) -> "Evaluation":
        idx = np.atleast_1d(idx)
        return Evaluation(self.X[idx], self.heatmaps[idx], self.probabilities[idx], self.labels[idx])

    @staticmethod
    def concat(parts) -> "Evaluation":
        parts = list(parts)
        return Evaluation(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                            ("X", "heatmaps", "probabilities", "labels")))


@dataclass(eq=False)
class Individual:
    """One evaluated chromosome.  Built only by :class:`Evaluator`."""

    chromosome: Chromosome
    heatmap: np.ndarray
    probabilities: np.ndarray
    label: int
    fitness: dict = field(default_factory=dict)

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def failing(self) -> bool:
        return self.prediction != self.label

    @property
    def entropy(self) -> float:
        return float(normalized_entropy(self.probabilities))


class Evaluator:
    """Render -> forward -> LRP pipeline with a per-chromosome cache.

    ``requests`` counts every chromosome submitted (the search budget unit);
    ``misses`` counts actual simulator + model runs.
    """

    def __init__(self, simulator: Simulator, net: DenseNet, layer: int, epsilon: float = 1e-2):
        if not 0 <= layer < net.n_layers:
            raise IndexError(f"layer {layer} out of range")
        self.simulator = simulator
        self.space = simulator.space
        self.net = net
        self.layer = layer
        self.epsilon = epsilon
        self._cache: dict[bytes, tuple] = {}
        self.requests = 0
        self.misses = 0

    def __call__(self, X, count: bool = True) -> Evaluation:
        """Evaluate a batch; ``count=False`` is for bookkeeping lookups outside the budget."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if count:
            self.requests += len(X)
        keys = [row.tobytes() for row in X]
        todo = [i for i, k in enumerate(keys) if k not in self._cache]
        if todo:
            uniq = {}
            for i in todo:
                uniq.setdefault(keys[i], i)
            idx = list(uniq.values())
            try:
                inputs, labels = self.simulator.render_batch(X[idx])
                probs = forward(self.net, inputs).probabilities
                H = lrp(self.net, inputs, self.layer, self.epsilon)
            except Exception as exc:
                raise EvaluationError(f"evaluation of {len(idx)} chromosomes failed: {exc}") from exc
            self.misses += len(idx)
            for j, i in enumerate(idx):
                self._cache[keys[i]] = (H[j], probs[j], labels[j])
        rows = [self._cache[k] for k in keys]
        return Evaluation(
            X.copy(),
            np.array([r[0] for r in rows]),
            np.array([r[1] for r in rows]),
            np.array([r[2] for r in rows]),
        )

    def individuals(self, X) -> list[Individual]:
        ev = self(X)
        return [
            Individual(Chromosome(ev.X[i], self.space), ev.heatmaps[i], ev.probabilities[i], int(ev.labels[i]))
            for i in range(len(ev))
        ]
