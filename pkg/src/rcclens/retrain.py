"""Retraining with expression-sampled unsafe inputs (S%/R% mixture, best of several runs)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .neural import DenseNet, TrainingError, forward, train
from .rules import UnsafeExpression, sample_expression
from .rules.expression import UnsatisfiableError
from .simulator import Simulator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetrainConfig:
    S: float = 5.0  # % of the simulator training pool kept
    R: float = 100.0  # % of the field pool kept
    per_cluster: int = 50
    repetitions: int = 3
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.S <= 100.0 and 0.0 <= self.R <= 100.0):
            raise ValueError("S and R are percentages in [0, 100]")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.per_cluster < 0:
            raise ValueError("per_cluster must be >= 0")


@dataclass
class LabeledSet:
    """Model inputs and labels, with the chromosomes that produced them and an optional source tag."""

    X: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    source: np.ndarray = None

    def __post_init__(self):
        if self.source is None:
            self.source = np.zeros(len(self.X), dtype=int)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def render(cls, simulator: Simulator, X, source=None) -> "LabeledSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(X) == 0 or X.size == 0:
            return cls.empty(simulator)
        inputs, labels = simulator.render_batch(X)
        return cls(X, inputs, labels, None if source is None else np.asarray(source))

    @classmethod
    def empty(cls, simulator: Simulator) -> "LabeledSet":
        cfg = simulator.config
        return cls(np.empty((0, simulator.space.dim)), np.empty((0, cfg.input_dim)), np.empty(0, dtype=int),
                   np.empty(0, dtype=int))

    def take(self, idx) -> "LabeledSet":
        return LabeledSet(self.X[idx], self.inputs[idx], self.labels[idx], self.source[idx])

    @staticmethod
    def concat(parts) -> "LabeledSet":
        parts = [p for p in parts if len(p)]
        return LabeledSet(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("X", "inputs", "labels", "source")))


def build_unsafe_set(expressions: Mapping[int, UnsafeExpression], count: int, simulator: Simulator,
                     rng: np.random.Generator) -> LabeledSet:
    """``count`` expression-sampled, simulator-labelled inputs per cluster (``source`` = cluster id).

    Clusters whose expression cannot be sampled are skipped with a warning.
    """
    parts = []
    for cid, expr in expressions.items():
        if count == 0:
            continue
        try:
            X = sample_expression(expr, simulator.space, count, rng)
        except UnsatisfiableError as exc:
            log.warning("cluster %s: cannot sample its expression (%s); skipped", cid, exc)
            continue
        parts.append(LabeledSet.render(simulator, X, np.full(len(X), cid)))
    return LabeledSet.concat(parts) if parts else LabeledSet.empty(simulator)


def accuracy(net: DenseNet, data: LabeledSet) -> float:
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(np.argmax(forward(net, data.inputs).logits, axis=1) == data.labels))


def subsample(data: LabeledSet, percent: float, rng: np.random.Generator) -> LabeledSet:
    """``round(percent% * n)`` rows uniformly without replacement."""
    k = int(round(len(data) * percent / 100.0))
    return data.take(np.sort(rng.choice(len(data), size=k, replace=False)))


@dataclass
class RetrainResult:
    model: DenseNet
    accuracies: list
    best: int
    mixture_sizes: list = field(default_factory=list)

    @property
    def best_accuracy(self) -> float:
        return self.accuracies[self.best]

    def report_csv(self) -> str:
        lines = ["repetition,simulator,field,improvement,accuracy,selected"]
        for i, (acc, sizes) in enumerate(zip(self.accuracies, self.mixture_sizes)):
            lines.append(f"{i},{sizes[0]},{sizes[1]},{sizes[2]},{acc!r},{int(i == self.best)}")
        return "\n".join(lines) + "\n"


def retrain(net: DenseNet, simulator_pool: LabeledSet, field_pool: LabeledSet, improvement: LabeledSet,
            test: LabeledSet, cfg: RetrainConfig) -> RetrainResult:
    """Fine-tune copies of ``net`` on S% sim + R% field + the improvement set; keep the best on ``test``.

    A repetition whose training diverges scores 0.
    """
    if len(simulator_pool) == 0 and len(field_pool) == 0:
        raise ValueError("both training pools are empty")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.repetitions)]
    models, accs, sizes = [], [], []
    for rep, rng in enumerate(rngs):
        sim = subsample(simulator_pool, cfg.S, rng)
        fld = subsample(field_pool, cfg.R, rng)
        mix = LabeledSet.concat([sim, fld, improvement])
        sizes.append((len(sim), len(fld), len(improvement)))
        try:
            model = train(net.copy(), mix.inputs, mix.labels, epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                          seed=int(rng.integers(2**31)), batch_size=cfg.batch_size)
            acc = accuracy(model, test)
        except TrainingError as exc:
            log.warning("retraining repetition %d diverged: %s", rep, exc)
            model, acc = net.copy(), 0.0
        models.append(model)
        accs.append(acc)
    best = int(np.argmax(accs))
    return RetrainResult(models[best], accs, best, sizes)
