"""Deterministic synthetic renderer standing in for a parametric image simulator.

The reference scenario renders a "head" described by three pose angles,
an illumination factor, two lamp offsets and a face model into a flat
feature vector.  Labels are nine pose classes (3 vertical x 3 horizontal
bins).  Two sub-boxes of the parameter domain carry an extra rendering
effect (self-occlusion when the head is turned right and tilted; a shadow
when the scene is dark and the head looks up and left).  Both make the
head render as if it were closer to frontal, and both are almost absent
from the training and field samplers, so a model trained on them fails
there.  The boxes start at a label bin edge, so each failure region
borders the correctly classified region it is confused with.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .space import CATEGORICAL, Chromosome, ParameterSpace, ParameterSpec


class ContractError(ValueError):
    """A caller violated an operation's shape or type contract."""


@dataclass(frozen=True)
class ScenarioConfig:
    space: ParameterSpace
    input_dim: int
    class_count: int = 9
    task: str = "classification"
    failure_threshold: float = 4.0
    noise_free: bool = True
    render_delay: float = 0.0

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classification" and self.class_count < 2:
            raise ValueError("classification needs at least 2 classes")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")


@dataclass(frozen=True, eq=False)
class RenderedSample:
    input: np.ndarray
    label: int | np.ndarray
    chromosome: Chromosome = field(repr=False)


def ground_truth_failure(sample: RenderedSample, model_output, cfg: ScenarioConfig) -> bool:
    """True when the model output is wrong for the sample's ground truth.

    Classification: ``model_output`` is a class index (or a probability
    vector, whose argmax is used).  Regression: a real vector compared to
    the label by Euclidean error norm against ``cfg.failure_threshold``.
    """
    if cfg.task == "classification":
        out = np.asarray(model_output)
        if out.ndim == 0:
            pred = int(out)
        elif out.shape == (cfg.class_count,):
            pred = int(np.argmax(out))
        else:
            raise ContractError(f"expected a class index or {cfg.class_count} scores, got shape {out.shape}")
        if not 0 <= pred < cfg.class_count:
            raise ContractError(f"class index {pred} out of range")
        return pred != int(sample.label)
    out = np.asarray(model_output, dtype=float)
    label = np.asarray(sample.label, dtype=float)
    if out.shape != label.shape:
        raise ContractError(f"prediction shape {out.shape} != label shape {label.shape}")
    return bool(np.linalg.norm(out - label) > cfg.failure_threshold)


class Simulator:
    """Maps encoded chromosomes to model inputs and ground-truth labels.

    Subclasses implement :meth:`render_batch`; everything else is derived.
    Rendering must be a pure function of the chromosome.
    """

    name = "simulator"

    def __init__(self, config: ScenarioConfig):
        self.config = config

    @property
    def space(self) -> ParameterSpace:
        return self.config.space

    def render_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def render(self, c: Chromosome) -> RenderedSample:
        if c.space != self.space:
            raise ContractError("chromosome belongs to another parameter space")
        inputs, labels = self.render_batch(c.values[None])
        return RenderedSample(inputs[0], labels[0].item() if labels.ndim == 1 else labels[0], c)

    def labels(self, X: np.ndarray) -> np.ndarray:
        return self.render_batch(X)[1]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


REFERENCE_SPACE = ParameterSpace(
    [
        ParameterSpec("pose_x", -40.0, 40.0),  # vertical (pitch), degrees
        ParameterSpec("pose_y", -90.0, 90.0),  # horizontal (yaw), degrees
        ParameterSpec("pose_z", -40.0, 40.0),  # tilt (roll), degrees
        ParameterSpec("illumination", 0.3, 1.5),
        ParameterSpec("lamp_x", -1.0, 1.0),
        ParameterSpec("lamp_y", -1.0, 1.0),
        ParameterSpec("face_model", kind=CATEGORICAL, levels=("model_a", "model_b", "model_c")),
    ]
)

# bin edges of the two label-defining angles
POSE_X_EDGES = (-40.0, -40.0 / 3.0, 40.0 / 3.0, 40.0)
POSE_Y_EDGES = (-90.0, -30.0, 30.0, 90.0)

EDGE_WIDTH = 0.1  # degrees
EDGE_GAIN = 3.0
SIGNATURE = 0.15  # size of the planted rendering effect

# planted under-trained regions (used by the training sampler and the tests)
OCCLUSION_BOX = {"pose_y": (30.0, 90.0), "pose_z": (5.0, 40.0)}
SHADOW_BOX = {"illumination": (0.3, 0.6), "pose_x": (40.0 / 3.0, 40.0), "pose_y": (-90.0, -30.0)}


class ReferenceSimulator(Simulator):
    """The bundled pose-classification scenario (see module docstring)."""

    name = "reference"

    def __init__(self, input_dim: int = 32, render_delay: float = 0.0, seed: int = 20231):
        super().__init__(ScenarioConfig(REFERENCE_SPACE, input_dim, 9, render_delay=render_delay))
        rng = np.random.default_rng(seed)
        d = input_dim
        if d < 5:
            raise ValueError("the reference scenario needs input_dim >= 5")
        self._freq = rng.normal(size=(d - 4, 3)) * np.array([1.6, 1.6, 0.8])
        self._phase = rng.uniform(0, 2 * np.pi, size=d - 4)
        self._lamp = rng.normal(size=(d - 4, 2)) * 0.25
        self._face = rng.normal(size=(3, d - 4)) * 0.15
        self._occlusion = rng.normal(size=d - 4) * SIGNATURE
        self._shadow = rng.normal(size=d - 4) * SIGNATURE
        sx, sy, sz = (REFERENCE_SPACE.slot(n).start for n in ("pose_x", "pose_y", "pose_z"))
        self._pose_slots = [sx, sy, sz]
        self._illum = REFERENCE_SPACE.slot("illumination").start
        self._lamp_slots = [REFERENCE_SPACE.slot("lamp_x").start, REFERENCE_SPACE.slot("lamp_y").start]
        self._face_slot = REFERENCE_SPACE.slot("face_model")

    def pose_label(self, pose_x, pose_y) -> np.ndarray:
        """Nine-way label: ``3 * vertical_bin + horizontal_bin``."""
        vx = np.clip(np.searchsorted(POSE_X_EDGES[1:3], pose_x, side="right"), 0, 2)
        hy = np.clip(np.searchsorted(POSE_Y_EDGES[1:3], pose_y, side="right"), 0, 2)
        return (3 * vx + hy).astype(int)

    def render_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.space.dim:
            raise ContractError(f"expected {self.space.dim} encoded components, got {X.shape[1]}")
        if self.config.render_delay:
            time.sleep(self.config.render_delay * len(X))
        px, py, pz = (X[:, s] for s in self._pose_slots)
        illum = X[:, self._illum]
        occl, shadow = self._gates(px, py, pz, illum)
        # inside the planted regions the head renders as if closer to frontal,
        # plus a faint signature that makes the region learnable
        ax, ay = px * (1.0 - shadow), py * (1.0 - occl)
        # sharp cues at the label bin edges keep errors away from the boundaries
        edges = np.stack([ax - POSE_X_EDGES[1], ax - POSE_X_EDGES[2], ay - POSE_Y_EDGES[1], ay - POSE_Y_EDGES[2]], axis=1)
        u = np.stack([ax / 40.0, ay / 90.0, pz / 40.0], axis=1)
        feats = np.empty((len(X), self.config.input_dim))
        feats[:, :4] = EDGE_GAIN * np.tanh(edges / EDGE_WIDTH)
        feats[:, 4:] = illum[:, None] * np.cos(np.pi * u @ self._freq.T * 0.5 + self._phase)
        rest = feats[:, 4:]
        rest += X[:, self._lamp_slots] @ self._lamp.T
        rest += X[:, self._face_slot] @ self._face
        rest += occl[:, None] * self._occlusion + shadow[:, None] * self._shadow
        return feats, self.pose_label(px, py)

    @staticmethod
    def _gates(px, py, pz, illum):
        occl = _sigmoid((py - 30.0) / 0.5) * _sigmoid((pz - 5.0) / 0.5)
        shadow = _sigmoid((0.6 - illum) / 0.005) * _sigmoid((px - 40.0 / 3.0) / 0.5) * _sigmoid((-30.0 - py) / 0.5)
        return occl, shadow

    def in_planted_region(self, X) -> np.ndarray:
        """Boolean mask of encoded chromosomes inside either planted box."""
        X = np.atleast_2d(X)
        masks = []
        for box in (OCCLUSION_BOX, SHADOW_BOX):
            m = np.ones(len(X), dtype=bool)
            for name, (lo, hi) in box.items():
                v = X[:, self.space.slot(name).start]
                m &= (v >= lo) & (v <= hi)
            masks.append(m)
        return masks[0] | masks[1]

    def training_sampler(self, weight_inside: float = 0.002) -> Callable:
        """Sampler that keeps planted-region draws with probability ``weight_inside``."""

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            out = []
            while sum(len(o) for o in out) < n:
                X = self.space.random(rng, max(64, 2 * n))
                keep = ~self.in_planted_region(X) | (rng.random(len(X)) < weight_inside)
                out.append(X[keep])
            return np.vstack(out)[:n]

        return sample

    def field_sampler(self) -> Callable:
        """Shifted "field" distribution: central poses, bright scenes.

        Plays the role of real-world data: it rarely reaches extreme poses and,
        like the simulator pool, almost never shows the planted conditions.
        """

        def draw(rng, n):
            X = self.space.random(rng, n)
            for name, sd in (("pose_x", 0.35), ("pose_y", 0.35), ("pose_z", 0.35)):
                spec = self.space.spec(name)
                half = (spec.upper - spec.lower) / 2
                mid = (spec.upper + spec.lower) / 2
                v = rng.normal(0, sd, size=n)
                X[:, self.space.slot(name).start] = mid + half * np.clip(v, -1, 1)
            X[:, self._illum] = rng.uniform(0.8, 1.5, size=n)
            return X

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            out = []
            while sum(len(o) for o in out) < n:
                X = draw(rng, max(64, 2 * n))
                out.append(X[~self.in_planted_region(X)])
            return np.vstack(out)[:n]

        return sample


SCENARIOS: dict[str, Callable[..., Simulator]] = {"reference": ReferenceSimulator}


def make_simulator(name: str, **kwargs) -> Simulator:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
    return factory(**kwargs)


def samples_to_csv(sim: Simulator, X: np.ndarray) -> str:
    """Chromosome columns, then rendered input columns, then the label."""
    inputs, labels = sim.render_batch(X)
    extra = {f"x{j}": [repr(float(v)) for v in inputs[:, j]] for j in range(inputs.shape[1])}
    extra["label"] = [str(int(v)) for v in labels]
    return sim.space.to_csv(X, extra)
