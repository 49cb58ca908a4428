"""Simulator parameter domain, chromosomes and the distance between them.

A chromosome is stored in *encoded* form: continuous and integer parameters
take one raw-valued slot each, categorical parameters take a one-hot block
with one slot per level.  All evolutionary operators work on encoded arrays;
:class:`Chromosome` is the validated, immutable boundary object.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a value lies outside its parameter domain."""


CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
_KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    lower: float = 0.0
    upper: float = 1.0
    kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValueError(f"parameter name {self.name!r} is not an identifier")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "levels", tuple(self.levels))
            if len(self.levels) < 2:
                raise ValueError(f"categorical {self.name!r} needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"categorical {self.name!r} has duplicate levels")
            for level in self.levels:
                if not level.isidentifier():
                    raise ValueError(f"level {level!r} of {self.name!r} is not an identifier")
            object.__setattr__(self, "lower", 0.0)
            object.__setattr__(self, "upper", 1.0)
        elif not float(self.lower) < float(self.upper):
            raise ValueError(f"{self.name!r}: lower must be < upper")

    @property
    def width(self) -> int:
        """Number of encoded slots this parameter occupies."""
        return len(self.levels) if self.kind == CATEGORICAL else 1


class ParameterSpace:
    """Ordered collection of :class:`ParameterSpec`.

    The order fixes the component positions of every encoded vector.
    """

    def __init__(self, specs: Iterable[ParameterSpec]):
        self.specs: tuple[ParameterSpec, ...] = tuple(specs)
        if not self.specs:
            raise ValueError("a parameter space needs at least one parameter")
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self._slices: dict[str, slice] = {}
        start = 0
        for s in self.specs:
            self._slices[s.name] = slice(start, start + s.width)
            start += s.width
        self.dim = start
        lo = np.zeros(self.dim)
        hi = np.ones(self.dim)
        for s in self.specs:
            if s.kind != CATEGORICAL:
                sl = self._slices[s.name]
                lo[sl] = s.lower
                hi[sl] = s.upper
        self.lower = lo
        self.upper = hi
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)
        self._categorical_mask = np.zeros(self.dim, dtype=bool)
        for s in self.specs:
            if s.kind == CATEGORICAL:
                self._categorical_mask[self._slices[s.name]] = True

    def __repr__(self):
        return f"ParameterSpace({[s.name for s in self.specs]})"

    def __eq__(self, other):
        return isinstance(other, ParameterSpace) and self.specs == other.specs

    def __hash__(self):
        return hash(self.specs)

    def __len__(self):
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def spec(self, name: str) -> ParameterSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(name)

    def slot(self, name: str) -> slice:
        return self._slices[name]

    # -- encoding ---------------------------------------------------------

    def encode(self, raw: dict | Sequence) -> np.ndarray:
        """Encode raw parameter values (by name or in order) into a vector."""
        if not isinstance(raw, dict):
            raw = dict(zip(self.names, raw))
        out = np.zeros(self.dim)
        for s in self.specs:
            if s.name not in raw:
                raise KeyError(f"missing value for parameter {s.name!r}")
            v = raw[s.name]
            sl = self._slices[s.name]
            if s.kind == CATEGORICAL:
                if v not in s.levels:
                    raise DomainError(f"{s.name}: unknown level {v!r}")
                out[sl.start + s.levels.index(v)] = 1.0
            else:
                out[sl] = float(v)
        return out

    def decode(self, values: np.ndarray) -> dict:
        """Raw parameter values (integers rounded, categoricals as level names)."""
        values = np.asarray(values, dtype=float)
        out = {}
        for s in self.specs:
            block = values[self._slices[s.name]]
            if s.kind == CATEGORICAL:
                out[s.name] = s.levels[int(np.argmax(block))]
            elif s.kind == INTEGER:
                out[s.name] = int(np.clip(np.rint(block[0]), np.ceil(s.lower), np.floor(s.upper)))
            else:
                out[s.name] = float(block[0])
        return out

    def repair(self, X: np.ndarray) -> np.ndarray:
        """Clip to bounds and snap categorical blocks to one-hot (argmax).

        Works on a single vector or a 2-D batch; returns a new array.
        """
        X = np.clip(np.array(X, dtype=float), self.lower, self.upper)
        flat = X.reshape(-1, self.dim)
        for s in self.specs:
            if s.kind == CATEGORICAL:
                sl = self._slices[s.name]
                hot = np.argmax(flat[:, sl], axis=1)
                flat[:, sl] = 0.0
                flat[np.arange(len(flat)), sl.start + hot] = 1.0
        return X

    def validate(self, X: np.ndarray) -> None:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise DomainError(f"expected {self.dim} encoded components, got {X.shape[-1]}")
        if not np.all(np.isfinite(X)):
            raise DomainError("non-finite chromosome component")
        if np.any(X < self.lower) or np.any(X > self.upper):
            raise DomainError("chromosome component out of bounds")
        flat = X.reshape(-1, self.dim)
        for s in self.specs:
            if s.kind == CATEGORICAL:
                block = flat[:, self._slices[s.name]]
                if not (np.all((block == 0) | (block == 1)) and np.all(block.sum(axis=1) == 1)):
                    raise DomainError(f"{s.name}: categorical block is not one-hot")

    # -- normalization ----------------------------------------------------

    def normalize(self, X: np.ndarray) -> np.ndarray:
        """Affine map of every non-categorical slot onto [0, 1].

        One-hot blocks pass through unchanged.  Accepts a vector or a batch.
        """
        X = np.asarray(X, dtype=float)
        self.validate(X)
        return (X - self.lower) / (self.upper - self.lower)

    def denormalize(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        return self.lower + U * (self.upper - self.lower)

    def random(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Uniform encoded sample(s); categoricals uniform over levels."""
        m = 1 if n is None else n
        X = rng.uniform(self.lower, self.upper, size=(m, self.dim))
        for s in self.specs:
            if s.kind == CATEGORICAL:
                sl = self._slices[s.name]
                hot = rng.integers(0, s.width, size=m)
                X[:, sl] = 0.0
                X[np.arange(m), sl.start + hot] = 1.0
        return X[0] if n is None else X

    # -- CSV --------------------------------------------------------------

    def to_csv(self, X: np.ndarray, extra: dict[str, Sequence] | None = None) -> str:
        """One row per chromosome, one column per raw parameter."""
        X = np.atleast_2d(X)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        extra = extra or {}
        writer.writerow(self.names + list(extra))
        for i, row in enumerate(X):
            raw = self.decode(row)
            cells = []
            for s in self.specs:
                v = raw[s.name] if s.kind != CONTINUOUS else float(row[self._slices[s.name]][0])
                cells.append(repr(v) if isinstance(v, float) else str(v))
            cells.extend(str(col[i]) for col in extra.values())
            writer.writerow(cells)
        return buf.getvalue()

    def from_csv(self, text: str) -> np.ndarray:
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for rec in reader:
            raw = {}
            for s in self.specs:
                raw[s.name] = rec[s.name] if s.kind == CATEGORICAL else float(rec[s.name])
            rows.append(self.encode(raw))
        return np.array(rows).reshape(-1, self.dim)


@dataclass(frozen=True, eq=False)
class Chromosome:
    """One concrete, validated configuration of a :class:`ParameterSpace`."""

    values: np.ndarray
    space: ParameterSpace = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise DomainError("chromosome values must be a vector")
        self.space.validate(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_raw(cls, space: ParameterSpace, raw: dict | Sequence) -> "Chromosome":
        return cls(space.encode(raw), space)

    def __eq__(self, other):
        return (
            isinstance(other, Chromosome)
            and self.space == other.space
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash(self.values.tobytes())

    def __getitem__(self, name: str):
        return self.space.decode(self.values)[name]

    def raw(self) -> dict:
        return self.space.decode(self.values)


def normalize(c: Chromosome) -> np.ndarray:
    """Unit-range image of a chromosome (one-hot blocks unchanged)."""
    return c.space.normalize(c.values)


def _with_bias(U: np.ndarray) -> np.ndarray:
    U = np.atleast_2d(U)
    return np.hstack([U, np.ones((U.shape[0], 1))])


def distance_matrix(space: ParameterSpace, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Pairwise chromosome distances between encoded batches ``A`` and ``B``.

    Distance is one minus the cosine similarity of the unit-range vectors,
    each extended with a constant 1.0 component so no vector has zero norm.
    """
    UA = _with_bias(space.normalize(A))
    UB = UA if B is None else _with_bias(space.normalize(B))
    UA = UA / np.linalg.norm(UA, axis=1, keepdims=True)
    UB = UB / np.linalg.norm(UB, axis=1, keepdims=True)
    D = 1.0 - UA @ UB.T
    # all components are >= 0 so cosine is in [0, 1]; clip rounding noise and
    # snap near-zero values so identical chromosomes are exactly 0 apart
    D = np.clip(D, 0.0, 1.0)
    D[D < 1e-12] = 0.0
    return D


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """``1 - cos(u, v)`` for already-normalized vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine distance undefined for a zero vector")
    return float(min(1.0, max(0.0, 1.0 - np.dot(u, v) / (nu * nv))))


def chromosome_distance(i: Chromosome, j: Chromosome) -> float:
    if i.space != j.space:
        raise DomainError("chromosomes belong to different parameter spaces")
    return float(distance_matrix(i.space, i.values[None], j.values[None])[0, 0])


def random_chromosome(space: ParameterSpace, rng: np.random.Generator) -> Chromosome:
    return Chromosome(space.random(rng), space)
