"""Boolean expressions over simulator parameters.

Text form::

    expr    := conj ("||" conj)*
    conj    := unary ("&" unary)*
    unary   := "!" unary | "(" expr ")" | atom | "true"
    atom    := name op number | name "=" level        op in <, <=, >, >=

Atoms are emitted parenthesized, e.g. ``(pose_y > 50.34) & !(pose_z <= 60)``.
The parser also accepts bare atoms and nested parentheses so hand-written
expressions round-trip.  ``p != level`` is held as its own operator and
rendered as ``!(p = level)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..space import CATEGORICAL, INTEGER, ParameterSpace

NUMERIC_OPS = ("<", "<=", ">", ">=")
LEVEL_OPS = ("=", "!=")


class ExpressionError(ValueError):
    pass


class UnsatisfiableError(ExpressionError):
    pass


def format_number(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


@dataclass(frozen=True)
class Atom:
    name: str
    op: str
    value: Union[float, str]

    def __post_init__(self):
        if self.op in NUMERIC_OPS:
            object.__setattr__(self, "value", float(self.value))
        elif self.op in LEVEL_OPS:
            if not isinstance(self.value, str):
                raise ExpressionError(f"level comparison needs a level name, got {self.value!r}")
        else:
            raise ExpressionError(f"unknown operator {self.op!r}")

    def render(self) -> str:
        if self.op == "!=":
            return f"!({self.name} = {self.value})"
        v = self.value if self.op == "=" else format_number(self.value)
        return f"({self.name} {self.op} {v})"

    def plain(self) -> str:
        """Unparenthesized form used in decision-list listings."""
        v = self.value if isinstance(self.value, str) else format_number(self.value)
        return f"{self.name} {self.op} {v}"

    def negated(self) -> "Atom":
        flip = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "=": "!=", "!=": "="}
        return Atom(self.name, flip[self.op], self.value)


@dataclass(frozen=True)
class Not:
    child: "Node"

    def render(self) -> str:
        c = self.child
        if isinstance(c, Atom) and c.op != "!=":
            return "!" + c.render()
        return f"!({c.render()})"


@dataclass(frozen=True)
class And:
    items: tuple

    def render(self) -> str:
        if not self.items:
            return "true"
        return " & ".join(f"({i.render()})" if isinstance(i, Or) else i.render() for i in self.items)


@dataclass(frozen=True)
class Or:
    items: tuple

    def render(self) -> str:
        if not self.items:
            raise ExpressionError("empty disjunction")
        return " || ".join(f"({i.render()})" if isinstance(i, (And, Or)) else i.render() for i in self.items)


Node = Union[Atom, Not, And, Or]
TRUE = And(())


def conj(*items) -> Node:
    """Flattened conjunction; a single item is returned as is."""
    flat = []
    for i in items:
        flat.extend(i.items if isinstance(i, And) else (i,))
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def disj(*items) -> Node:
    flat = []
    for i in items:
        flat.extend(i.items if isinstance(i, Or) else (i,))
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def render(node: Node) -> str:
    return node.render()


def atoms(node: Node):
    if isinstance(node, Atom):
        yield node
    elif isinstance(node, Not):
        yield from atoms(node.child)
    else:
        for i in node.items:
            yield from atoms(i)


# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<op><=|>=|!=|\|\||[<>=!&()])|(?P<name>[A-Za-z_][A-Za-z0-9_]*))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ExpressionError(f"expected {value or 'a token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] is not None:
            raise ExpressionError(f"trailing input at token {self.peek()[1]!r}")
        return node

    def expr(self):
        items = [self.conj()]
        while self.peek()[1] == "||":
            self.take("||")
            items.append(self.conj())
        return disj(*items)

    def conj(self):
        items = [self.unary()]
        while self.peek()[1] == "&":
            self.take("&")
            items.append(self.unary())
        return conj(*items)

    def unary(self):
        kind, val = self.peek()
        if val == "!":
            self.take("!")
            inner = self.unary()
            if isinstance(inner, Atom) and inner.op == "=":
                return Atom(inner.name, "!=", inner.value)
            return Not(inner)
        if val == "(":
            self.take("(")
            node = self.expr()
            self.take(")")
            return node
        if kind == "name" and val == "true" and self.peek(1)[0] != "op":
            self.take()
            return TRUE
        if kind == "name":
            return self.atom()
        raise ExpressionError(f"unexpected token {val!r}")

    def atom(self):
        _, name = self.take()
        kind, op = self.take()
        if op not in NUMERIC_OPS + LEVEL_OPS:
            raise ExpressionError(f"expected a comparison after {name!r}, got {op!r}")
        kind, val = self.take()
        if op in LEVEL_OPS:
            return Atom(name, op, val)
        if kind != "num":
            raise ExpressionError(f"expected a number after {name} {op}, got {val!r}")
        return Atom(name, op, float(val))


def parse(text: str) -> Node:
    return _Parser(text).parse()


# evaluation


def feature_matrix(space: ParameterSpace, X) -> np.ndarray:
    """One column per parameter: numeric value (integers rounded) or categorical level index."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != space.dim:
        raise ExpressionError(f"expected {space.dim} encoded components, got {X.shape[1]}")
    cols = []
    for spec in space.specs:
        sl = space.slot(spec.name)
        if spec.kind == CATEGORICAL:
            cols.append(np.argmax(X[:, sl], axis=1).astype(float))
        elif spec.kind == INTEGER:
            cols.append(np.clip(np.rint(X[:, sl.start]), np.ceil(spec.lower), np.floor(spec.upper)))
        else:
            cols.append(X[:, sl.start])
    return np.column_stack(cols) if cols else np.empty((len(X), 0))


def _atom_mask(atom: Atom, space: ParameterSpace, V: np.ndarray) -> np.ndarray:
    try:
        k = space.names.index(atom.name)
    except ValueError:
        raise ExpressionError(f"unknown parameter {atom.name!r}") from None
    spec = space.specs[k]
    col = V[:, k]
    if atom.op in LEVEL_OPS:
        if spec.kind != CATEGORICAL:
            raise ExpressionError(f"{atom.name} is not categorical")
        if atom.value not in spec.levels:
            raise ExpressionError(f"{atom.value!r} is not a level of {atom.name}")
        eq = col == spec.levels.index(atom.value)
        return eq if atom.op == "=" else ~eq
    if spec.kind == CATEGORICAL:
        raise ExpressionError(f"{atom.name} is categorical; numeric comparison not allowed")
    v = atom.value
    return {"<": col < v, "<=": col <= v, ">": col > v, ">=": col >= v}[atom.op]


def evaluate_features(node: Node, space: ParameterSpace, V: np.ndarray) -> np.ndarray:
    if isinstance(node, Atom):
        return _atom_mask(node, space, V)
    if isinstance(node, Not):
        return ~evaluate_features(node.child, space, V)
    if isinstance(node, And):
        out = np.ones(len(V), dtype=bool)
        for i in node.items:
            out &= evaluate_features(i, space, V)
        return out
    out = np.zeros(len(V), dtype=bool)
    for i in node.items:
        out |= evaluate_features(i, space, V)
    return out


def evaluate(node: Node, space: ParameterSpace, X) -> np.ndarray:
    """Boolean mask over a batch of encoded chromosomes."""
    return evaluate_features(node, space, feature_matrix(space, X))


# sampling


def _tighten(space: ParameterSpace, node: Node):
    """Per-parameter sampling ranges implied by the top-level atoms of a conjunction.

    Returns ``(lo, hi, allowed_levels)`` dicts, or None when a range is empty.
    Other constraints are left to rejection.
    """
    lo = {s.name: s.lower for s in space.specs if s.kind != CATEGORICAL}
    hi = {s.name: s.upper for s in space.specs if s.kind != CATEGORICAL}
    levels = {s.name: set(s.levels) for s in space.specs if s.kind == CATEGORICAL}
    items = node.items if isinstance(node, And) else (node,)
    for it in items:
        a = it.child.negated() if isinstance(it, Not) and isinstance(it.child, Atom) else it
        if not isinstance(a, Atom):
            continue
        if a.op in LEVEL_OPS:
            if a.name in levels:
                levels[a.name] = {a.value} & levels[a.name] if a.op == "=" else levels[a.name] - {a.value}
        elif a.name in lo:
            if a.op in ("<", "<="):
                hi[a.name] = min(hi[a.name], a.value)
            else:
                lo[a.name] = max(lo[a.name], a.value)
    if any(lo[k] > hi[k] for k in lo) or any(not v for v in levels.values()):
        return None
    return lo, hi, levels


def _draw(space: ParameterSpace, bounds, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi, levels = bounds
    X = np.zeros((n, space.dim))
    for spec in space.specs:
        sl = space.slot(spec.name)
        if spec.kind == CATEGORICAL:
            allowed = sorted(spec.levels.index(l) for l in levels[spec.name])
            pick = rng.choice(allowed, size=n)
            X[np.arange(n), sl.start + pick] = 1.0
        else:
            if spec.kind == INTEGER:
                a, b = int(np.ceil(lo[spec.name])), int(np.floor(hi[spec.name]))
                if a > b:
                    raise UnsatisfiableError(f"no integer value of {spec.name} in [{lo[spec.name]}, {hi[spec.name]}]")
                X[:, sl.start] = rng.integers(a, b + 1, size=n)
            else:
                X[:, sl.start] = rng.uniform(lo[spec.name], hi[spec.name], size=n)
    return X


def sample_conjunction(space: ParameterSpace, node: Node, n: int, rng: np.random.Generator,
                       guard: Node | None = None, min_rate: float = 1e-5,
                       batch: int = 10_000, max_draws: int = 2_000_000) -> np.ndarray:
    """``n`` chromosomes satisfying ``node`` (and ``guard``) by rejection within the tightened box."""
    full = conj(guard, node) if guard is not None else node
    bounds = _tighten(space, full)
    if bounds is None:
        raise UnsatisfiableError(f"empty range for {render(node)}")
    got, draws = [], 0
    count = 0
    while count < n:
        X = _draw(space, bounds, batch, rng)
        draws += batch
        ok = X[evaluate(full, space, X)]
        got.append(ok)
        count += len(ok)
        if draws >= 10 * batch and count / draws < min_rate or draws >= max_draws and count < n:
            raise UnsatisfiableError(
                f"acceptance rate {count / draws:.2e} after {draws} draws for {render(node)}"
            )
    return np.vstack(got)[:n]
