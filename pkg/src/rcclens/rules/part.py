"""PART decision lists and their compilation into unsafe-region expressions.

Trees follow C4.5: binary splits (numeric ``<=``/``>`` at midpoints between
adjacent observed values, categorical ``=``/``!=`` one level against the
rest), gain ratio restricted to candidates with at least average gain,
minimum leaf support 2 and pessimistic pruning at confidence 0.25.  PART
grows a pruned tree on the remaining points, turns its best-supported leaf
into a rule, drops the points it covers and repeats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta
from sklearn.base import BaseEstimator, ClassifierMixin

from ..space import CATEGORICAL, ParameterSpace
from .expression import (
    TRUE,
    Atom,
    ExpressionError,
    Node,
    Not,
    UnsatisfiableError,
    conj,
    disj,
    evaluate,
    evaluate_features,
    feature_matrix,
    parse,
    sample_conjunction,
)

ERROR = "DNN-error"
CORRECT = "DNN-correct"
CLASSES = (CORRECT, ERROR)  # index 1 is the error class


class EmptyExpressionError(ExpressionError):
    """The decision list predicts no failures, so there is nothing to characterize."""


@dataclass(frozen=True)
class Rule:
    conditions: tuple  # of Atom; empty for the default rule
    prediction: str

    def __post_init__(self):
        if self.prediction not in CLASSES:
            raise ValueError(f"unknown class {self.prediction!r}")
        object.__setattr__(self, "conditions", tuple(self.conditions))

    @property
    def is_default(self) -> bool:
        return not self.conditions

    def condition(self) -> Node:
        return conj(*self.conditions) if self.conditions else TRUE

    def line(self) -> str:
        lhs = " & ".join(a.plain() for a in self.conditions) if self.conditions else "(default)"
        return f"{lhs} : class={self.prediction}"


@dataclass
class DecisionList:
    rules: list  # ordered; last one is the default rule
    flags: set = field(default_factory=set)

    def __post_init__(self):
        if not self.rules or not self.rules[-1].is_default:
            raise ValueError("a decision list must end with a default rule")
        if any(r.is_default for r in self.rules[:-1]):
            raise ValueError("only the last rule may be a default rule")

    @property
    def default(self) -> Rule:
        return self.rules[-1]

    def predict_features(self, space: ParameterSpace, V: np.ndarray) -> np.ndarray:
        out = np.full(len(V), self.default.prediction, dtype=object)
        free = np.ones(len(V), dtype=bool)
        for r in self.rules[:-1]:
            hit = free & evaluate_features(r.condition(), space, V)
            out[hit] = r.prediction
            free &= ~hit
        return out

    def predict(self, space: ParameterSpace, X) -> np.ndarray:
        """Class name per encoded chromosome (first matching rule)."""
        return self.predict_features(space, feature_matrix(space, X))

    def predicts_error(self, space: ParameterSpace, X) -> np.ndarray:
        return self.predict(space, X) == ERROR

    def to_text(self) -> str:
        return "\n".join(r.line() for r in self.rules) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DecisionList":
        rules = []
        for raw in text.strip().splitlines():
            lhs, _, rhs = raw.rpartition(":")
            pred = rhs.strip().removeprefix("class=")
            lhs = lhs.strip()
            if lhs == "(default)":
                rules.append(Rule((), pred))
                continue
            node = parse(lhs)
            items = node.items if hasattr(node, "items") else (node,)
            if not all(isinstance(a, Atom) for a in items):
                raise ExpressionError(f"rule conditions must be plain comparisons: {lhs!r}")
            rules.append(Rule(items, pred))
        return cls(rules)


# C4.5 tree


@dataclass
class _Node:
    counts: np.ndarray  # per class, CLASSES order
    n: int
    attr: int = -1
    threshold: float = 0.0  # numeric split value or categorical level index
    categorical: bool = False
    left: "_Node | None" = None  # <= / =
    right: "_Node | None" = None  # > / !=

    @property
    def leaf(self) -> bool:
        return self.left is None

    @property
    def majority(self) -> int:
        # ties go to the error class
        return int(self.counts[1] >= self.counts[0])

    @property
    def errors(self) -> int:
        return int(self.n - self.counts[self.majority])


def _entropy(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def _split_info(nl, nr) -> float:
    return _entropy([nl, nr])


def _best_splits(V, y, kinds, min_leaf):
    """Best binary split per attribute as (gain, gain_ratio, attr, threshold, categorical)."""
    n = len(y)
    base = _entropy(np.bincount(y, minlength=2))
    out = []
    for a, cat in enumerate(kinds):
        col = V[:, a]
        best = None
        if cat:
            candidates = [(col == v, v) for v in np.unique(col)]
        else:
            order = np.argsort(col, kind="stable")
            cs, ys = col[order], y[order]
            pos = np.cumsum(ys)
            candidates = []
            for i in range(min_leaf - 1, n - min_leaf):
                if cs[i] == cs[i + 1]:
                    continue
                candidates.append((i + 1, pos[i], (cs[i] + cs[i + 1]) / 2.0))
        for cand in candidates:
            if cat:
                mask, v = cand
                nl = int(mask.sum())
                pl = int(y[mask].sum())
                thr = float(v)
            else:
                nl, pl, thr = cand
                pl = int(pl)
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            pr = int(y.sum()) - pl
            h = nl / n * _entropy([nl - pl, pl]) + nr / n * _entropy([nr - pr, pr])
            gain = base - h
            if best is None or gain > best[0] + 1e-12:
                best = (gain, thr, nl, nr)
        if best is not None and best[0] > 1e-12:
            gain, thr, nl, nr = best
            out.append((gain, gain / _split_info(nl, nr), a, thr, cat))
    return out


def _grow(V, y, kinds, min_leaf) -> _Node:
    node = _Node(np.bincount(y, minlength=2), len(y))
    if node.counts.min() == 0 or len(y) < 2 * min_leaf:
        return node
    splits = _best_splits(V, y, kinds, min_leaf)
    if not splits:
        return node
    avg = np.mean([s[0] for s in splits])
    eligible = [s for s in splits if s[0] >= avg - 1e-12]
    gain, ratio, a, thr, cat = max(eligible, key=lambda s: (s[1], s[0], -s[2]))
    mask = V[:, a] == thr if cat else V[:, a] <= thr
    node.attr, node.threshold, node.categorical = a, thr, cat
    node.left = _grow(V[mask], y[mask], kinds, min_leaf)
    node.right = _grow(V[~mask], y[~mask], kinds, min_leaf)
    return node


def pessimistic_errors(n: int, e: int, cf: float = 0.25) -> float:
    """Upper ``cf`` confidence bound on the error count of a leaf (exact binomial)."""
    if n == 0:
        return 0.0
    if e >= n:
        return float(n)
    return float(n * beta.ppf(1.0 - cf, e + 1, n - e))


def _prune(node: _Node, cf: float) -> float:
    """Bottom-up subtree replacement; returns the estimated errors of the (pruned) subtree."""
    leaf_est = pessimistic_errors(node.n, node.errors, cf)
    if node.leaf:
        return leaf_est
    sub_est = _prune(node.left, cf) + _prune(node.right, cf)
    if leaf_est <= sub_est + 0.1:
        node.left = node.right = None
        return leaf_est
    return sub_est


def _leaves(node: _Node, path=()):
    if node.leaf:
        yield node, path
        return
    yield from _leaves(node.left, path + ((node, True),))
    yield from _leaves(node.right, path + ((node, False),))


def _path_atoms(space: ParameterSpace, path) -> tuple:
    """Conditions of a root-to-leaf path, keeping only the tightest numeric bound per side."""
    lower, upper, eq, neq = {}, {}, {}, []
    for node, left in path:
        spec = space.specs[node.attr]
        if node.categorical:
            level = spec.levels[int(node.threshold)]
            if left:
                eq[spec.name] = level
            else:
                neq.append((spec.name, level))
        elif left:
            upper[spec.name] = min(upper.get(spec.name, np.inf), node.threshold)
        else:
            lower[spec.name] = max(lower.get(spec.name, -np.inf), node.threshold)
    out = []
    for spec in space.specs:
        name = spec.name
        if name in eq:
            out.append(Atom(name, "=", eq[name]))
        else:
            out.extend(Atom(name, "!=", lv) for nm, lv in neq if nm == name)
        if name in lower:
            out.append(Atom(name, ">", lower[name]))
        if name in upper:
            out.append(Atom(name, "<=", upper[name]))
    return tuple(out)


def learn_part(space: ParameterSpace, X, failing, min_leaf: int = 2, confidence: float = 0.25) -> DecisionList:
    """Decision list separating failure-inducing (``failing`` true) from passing chromosomes."""
    V = feature_matrix(space, X)
    y = np.asarray(failing, dtype=bool).astype(int)
    if len(y) != len(V):
        raise ValueError("labels and chromosomes differ in length")
    if len(y) == 0:
        raise ValueError("no points to learn from")
    kinds = [s.kind == CATEGORICAL for s in space.specs]
    flags = set()
    if len(y) < 10:
        flags.add("small_sample")
    global_major = CLASSES[int(y.sum() * 2 >= len(y))]
    if y.min() == y.max():
        flags.add("single_class")
        return DecisionList([Rule((), CLASSES[y[0]])], flags)
    rules = []
    remaining = np.ones(len(y), dtype=bool)
    while remaining.sum() >= min_leaf:
        Vr, yr = V[remaining], y[remaining]
        if yr.min() == yr.max():
            break
        root = _grow(Vr, yr, kinds, min_leaf)
        _prune(root, confidence)
        if root.leaf:
            break
        leaf, path = max(_leaves(root), key=lambda lp: lp[0].n)  # first leaf wins ties
        rule = Rule(_path_atoms(space, path), CLASSES[leaf.majority])
        covered = evaluate_features(rule.condition(), space, V) & remaining
        rules.append(rule)
        remaining &= ~covered
    left = y[remaining]
    if len(left):
        default = CLASSES[int(left.sum() * 2 >= len(left))]
    else:
        default = global_major
    rules.append(Rule((), default))
    return DecisionList(rules, flags)


# unsafe expressions


@dataclass(frozen=True)
class UnsafeExpression:
    """Mutually exclusive disjuncts plus box constraints on the parameters no rule mentions."""

    disjuncts: tuple
    box: tuple = ()

    def node(self) -> Node:
        body = disj(*self.disjuncts)
        return conj(*self.box, body) if self.box else body

    def render(self) -> str:
        return self.node().render()

    def __str__(self):
        return self.render()

    def evaluate(self, space: ParameterSpace, X) -> np.ndarray:
        return evaluate(self.node(), space, X)

    def disjunct_masks(self, space: ParameterSpace, X) -> np.ndarray:
        """(n, k) boolean: which disjunct each chromosome satisfies (box ignored)."""
        V = feature_matrix(space, X)
        return np.column_stack([evaluate_features(d, space, V) for d in self.disjuncts])

    def with_box(self, box: Sequence[Node]) -> "UnsafeExpression":
        return UnsafeExpression(self.disjuncts, tuple(box))


def compile_expression(dl: DecisionList, unsafe_X=None, space: ParameterSpace | None = None) -> UnsafeExpression:
    """One disjunct per error rule: negations of all earlier rules joined with its condition.

    With ``unsafe_X`` and ``space`` the result also carries the min/max box
    of the unsafe points over the parameters absent from every rule.
    """
    disjuncts, negs = [], []
    for r in dl.rules:
        if r.prediction == ERROR:
            disjuncts.append(conj(*negs, *r.conditions) if (negs or r.conditions) else TRUE)
        if not r.is_default:
            c = r.condition()
            negs.append(c.negated() if isinstance(c, Atom) and c.op in ("=", "!=") else Not(c))
    if not disjuncts:
        raise EmptyExpressionError("the decision list predicts no failures")
    expr = UnsafeExpression(tuple(disjuncts))
    if unsafe_X is not None:
        if space is None:
            raise ValueError("a parameter space is needed to compute the box")
        expr = expr.with_box(min_max_box(space, unsafe_X, dl))
    return expr


def min_max_box(space: ParameterSpace, unsafe_X, dl: DecisionList | None = None) -> tuple:
    """Range constraints, over the unsafe points, for the parameters no rule mentions."""
    V = feature_matrix(space, unsafe_X)
    if len(V) == 0:
        raise ValueError("the box needs at least one unsafe point")
    used = {a.name for r in (dl.rules if dl else ()) for a in r.conditions}
    box = []
    for k, spec in enumerate(space.specs):
        if spec.name in used:
            continue
        col = V[:, k]
        if spec.kind == CATEGORICAL:
            seen = sorted(set(col.astype(int)))
            if len(seen) < len(spec.levels):
                box.append(disj(*(Atom(spec.name, "=", spec.levels[i]) for i in seen)))
        else:
            box.append(Atom(spec.name, ">=", float(col.min())))
            box.append(Atom(spec.name, "<=", float(col.max())))
    return tuple(box)


def sample_expression(expr: UnsafeExpression, space: ParameterSpace, n: int, rng: np.random.Generator,
                      min_rate: float = 1e-5) -> np.ndarray:
    """``n`` chromosomes satisfying ``expr``, spread evenly over its satisfiable disjuncts.

    Each disjunct is sampled by rejection inside the parameter box implied
    by its own atoms and the expression's box.  Disjuncts whose box is empty
    are skipped; if none is satisfiable an :class:`UnsatisfiableError` is raised.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.empty((0, space.dim))
    guard = conj(*expr.box) if expr.box else None
    live, problems = [], []
    for d in expr.disjuncts:
        try:
            sample_conjunction(space, d, 1, rng, guard, min_rate)
            live.append(d)
        except UnsatisfiableError as exc:
            problems.append(str(exc))
    if not live:
        raise UnsatisfiableError("no satisfiable disjunct: " + "; ".join(problems))
    share = np.full(len(live), n // len(live))
    share[: n % len(live)] += 1
    parts = [sample_conjunction(space, d, int(k), rng, guard, min_rate) for d, k in zip(live, share) if k]
    return np.vstack(parts)


class PARTClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X_encoded, failing)`` learns a :class:`DecisionList`.

    ``predict`` returns booleans (True = failure predicted).
    """

    def __init__(self, space=None, min_leaf=2, confidence=0.25):
        self.space = space
        self.min_leaf = min_leaf
        self.confidence = confidence

    def fit(self, X, y):
        if self.space is None:
            raise ValueError("PARTClassifier needs a parameter space")
        y = np.asarray(y, dtype=bool)
        self.decision_list_ = learn_part(self.space, X, y, self.min_leaf, self.confidence)
        self.classes_ = np.array([False, True])
        return self

    def predict(self, X):
        return self.decision_list_.predicts_error(self.space, X)

    def expression(self, unsafe_X=None) -> UnsafeExpression:
        return compile_expression(self.decision_list_, unsafe_X, self.space if unsafe_X is not None else None)
