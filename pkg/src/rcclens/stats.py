"""Evaluation metrics and small-sample statistical tests."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .space import ParameterSpace, distance_matrix

EXACT_LIMIT = 400  # |a|*|b| up to which the U-test enumerates the null distribution


def population_diversity(space: ParameterSpace, X) -> float:
    """Mean pairwise chromosome distance; 0.0 for fewer than two individuals."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X) if X.size else 0
    if n < 2:
        return 0.0
    D = distance_matrix(space, X)
    iu = np.triu_indices(n, 1)
    return float(D[iu].mean())


def vrr(cluster_values, random_values) -> float:
    """Variance reduction rate ``1 - var(cluster) / var(random)`` (population variances)."""
    r = np.var(np.asarray(random_values, dtype=float))
    if r == 0.0:
        raise ValueError("random sample has zero variance")
    return float(1.0 - np.var(np.asarray(cluster_values, dtype=float)) / r)


def _u_statistic(a, b):
    r = rankdata(np.concatenate([a, b]))
    u = r[: len(a)].sum() - len(a) * (len(a) + 1) / 2.0
    return u, r


def _exact_u_pvalue(u: float, ranks: np.ndarray, n1: int) -> float:
    """Two-sided p by exact permutation of (mid)ranks.

    Counts subsets of size ``n1`` by their doubled rank sum with a DP over
    the pooled observations, so ties are handled exactly.
    """
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    # ways[k][s]: number of k-subsets with doubled rank sum s
    ways = [dict() for _ in range(n1 + 1)]
    ways[0][0] = 1
    for v in r2:
        for k in range(min(n1, len(ways) - 1), 0, -1):
            prev = ways[k - 1]
            cur = ways[k]
            for s, c in prev.items():
                cur[s + v] = cur.get(s + v, 0) + c
    dist = ways[n1]
    count = sum(dist.values())
    mean2 = n1 * total / len(r2)
    obs2 = 2 * u + n1 * (n1 + 1)  # doubled rank sum of the first sample
    dev = abs(obs2 - mean2)
    extreme = sum(c for s, c in dist.items() if abs(s - mean2) >= dev - 1e-9)
    return min(1.0, extreme / count)


def mann_whitney_u(a, b, exact: bool | None = None) -> float:
    """Two-sided Mann-Whitney U p-value.

    Exact permutation distribution when ``|a|*|b| <= 400`` (or ``exact=True``),
    otherwise the normal approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return 1.0
    u, ranks = _u_statistic(a, b)
    n1, n2 = len(a), len(b)
    if exact is None:
        exact = n1 * n2 <= EXACT_LIMIT
    if exact:
        return _exact_u_pvalue(u, ranks, n1)
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie = (counts ** 3 - counts).sum() / (n * (n - 1))
    sigma = math.sqrt(n1 * n2 / 12.0 * ((n + 1) - tie))
    mu = n1 * n2 / 2.0
    z = (abs(u - mu) - 0.5) / sigma
    return float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))


def vargha_delaney_a12(a, b) -> float:
    """Probability that a value from ``a`` exceeds one from ``b`` (ties count half)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    gt = (a[:, None] > b[None, :]).sum()
    eq = (a[:, None] == b[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(a) * len(b)))


def fisher_exact(table) -> float:
    """Two-sided Fisher exact test on a 2x2 table of counts.

    Sums the hypergeometric probabilities of all tables with the observed
    margins that are no more likely than the observed one.
    """
    t = np.asarray(table)
    if t.shape != (2, 2) or np.any(t < 0) or np.any(t != np.floor(t)):
        raise ValueError("expected a 2x2 table of nonnegative integer counts")
    (a, b), (c, d) = t.astype(int).tolist()
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    if min(r1, r2, c1, n - c1) == 0:
        return 1.0
    denom = math.comb(n, c1)

    def prob(x):
        return math.comb(r1, x) * math.comb(r2, c1 - x)

    obs = prob(a)
    lo, hi = max(0, c1 - r2), min(r1, c1)
    # integer comparison with a relative slack of 1e-7, as the usual implementations do
    num = sum(p for p in (prob(x) for x in range(lo, hi + 1)) if p <= obs * (1 + 1e-7))
    return float(min(1.0, num / denom))


@dataclass
class MetricSeries:
    """Per-checkpoint values for several runs; ``values[run][checkpoint]``."""

    checkpoints: list
    values: list = field(default_factory=list)

    def add(self, run_values: Sequence[float]):
        if len(run_values) != len(self.checkpoints):
            raise ValueError("run length does not match the checkpoints")
        self.values.append(list(map(float, run_values)))

    def at(self, checkpoint_index: int) -> np.ndarray:
        return np.array([v[checkpoint_index] for v in self.values])

    def final(self) -> np.ndarray:
        return self.at(len(self.checkpoints) - 1)


def comparison_row(name: str, ours, theirs) -> dict:
    ours, theirs = np.asarray(ours, dtype=float), np.asarray(theirs, dtype=float)
    return {
        "comparison": name,
        "avg_ours": float(ours.mean()),
        "std_ours": float(ours.std()),
        "avg_theirs": float(theirs.mean()),
        "std_theirs": float(theirs.std()),
        "p_value": mann_whitney_u(ours, theirs),
        "a12": vargha_delaney_a12(ours, theirs),
    }


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
