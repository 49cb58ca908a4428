import itertools
from fractions import Fraction
from math import comb

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from rcclens.space import distance_matrix
from rcclens.stats import (
    MetricSeries,
    comparison_row,
    fisher_exact,
    mann_whitney_u,
    population_diversity,
    rows_to_csv,
    vargha_delaney_a12,
    vrr,
)


def brute_u_pvalue(a, b):
    """Enumerate every split of the pooled sample into groups of |a| and |b|."""
    pooled = np.concatenate([a, b]).astype(float)
    n1, n = len(a), len(a) + len(b)

    def u_of(idx):
        x = pooled[list(idx)]
        y = np.delete(pooled, list(idx))
        return sum((xi > yj) + 0.5 * (xi == yj) for xi in x for yj in y)

    mu = n1 * len(b) / 2
    u_obs = u_of(range(n1))
    splits = list(itertools.combinations(range(n), n1))
    hits = sum(abs(u_of(s) - mu) >= abs(u_obs - mu) - 1e-9 for s in splits)
    return hits / len(splits)


def brute_fisher(t):
    (a, b), (c, d) = t
    r1, r2, c1 = a + b, c + d, a + c
    n = r1 + r2
    probs = {x: Fraction(comb(r1, x) * comb(r2, c1 - x), comb(n, c1))
             for x in range(max(0, c1 - r2), min(r1, c1) + 1)}
    return float(sum(p for p in probs.values() if p <= probs[a]))


def brute_a12(a, b):
    return sum(Fraction(1) if x > y else Fraction(1, 2) if x == y else 0 for x in a for y in b) / (len(a) * len(b))


def test_u_test_examples():
    assert mann_whitney_u([1, 2, 3], [10, 11, 12]) == pytest.approx(0.1)
    assert mann_whitney_u([1, 2, 3, 4], [1, 2, 3, 4]) > 0.9
    assert mann_whitney_u([5, 5], [5, 5, 5]) == 1.0
    with pytest.raises(ValueError):
        mann_whitney_u([], [1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=6), st.lists(st.integers(0, 6), min_size=1, max_size=6))
def test_u_test_matches_enumeration(a, b):
    if len(set(a + b)) == 1:
        return
    assert mann_whitney_u(a, b) == pytest.approx(brute_u_pvalue(np.array(a), np.array(b)), abs=1e-12)


def test_u_test_normal_approximation_matches_scipy(rng):
    a, b = rng.normal(size=30), rng.normal(0.5, size=25)
    ours = mann_whitney_u(a, b, exact=False)
    ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic").pvalue
    assert ours == pytest.approx(ref, rel=1e-9)


def test_a12_examples():
    # pairs (1,2) (1,3) (2,2) (2,3) score 0, 0, 0.5, 0
    assert vargha_delaney_a12([1, 2], [2, 3]) == 0.125
    assert vargha_delaney_a12([2, 3], [1, 2]) == 0.875
    assert vargha_delaney_a12([4, 4], [4, 4]) == 0.5
    assert vargha_delaney_a12([5, 6], [1, 2]) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=8), st.lists(st.integers(-3, 3), min_size=1, max_size=8))
def test_a12_matches_enumeration(a, b):
    assert vargha_delaney_a12(a, b) == float(brute_a12(a, b))
    assert vargha_delaney_a12(a, b) + vargha_delaney_a12(b, a) == pytest.approx(1.0)


def test_fisher_examples():
    assert fisher_exact([[5, 0], [0, 5]]) == pytest.approx(2 / 252, abs=1e-15)
    assert fisher_exact([[5, 0], [0, 5]]) == fisher_exact(np.transpose([[5, 0], [0, 5]]))
    assert fisher_exact([[2, 4], [4, 8]]) == pytest.approx(1.0)
    assert fisher_exact([[0, 0], [3, 4]]) == 1.0
    with pytest.raises(ValueError):
        fisher_exact([[1, -1], [0, 2]])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=4, max_size=4))
def test_fisher_matches_enumeration(cells):
    t = [cells[:2], cells[2:]]
    p = fisher_exact(t)
    if min(sum(cells[:2]), sum(cells[2:]), cells[0] + cells[2], cells[1] + cells[3]) == 0:
        assert p == 1.0
        return
    assert p == pytest.approx(brute_fisher(t), rel=1e-12)
    assert p == pytest.approx(scipy.stats.fisher_exact(t).pvalue, rel=1e-9)
    assert p == fisher_exact(np.transpose(t))


def test_vrr_examples(rng):
    r = rng.normal(size=1000)
    assert vrr(r, r) == 0.0
    half = r / np.sqrt(2)
    assert vrr(half, r) == pytest.approx(0.5)
    assert vrr(np.full(5, 3.0), r) == 1.0
    with pytest.raises(ValueError):
        vrr(r, np.ones(4))


def test_population_diversity(unit_space, rng):
    X = unit_space.random(rng, 3)
    assert population_diversity(unit_space, np.repeat(X[:1], 4, axis=0)) == 0.0
    assert population_diversity(unit_space, X[:2]) == pytest.approx(distance_matrix(unit_space, X[:1], X[1:2])[0, 0])
    D = distance_matrix(unit_space, X)
    assert population_diversity(unit_space, X) == pytest.approx((D[0, 1] + D[0, 2] + D[1, 2]) / 3)
    assert population_diversity(unit_space, X[:1]) == 0.0
    assert population_diversity(unit_space, np.empty((0, 2))) == 0.0


def test_metric_series_and_rows():
    s = MetricSeries([10, 20])
    s.add([0.1, 0.2])
    s.add([0.3, 0.4])
    assert np.allclose(s.final(), [0.2, 0.4])
    with pytest.raises(ValueError):
        s.add([1.0])
    row = comparison_row("x", [1, 2, 3], [1, 2, 3])
    assert row["a12"] == 0.5 and row["p_value"] > 0.05
    text = rows_to_csv([{"a": 1, "b": 0.5}, {"a": 2, "c": "z"}])
    assert text.splitlines() == ["a,b,c", "1,0.5,", "2,,z"]
    assert rows_to_csv([]) == ""
