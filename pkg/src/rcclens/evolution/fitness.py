"""Fitness functions for the three Step-2 searches.

Array kernels (``*_matrix``/``*_values``) drive the search loops; the
per-individual functions are thin wrappers with the same semantics.

F1 (diversity within the cluster):
    rcc(i) <= 1 -> 1 - distance to the closest other population member
    rcc(i) >  1 -> rcc(i)
F2 (one objective per reference individual t, pushes towards failures):
    out of cluster                       -> 3 + rcc(i)
    closest reference is not t           -> 2 + d(i, t)
    closest is t, model correct          -> 1 + (1 - entropy(i))
    closest is t, model fails            -> d(i, t)
F3 (same shape, pushes towards passing inputs near the failures):
    closest is t, model correct          -> d(i, t)
    closest is t, model fails            -> 1 + entropy(i) + |1 - rcc(i)|
    closest reference is not t           -> 2 + d(i, t)
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..clustering import RootCauseCluster
from ..space import distance_matrix
from .evaluation import Individual
from .nsga import ContractError


def closest_reference(D: np.ndarray) -> np.ndarray:
    """Index of the closest reference per row of an (n, q) distance matrix; lowest index on ties."""
    return np.argmin(D, axis=1)


def f1_values(D: np.ndarray, rcc: np.ndarray, exclude: np.ndarray | None = None) -> np.ndarray:
    """F1 for n individuals against a population.

    ``D`` is the (n, s) chromosome distance matrix to the population;
    ``exclude`` gives, per row, a population column to leave out of the
    nearest-neighbour search (the individual itself for parents, the
    replacement candidate for offspring).
    """
    D = np.array(D, dtype=float, copy=True)
    rcc = np.asarray(rcc, dtype=float)
    if exclude is not None:
        D[np.arange(len(D)), exclude] = np.inf
    if D.shape[1] - (exclude is not None) < 1:
        raise ContractError("F1 needs at least one neighbour")
    sim = 1.0 - D.min(axis=1)
    return np.where(rcc <= 1.0, sim, rcc)


def f1_population(D: np.ndarray, rcc: np.ndarray) -> np.ndarray:
    """F1 of every population member (square ``D``) with itself excluded."""
    return f1_values(D, rcc, np.arange(len(D)))


def f2_matrix(D: np.ndarray, rcc: np.ndarray, failing: np.ndarray, entropy: np.ndarray) -> np.ndarray:
    """(n, q) F2 values; ``D`` holds distances to the q reference individuals."""
    D = np.asarray(D, dtype=float)
    if D.shape[1] == 0:
        raise ContractError("empty reference population")
    n, q = D.shape
    closest = closest_reference(D)
    is_t = closest[:, None] == np.arange(q)[None, :]
    inside = (np.asarray(rcc) <= 1.0)[:, None]
    fail = np.asarray(failing, dtype=bool)[:, None]
    unc = (1.0 + (1.0 - np.asarray(entropy)))[:, None]
    out = np.where(is_t, np.where(fail, D, np.broadcast_to(unc, D.shape)), 2.0 + D)
    return np.where(inside, out, 3.0 + np.asarray(rcc)[:, None])


def f3_matrix(D: np.ndarray, rcc: np.ndarray, failing: np.ndarray, entropy: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.shape[1] == 0:
        raise ContractError("empty reference population")
    n, q = D.shape
    closest = closest_reference(D)
    is_t = closest[:, None] == np.arange(q)[None, :]
    fail = np.asarray(failing, dtype=bool)[:, None]
    unc = (1.0 + np.asarray(entropy) + np.abs(1.0 - np.asarray(rcc)))[:, None]
    return np.where(is_t, np.where(fail, np.broadcast_to(unc, D.shape), D), 2.0 + D)


def f2_branch(D: np.ndarray, rcc, failing) -> np.ndarray:
    """Which F2 branch fires per (individual, objective): 0 fail/closest, 1 correct/closest, 2 not closest, 3 out."""
    n, q = D.shape
    is_t = closest_reference(D)[:, None] == np.arange(q)[None, :]
    fail = np.asarray(failing, dtype=bool)[:, None]
    b = np.where(is_t, np.where(fail, 0, 1), 2)
    return np.where((np.asarray(rcc) <= 1.0)[:, None], b, 3)


def f3_branch(D: np.ndarray, failing) -> np.ndarray:
    """F3 branch per (individual, objective): 0 correct/closest, 1 failing/closest, 2 not closest."""
    n, q = D.shape
    is_t = closest_reference(D)[:, None] == np.arange(q)[None, :]
    fail = np.asarray(failing, dtype=bool)[:, None]
    return np.where(is_t, np.where(fail, 1, 0), 2)


# per-individual API


def _dist_to(i: Individual, P: Sequence[Individual]) -> np.ndarray:
    space = i.chromosome.space
    return distance_matrix(space, i.chromosome.values[None], np.array([p.chromosome.values for p in P]))


def fitness_f1(i: Individual, C: RootCauseCluster, P: Sequence[Individual], exclude: int | None = None) -> float:
    """F1 of ``i`` against population ``P``.

    If ``i`` is itself in ``P`` (by identity) it is left out of the
    neighbour search; ``exclude`` additionally leaves out one index (the
    parent an offspring would replace).
    """
    skip = {k for k, p in enumerate(P) if p is i}
    if exclude is not None:
        skip.add(exclude)
    others = [p for k, p in enumerate(P) if k not in skip]
    if not others:
        raise ContractError("F1 needs at least one neighbour")
    rcc = C.distances(i.heatmap)
    return float(f1_values(_dist_to(i, others), rcc)[0])


def fitness_f2(i: Individual, C: RootCauseCluster, P1: Sequence[Individual], t: int) -> float:
    if not P1:
        raise ContractError("empty reference population")
    D = _dist_to(i, P1)
    return float(f2_matrix(D, C.distances(i.heatmap), [i.failing], [i.entropy])[0, t])


def fitness_f3(i: Individual, C: RootCauseCluster, P2: Sequence[Individual], t: int) -> float:
    if not P2:
        raise ContractError("empty reference population")
    D = _dist_to(i, P2)
    return float(f3_matrix(D, C.distances(i.heatmap), [i.failing], [i.entropy])[0, t])
