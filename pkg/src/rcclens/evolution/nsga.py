"""Nondominated sorting, crowding distance and the elitist NSGA-II loop.

All objectives are minimized.  ``variant="modified"`` gives the NSGA-II'
behaviour: only one minimum individual per objective is protected with an
infinite crowding distance, so per-objective optima survive truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..space import ParameterSpace
from .operators import ETA_CROSSOVER, ETA_MUTATION, make_offspring

ORIGINAL = "original"
MODIFIED = "modified"


class ContractError(ValueError):
    pass


def _check(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise ContractError("objectives must be an (n, q) array")
    if np.isnan(F).any():
        raise ContractError("NaN objective value")
    return F


def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def fast_nondominated_sort(F) -> list[np.ndarray]:
    """Fronts as arrays of row indices, best front first."""
    F = _check(F)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while len(current):
        fronts.append(current)
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        nxt = np.flatnonzero(count == 0)
        current = nxt
    return fronts


def ranks(F) -> np.ndarray:
    r = np.empty(len(F), dtype=int)
    for i, front in enumerate(fast_nondominated_sort(F)):
        r[front] = i
    return r


def crowding_assign(F, variant: str = ORIGINAL, rng: np.random.Generator | None = None) -> np.ndarray:
    """Crowding distance of each row of one front.

    Per objective the front is sorted ascending; interior individuals add
    the gap between their neighbours divided by the objective's range.  The
    original variant sets both extremes to infinity; the modified variant
    only the minimum (ties broken at random via ``rng``), and the maximum
    then receives no contribution for that objective.
    """
    F = _check(F)
    n, q = F.shape
    if n == 0:
        raise ContractError("empty front")
    if variant not in (ORIGINAL, MODIFIED):
        raise ValueError(f"unknown crowding variant {variant!r}")
    d = np.zeros(n)
    if n == 1:
        d[0] = np.inf
        return d
    rng = rng if rng is not None else np.random.default_rng(0)
    for m in range(q):
        if variant == MODIFIED:
            perm = rng.permutation(n)
            order = perm[np.argsort(F[perm, m], kind="stable")]
        else:
            order = np.argsort(F[:, m], kind="stable")
        f = F[order, m]
        d[order[0]] = np.inf
        if variant == ORIGINAL:
            d[order[-1]] = np.inf
        span = f[-1] - f[0]
        if span > 0 and n > 2:
            d[order[1:-1]] += (f[2:] - f[:-2]) / span
    return d


def select(F, n: int, variant: str, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Environmental selection of ``n`` rows; returns (indices, ranks, crowding)."""
    F = _check(F)
    chosen, rk, cd = [], [], []
    for i, front in enumerate(fast_nondominated_sort(F)):
        c = crowding_assign(F[front], variant, rng)
        room = n - len(chosen)
        if room <= 0:
            break
        if len(front) > room:
            keep = np.argsort(-c, kind="stable")[:room]
            front, c = front[keep], c[keep]
        chosen.extend(front)
        rk.extend([i] * len(front))
        cd.extend(c)
    return np.array(chosen, dtype=int), np.array(rk), np.array(cd)


def selection_keys(rk, cd) -> np.ndarray:
    """Crowded-comparison keys for tournaments: lower rank, then larger crowding."""
    return np.column_stack([rk, -np.asarray(cd, dtype=float)])


@dataclass
class NSGAResult:
    X: np.ndarray
    F: np.ndarray
    trace: list = field(default_factory=list)
    evaluations: int = 0


def nsga2(objective: Callable[[np.ndarray], np.ndarray], space: ParameterSpace, X0: np.ndarray,
          generations: int | None, p_c: float, p_m: float, rng: np.random.Generator,
          variant: str = ORIGINAL, budget: int | None = None, eta_c: float = ETA_CROSSOVER,
          eta_m: float = ETA_MUTATION, on_generation: Callable | None = None) -> NSGAResult:
    """Elitist (mu + lambda) NSGA-II loop.

    ``objective`` maps an ``(n, dim)`` array of encoded chromosomes to an
    ``(n, q)`` array.  The loop stops after ``generations`` or once
    ``budget`` objective rows (including the initial population) have been
    requested, whichever comes first; the last offspring batch is truncated
    to fit the budget exactly.
    """
    if generations is None and budget is None:
        raise ValueError("need a generation count or an evaluation budget")
    X = np.asarray(X0, dtype=float)
    s = len(X)
    if s < 2:
        raise ContractError("population size must be at least 2")
    F = _check(objective(X))
    used = s
    idx, rk, cd = select(F, s, variant, rng)
    X, F = X[idx], F[idx]
    trace = [_record(0, used, F)]
    if on_generation:
        on_generation(0, X, F)
    gen = 0
    while (generations is None or gen < generations) and (budget is None or used < budget):
        gen += 1
        n_off = s if budget is None else min(s, budget - used)
        O = make_offspring(space, X, selection_keys(rk, cd), n_off, p_c, p_m, rng, eta_c, eta_m)
        FO = _check(objective(O))
        used += len(O)
        XU, FU = np.vstack([X, O]), np.vstack([F, FO])
        idx, rk, cd = select(FU, s, variant, rng)
        X, F = XU[idx], FU[idx]
        trace.append(_record(gen, used, F))
        if on_generation:
            on_generation(gen, X, F)
    return NSGAResult(X, F, trace, used)


def _record(gen, used, F) -> dict:
    row = {"iteration": gen, "evaluations": used}
    for m in range(F.shape[1]):
        row[f"best_{m}"] = float(F[:, m].min())
        row[f"worst_{m}"] = float(F[:, m].max())
    return row
