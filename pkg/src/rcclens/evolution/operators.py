"""Variation operators on encoded chromosomes.

Crossover and mutation act on unit-range coordinates; results are mapped
back and repaired (clipped, categorical blocks snapped to one-hot).
"""

from __future__ import annotations

import numpy as np

from ..space import ParameterSpace

ETA_CROSSOVER = 15.0
ETA_MUTATION = 20.0


def tournament(keys: np.ndarray, n: int, rng: np.random.Generator, size: int = 2) -> np.ndarray:
    """Indices of ``n`` tournament winners; ``keys`` rows compare lexicographically, lower wins.

    ``keys`` may be a vector (scalar fitness) or ``(pop, m)``.
    """
    keys = np.asarray(keys, dtype=float)
    if keys.ndim == 1:
        keys = keys[:, None]
    cand = rng.integers(0, len(keys), size=(n, size))
    winners = cand[:, 0].copy()
    for j in range(1, size):
        c = cand[:, j]
        better = np.zeros(n, dtype=bool)
        decided = np.zeros(n, dtype=bool)
        for col in range(keys.shape[1]):
            a, b = keys[c, col], keys[winners, col]
            better |= ~decided & (a < b)
            decided |= a != b
        winners = np.where(better, c, winners)
    return winners


def sbx(u1: np.ndarray, u2: np.ndarray, rng: np.random.Generator, eta: float = ETA_CROSSOVER):
    """Bounded simulated binary crossover on [0, 1]^d; returns two children.

    Each gene is recombined with probability 0.5 (Deb & Agrawal's bounded form).
    """
    c1, c2 = u1.copy(), u2.copy()
    d = len(u1)
    swap = rng.random(d) < 0.5
    mix = rng.random(d) <= 0.5
    rand = rng.random(d)
    for k in range(d):
        y1, y2 = sorted((u1[k], u2[k]))
        if not mix[k] or y2 - y1 < 1e-14:
            continue
        out = []
        for beta_bound in (1.0 + 2.0 * y1 / (y2 - y1), 1.0 + 2.0 * (1.0 - y2) / (y2 - y1)):
            alpha = 2.0 - beta_bound ** (-(eta + 1.0))
            r = rand[k]
            if r <= 1.0 / alpha:
                betaq = (r * alpha) ** (1.0 / (eta + 1.0))
            else:
                betaq = (1.0 / (2.0 - r * alpha)) ** (1.0 / (eta + 1.0))
            out.append(betaq)
        lo = 0.5 * ((y1 + y2) - out[0] * (y2 - y1))
        hi = 0.5 * ((y1 + y2) + out[1] * (y2 - y1))
        lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
        if swap[k]:
            lo, hi = hi, lo
        c1[k], c2[k] = lo, hi
    return c1, c2


def polynomial_mutation(u: np.ndarray, rng: np.random.Generator, eta: float = ETA_MUTATION,
                        gene_prob: float | None = None) -> np.ndarray:
    """Bounded polynomial mutation on [0, 1]^d.

    Each gene mutates with ``gene_prob`` (default ``1/d``); at least one gene
    always mutates so a mutated child differs from its parent.
    """
    d = len(u)
    gene_prob = 1.0 / d if gene_prob is None else gene_prob
    mask = rng.random(d) < gene_prob
    if not mask.any():
        mask[rng.integers(d)] = True
    v = u.copy()
    for k in np.flatnonzero(mask):
        y = v[k]
        r = rng.random()
        mpow = 1.0 / (eta + 1.0)
        if r < 0.5:
            xy = 1.0 - y
            val = 2.0 * r + (1.0 - 2.0 * r) * xy ** (eta + 1.0)
            dq = val ** mpow - 1.0
        else:
            xy = y
            val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * xy ** (eta + 1.0)
            dq = 1.0 - val ** mpow
        v[k] = min(max(y + dq, 0.0), 1.0)
    return v


def make_offspring(space: ParameterSpace, X: np.ndarray, keys: np.ndarray, n: int, p_c: float, p_m: float,
                   rng: np.random.Generator, eta_c: float = ETA_CROSSOVER,
                   eta_m: float = ETA_MUTATION) -> np.ndarray:
    """``n`` children by binary tournament, SBX (prob ``p_c``) and mutation (prob ``p_m`` per child)."""
    if n <= 0:
        return np.empty((0, space.dim))
    U = space.normalize(X)
    parents = tournament(keys, 2 * ((n + 1) // 2), rng)
    children = []
    for a, b in zip(parents[0::2], parents[1::2]):
        c1, c2 = U[a].copy(), U[b].copy()
        if rng.random() < p_c:
            c1, c2 = sbx(c1, c2, rng, eta_c)
        for c in (c1, c2):
            if rng.random() < p_m:
                c = polynomial_mutation(c, rng, eta_m)
            children.append(c)
    return space.repair(space.denormalize(np.array(children[:n])))
