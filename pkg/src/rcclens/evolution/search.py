"""PaiR, NSGA-II', the two comparison baselines and the Step-2 driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..clustering import RootCauseCluster
from ..space import ParameterSpace, distance_matrix
from ..stats import population_diversity, rows_to_csv
from .evaluation import Evaluation, Evaluator
from .fitness import f1_population, f1_values, f2_matrix, f3_matrix
from .nsga import MODIFIED, ORIGINAL, ContractError, NSGAResult, nsga2, select, selection_keys
from .operators import ETA_CROSSOVER, ETA_MUTATION, make_offspring

log = logging.getLogger(__name__)

PAIR = "pair"
NSGA2 = "nsga2"
DEEP_NSGA2 = "deep_nsga2"


class SearchError(RuntimeError):
    pass


@dataclass
class SearchRun:
    """Configuration of one evolutionary execution.

    ``iterations`` is b for PaiR and k for NSGA-II'; ``budget`` (evaluation
    requests) overrides it for the budget-matched baselines.
    """

    algorithm: str = PAIR
    population_size: int = 25
    iterations: int = 100
    restarts: int = 4
    p_c: float = 0.7
    p_m: float = 0.3
    seed: int = 0
    budget: int | None = None
    eta_c: float = ETA_CROSSOVER
    eta_m: float = ETA_MUTATION

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population size must be at least 2")
        if self.iterations < 0 or self.restarts < 1:
            raise ValueError("iterations must be >= 0 and restarts >= 1")
        if self.budget is not None and self.budget < self.population_size:
            raise ValueError("budget must cover at least one population")
        for p in (self.p_c, self.p_m):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    @property
    def pair_evaluations(self) -> int:
        """Evaluation requests a PaiR run with this configuration makes."""
        return self.population_size * (self.restarts + self.iterations)


@dataclass
class SearchResult:
    algorithm: str
    X: np.ndarray
    evaluation: Evaluation
    rcc: np.ndarray
    population_size: int
    evaluations: int
    trace: list = field(default_factory=list)
    in_cluster_history: list = field(default_factory=list)

    @property
    def in_cluster(self) -> np.ndarray:
        return self.rcc <= 1.0

    @property
    def members(self) -> np.ndarray:
        return self.X[self.in_cluster]

    @property
    def in_cluster_fraction(self) -> float:
        return float(self.in_cluster.sum() / self.population_size)

    @property
    def covered(self) -> bool:
        return bool(self.in_cluster.any())

    def trace_csv(self) -> str:
        return rows_to_csv(self.trace)


def _trace_row(space, it, used, F, X, rcc) -> dict:
    F = np.atleast_2d(F.T).T if F.ndim == 1 else F
    row = {"iteration": it, "evaluations": used}
    for m in range(F.shape[1]):
        row[f"best_{m}"] = float(F[:, m].min())
        row[f"worst_{m}"] = float(F[:, m].max())
    inside = rcc <= 1.0
    row["in_cluster"] = int(inside.sum())
    row["diversity"] = population_diversity(space, X[inside])
    return row


def _result(algorithm, X, evaluator, cluster, s, used, trace, history=()) -> SearchResult:
    ev = evaluator(X, count=False)
    return SearchResult(algorithm, X, ev, cluster.distances(ev.heatmaps), s, used, trace, list(history))


# PaiR


def pair_search(cluster: RootCauseCluster, evaluator: Evaluator, cfg: SearchRun,
                rng: np.random.Generator) -> SearchResult:
    """Diversity-driven GA that fills the cluster with mutually distant members.

    Keeps the best of ``cfg.restarts`` random populations (the one holding
    the lowest-F1 individual).  Offspring are processed best first; each one
    competes with the worst parent while any parent lies outside the
    cluster, otherwise with its closest parent, and replaces it on strict
    improvement.  ``members`` of the result is the returned population P1.
    """
    space = evaluator.space
    s = cfg.population_size
    used = 0
    best = None
    for _ in range(cfg.restarts):
        X = space.random(rng, s)
        ev = evaluator(X)
        used += s
        rcc = cluster.distances(ev.heatmaps)
        f = f1_population(distance_matrix(space, X), rcc)
        if best is None or f.min() < best[2].min():
            best = (X, rcc, f)
    X, rcc, f = best
    X = X.copy()
    history = [int((rcc <= 1.0).sum())]
    trace = [_trace_row(space, 0, used, f, X, rcc)]
    for it in range(1, cfg.iterations + 1):
        O = make_offspring(space, X, f, s, cfg.p_c, cfg.p_m, rng, cfg.eta_c, cfg.eta_m)
        try:
            evO = evaluator(O)
        except Exception as exc:
            raise SearchError(f"PaiR iteration {it}: {exc}") from exc
        used += len(O)
        rccO = cluster.distances(evO.heatmaps)
        DO = distance_matrix(space, O, X)
        order = np.argsort(_offspring_f1(DO, rccO, rcc, f), kind="stable")
        for j in order:
            d = distance_matrix(space, O[j:j + 1], X)[0]
            target = _replacement_target(d, rcc, f)
            fo = f1_values(d[None], rccO[j:j + 1], np.array([target]))[0]
            if fo < f[target]:
                X[target] = O[j]
                rcc[target] = rccO[j]
                f = f1_population(distance_matrix(space, X), rcc)
            history.append(int((rcc <= 1.0).sum()))
        trace.append(_trace_row(space, it, used, f, X, rcc))
    return _result(PAIR, X, evaluator, cluster, s, used, trace, history)


def _replacement_target(d, rcc, f) -> int:
    """Worst parent while any parent is outside the cluster, else the closest parent."""
    if np.any(rcc > 1.0):
        return int(np.argmax(f))
    return int(np.argmin(d))


def _offspring_f1(DO, rccO, rcc, f) -> np.ndarray:
    targets = np.array([_replacement_target(d, rcc, f) for d in DO], dtype=int)
    return f1_values(DO, rccO, targets)


# NSGA-II' and the Step-2 objectives


class ReferenceObjective:
    """F2 or F3 against fixed reference individuals, as an (n, q) objective for :func:`nsga2`."""

    def __init__(self, kind: str, cluster: RootCauseCluster, evaluator: Evaluator, refs: np.ndarray):
        if kind not in ("f2", "f3"):
            raise ValueError(f"unknown objective {kind!r}")
        refs = np.atleast_2d(np.asarray(refs, dtype=float))
        if refs.size == 0:
            raise ContractError("empty reference population")
        self.kind, self.cluster, self.evaluator, self.refs = kind, cluster, evaluator, refs

    def __call__(self, X):
        ev = self.evaluator(X)
        D = distance_matrix(self.evaluator.space, X, self.refs)
        rcc = self.cluster.distances(ev.heatmaps)
        fn = f2_matrix if self.kind == "f2" else f3_matrix
        return fn(D, rcc, ev.failing, ev.entropy)


def nsga2_prime(objective, space: ParameterSpace, X0: np.ndarray, cfg: SearchRun,
                rng: np.random.Generator, on_generation=None) -> NSGAResult:
    """NSGA-II with the modified crowding distance for ``cfg.iterations`` generations."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if len(X0) != cfg.population_size:
        raise ContractError(f"initial population has {len(X0)} individuals, expected {cfg.population_size}")
    return nsga2(objective, space, X0, cfg.iterations, cfg.p_c, cfg.p_m, rng, MODIFIED,
                 eta_c=cfg.eta_c, eta_m=cfg.eta_m, on_generation=on_generation)


def seed_population(X: np.ndarray, s: int) -> np.ndarray:
    """``s`` rows cycling through ``X`` (copies), used to start a search from a smaller set."""
    X = np.atleast_2d(X)
    if len(X) == 0:
        raise ContractError("cannot seed a population from an empty set")
    return X[np.arange(s) % len(X)].copy()


def unique_rows(X: np.ndarray) -> np.ndarray:
    """Distinct rows of ``X`` in first-occurrence order."""
    if len(X) == 0:
        return X
    _, first = np.unique(X, axis=0, return_index=True)
    return X[np.sort(first)]


# baselines


def nsga2_baseline(cluster: RootCauseCluster, evaluator: Evaluator, cfg: SearchRun,
                   rng: np.random.Generator) -> SearchResult:
    """Plain NSGA-II minimizing the distance to the cluster medoid (single objective)."""
    space = evaluator.space
    s = cfg.population_size
    budget = cfg.budget or cfg.pair_evaluations
    trace = []

    def objective(X):
        return cluster.distances(evaluator(X).heatmaps)[:, None]

    def record(gen, X, F):
        trace.append(_trace_row(space, gen, evaluator.requests - start, F, X, F[:, 0]))

    start = evaluator.requests
    res = nsga2(objective, space, space.random(rng, s), None, cfg.p_c, cfg.p_m, rng, ORIGINAL,
                budget=budget, eta_c=cfg.eta_c, eta_m=cfg.eta_m, on_generation=record)
    return _result(NSGA2, res.X, evaluator, cluster, s, res.evaluations, trace)


def deep_nsga2_baseline(cluster: RootCauseCluster, evaluator: Evaluator, cfg: SearchRun,
                        rng: np.random.Generator, threshold: float = 0.0,
                        repopulation: float = 0.1) -> SearchResult:
    """NSGA-II over (sparseness, medoid distance) with an archive of in-cluster individuals.

    Sparseness is the chromosome distance to the closest archive member and
    is maximized.  Individuals of the population that lie in the cluster
    and are farther than ``threshold`` from every archive member join the
    archive.  Each generation the most dominated ``repopulation`` share of
    the population is replaced by random individuals.  The result holds the
    ``s`` archive members with the highest sparseness within the archive.
    """
    space = evaluator.space
    s = cfg.population_size
    budget = cfg.budget or cfg.pair_evaluations
    n_rep = max(1, int(np.ceil(repopulation * s)))
    archive = np.empty((0, space.dim))
    trace = []

    def evaluate(X):
        return cluster.distances(evaluator(X).heatmaps)

    def sparseness(X):
        if len(archive) == 0:
            return np.zeros(len(X))
        D = distance_matrix(space, X, archive)
        return D.min(axis=1)

    def admit(X, rcc):
        nonlocal archive
        for x, r in zip(X, rcc):
            if r > 1.0:
                continue
            if len(archive) == 0 or distance_matrix(space, x[None], archive).min() > threshold:
                archive = np.vstack([archive, x])

    X = space.random(rng, s)
    rcc = evaluate(X)
    used = s
    admit(X, rcc)
    F = np.column_stack([-sparseness(X), rcc])
    idx, rk, cd = select(F, s, ORIGINAL, rng)
    X, rcc, F = X[idx], rcc[idx], F[idx]
    trace.append(_trace_row(space, 0, used, F, X, rcc) | {"archive": len(archive)})
    gen = 0
    while used < budget:
        gen += 1
        n_off = min(s, budget - used)
        O = make_offspring(space, X, selection_keys(rk, cd), n_off, cfg.p_c, cfg.p_m, rng, cfg.eta_c, cfg.eta_m)
        rccO = evaluate(O)
        used += len(O)
        XU, rccU = np.vstack([X, O]), np.concatenate([rcc, rccO])
        FU = np.column_stack([-sparseness(XU), rccU])
        idx, rk, cd = select(FU, s, ORIGINAL, rng)
        X, rcc = XU[idx], rccU[idx]
        admit(X, rcc)
        k = min(n_rep, budget - used)
        if k > 0:
            # selection order is best first, so the tail is the most dominated
            R = space.random(rng, k)
            X[s - k:] = R
            rcc[s - k:] = evaluate(R)
            used += k
            admit(R, rcc[s - k:])
        F = np.column_stack([-sparseness(X), rcc])
        idx, rk, cd = select(F, s, ORIGINAL, rng)
        X, rcc, F = X[idx], rcc[idx], F[idx]
        trace.append(_trace_row(space, gen, used, F, X, rcc) | {"archive": len(archive)})
    if len(archive) > 1:
        D = distance_matrix(space, archive)
        np.fill_diagonal(D, np.inf)
        sp = D.min(axis=1)
        chosen = archive[np.argsort(-sp, kind="stable")[:s]]
    else:
        chosen = archive
    if len(chosen) == 0:
        ev = Evaluation(np.empty((0, space.dim)), np.empty((0, cluster.heatmaps.shape[1])),
                        np.empty((0, evaluator.net.n_classes)), np.empty(0, dtype=int))
        res = SearchResult(DEEP_NSGA2, ev.X, ev, np.empty(0), s, used, trace)
    else:
        res = _result(DEEP_NSGA2, chosen, evaluator, cluster, s, used, trace)
    res.archive = archive
    return res


# Step 2


UNCOVERABLE = "uncoverable"
NO_UNSAFE = "no_unsafe"
OK = "ok"


@dataclass
class Step2Result:
    status: str
    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    pair: SearchResult | None = None
    traces: dict = field(default_factory=dict)
    evaluations: int = 0


def step2(cluster: RootCauseCluster, evaluator: Evaluator, cfg_pair: SearchRun, cfg_unsafe: SearchRun,
          cfg_safe: SearchRun, rng: np.random.Generator) -> Step2Result:
    """P1 by PaiR, unsafe P2 by NSGA-II' over F2, safe P3 by NSGA-II' over F3.

    P2 keeps the distinct failing in-cluster individuals; P3 the distinct
    passing ones.  A cluster with empty P1 is uncoverable; with empty P2 it
    has no unsafe set and P3 is not searched.
    """
    space = evaluator.space
    start = evaluator.requests
    empty = np.empty((0, space.dim))
    if cluster.degenerate:
        raise ContractError("cannot search a cluster with zero radius")
    pr = pair_search(cluster, evaluator, cfg_pair, rng)
    P1 = unique_rows(pr.members)
    traces = {"pair": pr.trace}
    if len(P1) == 0:
        log.info("cluster %s: no in-cluster individual found", cluster.label)
        return Step2Result(UNCOVERABLE, P1, empty, empty, pr, traces, evaluator.requests - start)

    def tracer(name, refs_X):
        rows = traces.setdefault(name, [])

        def cb(gen, X, F):
            rcc = cluster.distances(evaluator(X, count=False).heatmaps)
            rows.append(_trace_row(space, gen, evaluator.requests - start, F, X, rcc))

        return cb

    obj2 = ReferenceObjective("f2", cluster, evaluator, P1)
    r2 = nsga2_prime(obj2, space, seed_population(P1, cfg_unsafe.population_size), cfg_unsafe, rng,
                     tracer("unsafe", P1))
    ev2 = evaluator(r2.X, count=False)
    keep = ev2.failing & (cluster.distances(ev2.heatmaps) <= 1.0)
    P2 = unique_rows(r2.X[keep])
    if len(P2) == 0:
        log.info("cluster %s: no failure-inducing in-cluster individual found", cluster.label)
        return Step2Result(NO_UNSAFE, P1, empty, empty, pr, traces, evaluator.requests - start)

    obj3 = ReferenceObjective("f3", cluster, evaluator, P2)
    r3 = nsga2_prime(obj3, space, seed_population(P2, cfg_safe.population_size), cfg_safe, rng,
                     tracer("safe", P2))
    ev3 = evaluator(r3.X, count=False)
    P3 = unique_rows(r3.X[~ev3.failing])
    return Step2Result(OK, P1, P2, P3, pr, traces, evaluator.requests - start)
