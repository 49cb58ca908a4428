"""Acceptance suite: one test per criterion, each printing a PASS or FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""

import itertools
import time
from fractions import Fraction
from math import comb

import numpy as np
import pytest
import scipy.stats

from rcclens.config import Config
from rcclens.evolution import (
    DEEP_NSGA2,
    MODIFIED,
    NSGA2,
    ORIGINAL,
    PAIR,
    Evaluator,
    ReferenceObjective,
    SearchRun,
    crowding_assign,
    dominates,
    fast_nondominated_sort,
    nsga2_prime,
    pair_search,
    ranks,
    seed_population,
)
from rcclens.neural import DenseNet, forward, loss_and_gradients, lrp, normalized_entropy
from rcclens.pipeline import compare_search_algorithms, run_pipeline, stream
from rcclens.rules import DecisionList, compile_expression, parse, render
from rcclens.space import ParameterSpace, ParameterSpec
from rcclens.stats import fisher_exact, mann_whitney_u, vargha_delaney_a12

RESULTS = []


def verdict(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def runs():
    """Full workflow (through retraining) for seeds 0-9 with the default configuration."""
    out, times = {}, {}
    for seed in range(10):
        t = time.perf_counter()
        out[seed] = run_pipeline(Config(seed=seed))
        times[seed] = time.perf_counter() - t
    return out, times


def _characterized(report):
    return [r for r in report.clusters if r.characterized]


def _clusters(report):
    return {int(C.label): C for C in report.clustering.clusters}


# 1


def test_criterion_1_sorting_oracle():
    F = np.random.default_rng(2024).random((200, 3))
    t = time.perf_counter()
    fronts = fast_nondominated_sort(F)
    left, oracle, level = set(range(200)), np.empty(200, int), 0
    while left:
        front = {i for i in left if not any(dominates(F[j], F[i]) for j in left if j != i)}
        oracle[list(front)] = level
        left -= front
        level += 1
    dt = time.perf_counter() - t
    ok = np.array_equal(ranks(F), oracle) and sum(map(len, fronts)) == 200 and dt < 5.0
    verdict(1, ok, f"{len(fronts)} fronts equal the brute-force ranking, {dt:.2f}s")


# 2


def test_criterion_2_crowding_variants():
    fronts = [
        np.array([[0.0, 10.0], [1.0, 6.0], [2.0, 4.0], [4.0, 2.0], [10.0, 0.0]]),
        np.array([[0.0, 8.0, 3.0], [2.0, 5.0, 0.0], [3.0, 1.0, 9.0], [7.0, 4.0, 1.0], [9.0, 0.0, 4.0]]),
    ]
    ok, worst = True, 0.0
    for F in fronts:
        n, q = F.shape
        for m in range(q):
            col = F[:, [m]]
            o = crowding_assign(col, ORIGINAL)
            d = crowding_assign(col, MODIFIED, np.random.default_rng(m))
            ok &= np.isinf(o).sum() == 2 and np.isinf(d).sum() == 1
            ok &= bool(np.isinf(d[np.argmin(col[:, 0])]))
        # hand sums: every interior point adds (next - previous) / range per objective
        expect_o, expect_d = np.zeros(n), np.zeros(n)
        for m in range(q):
            order = np.argsort(F[:, m], kind="stable")
            f = F[order, m]
            span = f[-1] - f[0]
            for k in range(1, n - 1):
                expect_o[order[k]] += (f[k + 1] - f[k - 1]) / span
                expect_d[order[k]] += (f[k + 1] - f[k - 1]) / span
            expect_o[order[0]] = expect_o[order[-1]] = np.inf
            expect_d[order[0]] = np.inf
        for variant, expect in ((ORIGINAL, expect_o), (MODIFIED, expect_d)):
            got = crowding_assign(F, variant, np.random.default_rng(0))
            ok &= np.array_equal(np.isinf(got), np.isinf(expect))
            fin = ~np.isinf(expect)
            if fin.any():
                worst = max(worst, float(np.abs(got[fin] - expect[fin]).max()))
    ok &= worst <= 1e-12
    verdict(2, ok, f"2 vs 1 infinities per objective; interior max error {worst:.1e}")


# 3


def test_criterion_3_elitism(reference_report):
    sc = reference_report.scenario
    r = _characterized(reference_report)[0]
    C = _clusters(reference_report)[r.cluster_id]
    violations, runs = 0, 0
    for seed in range(20):
        kind, refs = ("f2", r.p1) if seed < 10 else ("f3", r.p2)
        ev = Evaluator(sc.simulator, sc.net, C.layer)
        cfg = SearchRun("nsga2_prime", 25, 100, 1, 0.3, 0.3, seed)
        rng = stream(seed, 77)
        res = nsga2_prime(ReferenceObjective(kind, C, ev, refs), sc.simulator.space, seed_population(refs, 25), cfg, rng)
        q = len(refs)
        best = np.array([[row[f"best_{m}"] for m in range(q)] for row in res.trace])
        violations += int((np.diff(best, axis=0) > 0).sum())
        runs += len(res.trace) == 101
    for rep in reference_report.clusters:
        for name in ("unsafe", "safe"):
            rows = rep.traces.get(name, [])
            cols = [k for k in (rows[0] if rows else {}) if k.startswith("best_")]
            for k in cols:
                violations += sum(b[k] > a[k] for a, b in zip(rows, rows[1:]))
    verdict(3, violations == 0 and runs == 20, f"{violations} violations over 20 seeds x 100 generations")


# 4


def test_criterion_4_pair_safety(reference_report):
    sc = reference_report.scenario
    violations, steps = 0, 0
    for C in reference_report.clustering.clusters:
        if C.degenerate:
            continue
        for seed in range(4):
            ev = Evaluator(sc.simulator, sc.net, C.layer)
            res = pair_search(C, ev, SearchRun(PAIR, 25, 100, 4, 0.7, 0.3, seed), stream(seed, 55, int(C.label)))
            h = res.in_cluster_history
            violations += sum(b < a for a, b in zip(h, h[1:]))
            steps += len(h) - 1
    for rep in reference_report.clusters:
        rows = rep.traces.get("pair", [])
        violations += sum(b["in_cluster"] < a["in_cluster"] for a, b in zip(rows, rows[1:]))
    verdict(4, violations == 0 and steps > 0, f"{violations} violations over {steps} replacement steps")


# 5


def test_criterion_5_rq1(reference_report):
    clusters = sorted((C for C in reference_report.clustering.clusters if not C.degenerate),
                      key=len, reverse=True)[:4]
    t = time.perf_counter()
    cmp = compare_search_algorithms(clusters, reference_report.scenario, SearchRun(PAIR, 25, 100, 4, 0.7, 0.3),
                                    [0, 1, 2, 3])
    dt = time.perf_counter() - t
    wins = sum(cmp.mean_fraction(PAIR, c) >= cmp.mean_fraction(NSGA2, c) for c in cmp.cluster_ids)
    cov = {a: cmp.covered_count(a) for a in (PAIR, NSGA2, DEEP_NSGA2)}
    parity = set(cmp.evaluations.values()) == {cmp.budget}  # 25 x (4 restarts + 100 iterations) each
    ok = len(clusters) == 4 and wins >= 3 and cov[PAIR] >= max(cov[NSGA2], cov[DEEP_NSGA2]) and parity and dt < 600
    verdict(5, ok, f"PaiR >= NSGA-II in-cluster on {wins}/4 clusters; covered {cov[PAIR]}/{cov[NSGA2]}/"
                   f"{cov[DEEP_NSGA2]} (PaiR/NSGA-II/DeepNSGA-II); {dt:.0f}s")


# 6


def test_criterion_6_vrr(runs):
    reports, _ = runs
    chars = [r for rep in reports.values() for r in _characterized(rep)]
    good = sum(any(v > 0.5 for v in r.vrr.values()) for r in chars)
    verdict(6, bool(chars) and good == len(chars), f"{good}/{len(chars)} characterized clusters have VRR > 0.5")


# 7


def test_criterion_7_unsafe_accuracy(runs):
    reports, times = runs
    chars = [r for rep in reports.values() for r in _characterized(rep)]
    sig = sum(r.unsafe_space.n == 500 and r.unsafe_space.significant_drop for r in chars)
    share = sig / len(chars) if chars else 0.0
    slowest = max(times.values())
    verdict(7, share >= 0.8 and slowest < 300,
            f"{sig}/{len(chars)} clusters ({share:.0%}) drop significantly over 10 runs; slowest run {slowest:.0f}s")


# 8


def test_criterion_8_retraining(runs):
    reports, times = runs
    gains = [100 * (rep.retraining.sede.best_accuracy - rep.retraining.baseline.best_accuracy)
             for rep in reports.values()]
    sizes = {rep.retraining.sede.mixture_sizes[0][:2] for rep in reports.values()}
    cfg = Config()
    ok = (np.mean(gains) >= 2.0 and sum(times.values()) < 900 and sizes == {(200, 400)}
          and all(len(rep.retraining.sede.accuracies) == 3 for rep in reports.values())
          and all(rep.retraining.improvement_size == cfg.retrain_per_cluster * len(_characterized(rep))
                  for rep in reports.values()))
    verdict(8, ok, f"mean gain {np.mean(gains):.2f} points over random (runs: "
                   + " ".join(f"{g:.1f}" for g in gains) + f"); {sum(times.values()):.0f}s")


# 9


def test_criterion_9_rules():
    text = ("HeadPose_Y > 50.34 : class=DNN-error\nHeadPose_Y < 13.34 : class=DNN-correct\n"
            "HeadPose_Z > 60 & HeadPose_Y > 30 : class=DNN-error\nHeadPose_Z <= 60 : class=DNN-correct\n"
            "(default) : class=DNN-error\n")
    hand = ("(HeadPose_Y > 50.34) || (!(HeadPose_Y > 50.34) & !(HeadPose_Y < 13.34) & "
            "((HeadPose_Z > 60) & (HeadPose_Y > 30))) || (!(HeadPose_Y > 50.34) & !(HeadPose_Y < 13.34) & "
            "!((HeadPose_Z > 60) & (HeadPose_Y > 30)) & !(HeadPose_Z <= 60))")
    dl = DecisionList.from_text(text)
    expr = compile_expression(dl)
    same = render(parse(expr.render())) == render(parse(hand))
    space = ParameterSpace([ParameterSpec("HeadPose_X", -40, 40), ParameterSpec("HeadPose_Y", -90, 90),
                            ParameterSpec("HeadPose_Z", -90, 90)])
    X = space.random(np.random.default_rng(9), 10_000)
    agree = int((expr.evaluate(space, X) == dl.predicts_error(space, X)).sum())
    verdict(9, same and agree == 10_000, f"expression matches the hand transcription: {same}; "
                                         f"agreement {agree}/10000")


# 10


def test_criterion_10_numerics():
    rng = np.random.default_rng(10)
    worst_lrp = 0.0
    for k in range(100):
        sizes = (int(rng.integers(3, 9)), *rng.integers(3, 10, size=int(rng.integers(1, 3))), int(rng.integers(2, 6)))
        net = DenseNet.initialize(tuple(int(s) for s in sizes), seed=k)
        x = rng.uniform(0, 1, size=sizes[0])
        out = forward(net, x).logits.max()
        R = lrp(net, x, 0, epsilon=1e-6)
        worst_lrp = max(worst_lrp, abs(R.sum() - out) / abs(out) if out else abs(R.sum()))
    net = DenseNet.initialize((4, 6, 3), seed=3)
    for layer in net.layers:
        layer.bias += rng.normal(0, 0.1, size=layer.bias.shape)
    X, y = rng.normal(size=(8, 4)), rng.integers(0, 3, size=8)
    _, grads = loss_and_gradients(net, X, y)
    worst_fd, h = 0.0, 1e-6
    for param, g in zip(net.parameters(), grads):
        for i in np.ndindex(param.shape):
            old = param[i]
            param[i] = old + h
            lp, _ = loss_and_gradients(net, X, y)
            param[i] = old - h
            lm, _ = loss_and_gradients(net, X, y)
            param[i] = old
            num = (lp - lm) / (2 * h)
            worst_fd = max(worst_fd, abs(num - g[i]) / max(1e-6, abs(num) + abs(g[i])))
    ends = all(normalized_entropy(np.full(k, 1 / k)) == 1.0 and normalized_entropy(np.eye(k)[k - 1]) == 0.0
               for k in range(2, 33))
    verdict(10, worst_lrp <= 1e-3 and worst_fd <= 1e-4 and ends,
            f"LRP conservation {worst_lrp:.1e}, gradient check {worst_fd:.1e}, entropy endpoints exact: {ends}")


# 11


def test_criterion_11_stats():
    rng = np.random.default_rng(11)
    bad = 0

    def brute_u(a, b):
        pooled, n1 = np.r_[a, b], len(a)
        mu = n1 * len(b) / 2

        def u(idx):
            rest = np.delete(pooled, list(idx))
            return sum((x > z) + 0.5 * (x == z) for x in pooled[list(idx)] for z in rest)

        obs = u(range(n1))
        splits = list(itertools.combinations(range(len(pooled)), n1))
        return sum(abs(u(s) - mu) >= abs(obs - mu) - 1e-9 for s in splits) / len(splits)

    for _ in range(30):
        a = rng.integers(0, 5, size=int(rng.integers(1, 6)))
        b = rng.integers(0, 5, size=int(rng.integers(1, 6)))
        if len(set(np.r_[a, b])) > 1:
            bad += abs(mann_whitney_u(a, b) - brute_u(a, b)) > 1e-12
        a12 = sum(Fraction(1) if x > z else Fraction(1, 2) if x == z else 0 for x in a for z in b) / (len(a) * len(b))
        bad += vargha_delaney_a12(a, b) != float(a12)
        t = rng.integers(0, 9, size=(2, 2))
        (p, q), (r, s) = t
        r1, r2, c1 = p + q, r + s, p + r
        if min(r1, r2, c1, r1 + r2 - c1) > 0:
            probs = [Fraction(comb(r1, x) * comb(r2, c1 - x), comb(r1 + r2, c1))
                     for x in range(max(0, c1 - r2), min(r1, c1) + 1)]
            obs = Fraction(comb(r1, p) * comb(r2, c1 - p), comb(r1 + r2, c1))
            bad += fisher_exact(t) != float(sum(x for x in probs if x <= obs))
    for n1, n2 in ((20, 20), (15, 12), (8, 30)):  # exact mode up to |a|*|b| = 400, continuous data
        a, b = rng.normal(size=n1), rng.normal(0.6, size=n2)
        ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="exact").pvalue
        bad += abs(mann_whitney_u(a, b) - ref) > 1e-9 * max(ref, 1e-300)
    ex = (mann_whitney_u([1, 2, 3], [10, 11, 12]) == pytest.approx(0.1)
          and fisher_exact([[5, 0], [0, 5]]) == pytest.approx(2 / 252))
    verdict(11, bad == 0 and ex, f"{bad} mismatches against enumeration and exact oracles")
