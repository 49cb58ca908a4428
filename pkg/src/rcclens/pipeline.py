"""End-to-end workflow: cluster failures, search each cluster, learn expressions, retrain.

Seeding: every random stream is ``SeedSequence(master_seed, spawn_key=key)``
with a fixed key per purpose (see ``KEY_*``); per-cluster streams append the
cluster label and per-repetition streams the repetition index, so results
do not depend on the worker count or on which clusters are analysed.

Output layout under the output directory::

    model.txt                      trained model (when trained here)
    report.txt                     human-readable summary
    clusters.csv                   one row per cluster
    assignments.csv                failing test input -> cluster
    expressions/cluster_<id>.txt   unsafe expression (characterized clusters)
    clusters/cluster_<id>/         rules.txt, P1.csv, P2.csv, P3.csv, vrr.csv, trace_*.csv
    retrain.csv                    per-repetition accuracies, SEDE and random baseline
    comparison/                    search-algorithm comparison (compare subcommand)
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neural
from .clustering import ClusteringResult, InsufficientFailuresError, RootCauseCluster, assignments_csv, cluster_failures
from .config import Config
from .evolution import (
    DEEP_NSGA2,
    NSGA2,
    OK,
    PAIR,
    Evaluator,
    SearchRun,
    deep_nsga2_baseline,
    nsga2_baseline,
    pair_search,
    step2,
)
from .neural import DenseNet, forward, lrp
from .retrain import LabeledSet, RetrainConfig, RetrainResult, accuracy, build_unsafe_set, retrain
from .rules import (
    DecisionList,
    EmptyExpressionError,
    UnsafeExpression,
    compile_expression,
    learn_part,
    sample_expression,
)
from .simulator import Simulator, make_simulator
from .space import CATEGORICAL
from .stats import (
    MetricSeries,
    comparison_row,
    fisher_exact,
    population_diversity,
    rows_to_csv,
    vrr,
)

log = logging.getLogger(__name__)

KEY_DATA, KEY_MODEL, KEY_TEST, KEY_CLUSTER, KEY_RETRAIN, KEY_BASELINE, KEY_COMPARE = range(7)
VRR_SAMPLES = 1000

CHARACTERIZED = "characterized"
UNCHARACTERIZABLE = "uncharacterizable"
DEGENERATE = "degenerate"


class ModelNotFoundError(FileNotFoundError):
    pass


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


# scenario


@dataclass
class Scenario:
    simulator: Simulator
    net: DenseNet
    simulator_pool: LabeledSet
    field_pool: LabeledSet
    test: LabeledSet
    trained: bool = False


def build_scenario(cfg: Config, net: DenseNet | None = None) -> Scenario:
    """Simulator, data pools, test set and model (loaded, given, or trained from the pools)."""
    sim = make_simulator(cfg.scenario, input_dim=cfg.input_dim)
    rng = stream(cfg.seed, KEY_DATA)
    draw_sim = getattr(sim, "training_sampler", None)
    draw_field = getattr(sim, "field_sampler", None)
    Xs = draw_sim()(rng, cfg.train_size) if draw_sim else sim.space.random(rng, cfg.train_size)
    Xf = draw_field()(rng, cfg.field_size) if draw_field else sim.space.random(rng, cfg.field_size)
    sim_pool, field_pool = LabeledSet.render(sim, Xs), LabeledSet.render(sim, Xf)
    test = LabeledSet.render(sim, sim.space.random(stream(cfg.seed, KEY_TEST), cfg.test_size))
    trained = False
    if net is None and cfg.model_path:
        path = Path(cfg.model_path)
        if not path.is_file():
            raise ModelNotFoundError(f"model file {path} not found")
        net = neural.load(path)
    if net is None:
        mix = LabeledSet.concat([sim_pool, field_pool])
        sizes = (cfg.input_dim, *cfg.hidden, sim.config.class_count)
        model_seed = int(stream(cfg.seed, KEY_MODEL).integers(2**31))
        net = neural.train(DenseNet.initialize(sizes, seed=model_seed), mix.inputs, mix.labels,
                           epochs=cfg.train_epochs, learning_rate=cfg.train_lr, seed=model_seed + 1)
        trained = True
    if net.input_dim != cfg.input_dim:
        raise ValueError(f"model expects {net.input_dim} inputs, scenario renders {cfg.input_dim}")
    return Scenario(sim, net, sim_pool, field_pool, test, trained)


# Step 1


def failing_indices(scenario: Scenario) -> np.ndarray:
    pred = np.argmax(forward(scenario.net, scenario.test.inputs).logits, axis=1)
    return np.flatnonzero(pred != scenario.test.labels)


def heatmap_layers(cfg: Config, net: DenseNet) -> list[int]:
    layers = list(cfg.layers) if cfg.layers else list(range(1, net.n_layers))
    bad = [L for L in layers if not 0 <= L < net.n_layers]
    if bad:
        raise ValueError(f"heatmap layers {bad} out of range 0..{net.n_layers - 1}")
    return layers


def step1(scenario: Scenario, cfg: Config) -> ClusteringResult | None:
    """Cluster the failing test inputs; None when there are too few failures."""
    idx = failing_indices(scenario)
    if len(idx) < 3:
        return None
    inputs = scenario.test.inputs[idx]
    H = {L: lrp(scenario.net, inputs, L, cfg.lrp_epsilon) for L in heatmap_layers(cfg, scenario.net)}
    try:
        return cluster_failures(H, min(cfg.max_k, len(idx) - 1), ids=[int(i) for i in idx])
    except InsufficientFailuresError:
        return None


# Steps 2 and 3, per cluster


def search_configs(cfg: Config) -> tuple[SearchRun, SearchRun, SearchRun]:
    pair = SearchRun(PAIR, cfg.pair_population, cfg.pair_iterations, cfg.pair_restarts,
                     cfg.pair_crossover, cfg.pair_mutation, cfg.seed)
    unsafe = SearchRun("nsga2_prime", cfg.unsafe_population, cfg.unsafe_iterations, 1,
                       cfg.unsafe_crossover, cfg.unsafe_mutation, cfg.seed)
    safe = SearchRun("nsga2_prime", cfg.safe_population, cfg.safe_iterations, 1,
                     cfg.safe_crossover, cfg.safe_mutation, cfg.seed)
    return pair, unsafe, safe


@dataclass
class UnsafeSpaceEvaluation:
    accuracy_inside: float
    accuracy_random: float
    p_value: float
    n: int

    @property
    def significant_drop(self) -> bool:
        return self.accuracy_inside < self.accuracy_random and self.p_value <= 0.05


def evaluate_unsafe_space(expr: UnsafeExpression, n: int, simulator: Simulator, net: DenseNet,
                          rng: np.random.Generator) -> UnsafeSpaceEvaluation:
    """Model accuracy on ``n`` expression samples vs ``n`` uniform samples, with Fisher's p."""
    if n <= 0:
        raise ValueError("need a positive sample count")
    inside = LabeledSet.render(simulator, sample_expression(expr, simulator.space, n, rng))
    rand = LabeledSet.render(simulator, simulator.space.random(rng, n))
    a_in, a_rand = accuracy(net, inside), accuracy(net, rand)
    c_in, c_rand = int(round(a_in * n)), int(round(a_rand * n))
    p = fisher_exact([[c_in, n - c_in], [c_rand, n - c_rand]])
    return UnsafeSpaceEvaluation(a_in, a_rand, p, n)


def vrr_table(space, P: np.ndarray, rng: np.random.Generator) -> dict[str, float]:
    """VRR per numeric parameter of a set of chromosomes against uniform random ones."""
    if len(P) < 2:
        return {}
    R = space.random(rng, VRR_SAMPLES)
    out = {}
    for spec in space.specs:
        if spec.kind == CATEGORICAL:
            continue
        k = space.slot(spec.name).start
        out[spec.name] = vrr(P[:, k], R[:, k])
    return out


@dataclass
class ClusterReport:
    cluster_id: int
    size: int
    layer: int
    radius: float
    status: str
    p1: np.ndarray = None
    p2: np.ndarray = None
    p3: np.ndarray = None
    diversity: float = 0.0
    decision_list: DecisionList | None = None
    expression: UnsafeExpression | None = None
    unsafe_space: UnsafeSpaceEvaluation | None = None
    vrr: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    evaluations: int = 0
    note: str = ""

    @property
    def characterized(self) -> bool:
        return self.status == CHARACTERIZED

    def summary_row(self) -> dict:
        ev = self.unsafe_space
        return {
            "cluster_id": self.cluster_id,
            "size": self.size,
            "layer": self.layer,
            "status": self.status,
            "p1": _n(self.p1),
            "p2": _n(self.p2),
            "p3": _n(self.p3),
            "diversity": round(self.diversity, 6),
            "max_vrr": round(max(self.vrr.values()), 6) if self.vrr else "",
            "accuracy_inside": round(ev.accuracy_inside, 6) if ev else "",
            "accuracy_random": round(ev.accuracy_random, 6) if ev else "",
            "fisher_p": f"{ev.p_value:.6g}" if ev else "",
            "evaluations": self.evaluations,
            "expression": self.expression.render() if self.expression else "",
        }


def _n(X):
    return 0 if X is None else len(X)


def analyse_cluster(C: RootCauseCluster, scenario: Scenario, cfg: Config, evaluate: bool = True) -> ClusterReport:
    """Steps 2 and 3 (and the unsafe-space evaluation) for one cluster."""
    cid = int(C.label)
    rep = ClusterReport(cid, len(C), C.layer, float(C.radius), DEGENERATE)
    if C.degenerate:
        rep.note = "zero radius"
        return rep
    sim, net = scenario.simulator, scenario.net
    rng = stream(cfg.seed, KEY_CLUSTER, cid)
    evaluator = Evaluator(sim, net, C.layer, cfg.lrp_epsilon)
    s2 = step2(C, evaluator, *search_configs(cfg), rng)
    rep.status, rep.p1, rep.p2, rep.p3 = s2.status, s2.P1, s2.P2, s2.P3
    rep.traces, rep.evaluations = s2.traces, s2.evaluations
    rep.diversity = population_diversity(sim.space, s2.P1)
    if s2.status != OK:
        return rep
    rep.vrr = vrr_table(sim.space, s2.P2, rng)
    X = np.vstack([s2.P2, s2.P3])
    y = np.r_[np.ones(len(s2.P2), bool), np.zeros(len(s2.P3), bool)]
    rep.decision_list = learn_part(sim.space, X, y)
    try:
        rep.expression = compile_expression(rep.decision_list, s2.P2, sim.space)
    except EmptyExpressionError:
        rep.status = UNCHARACTERIZABLE
        return rep
    rep.status = CHARACTERIZED
    if evaluate and cfg.eval_samples > 0:
        rep.unsafe_space = evaluate_unsafe_space(rep.expression, cfg.eval_samples, sim, net, rng)
    return rep


def _analyse_job(args):
    return analyse_cluster(*args)


def analyse_clusters(clusters: Sequence[RootCauseCluster], scenario: Scenario, cfg: Config,
                     evaluate: bool = True) -> list[ClusterReport]:
    jobs = [(C, scenario, cfg, evaluate) for C in clusters]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_analyse_job, jobs))
    return [_analyse_job(j) for j in jobs]


# Step 4


@dataclass
class RetrainOutcome:
    sede: RetrainResult
    baseline: RetrainResult
    original_accuracy: float
    improvement_size: int


def retrain_config(cfg: Config, seed_key: int) -> RetrainConfig:
    return RetrainConfig(cfg.retrain_S, cfg.retrain_R, cfg.retrain_per_cluster, cfg.retrain_repetitions,
                         cfg.retrain_epochs, cfg.retrain_lr,
                         seed=int(stream(cfg.seed, seed_key).integers(2**31)))


def step4(scenario: Scenario, reports: Sequence[ClusterReport], cfg: Config) -> RetrainOutcome | None:
    """Retrain with expression samples, and with as many uniform samples as the baseline."""
    exprs = {r.cluster_id: r.expression for r in reports if r.characterized}
    if not exprs:
        return None
    sim = scenario.simulator
    rng = stream(cfg.seed, KEY_RETRAIN)
    unsafe = build_unsafe_set(exprs, cfg.retrain_per_cluster, sim, rng)
    rand = LabeledSet.render(sim, sim.space.random(stream(cfg.seed, KEY_BASELINE), len(unsafe)))
    rcfg = retrain_config(cfg, KEY_RETRAIN)
    sede = retrain(scenario.net, scenario.simulator_pool, scenario.field_pool, unsafe, scenario.test, rcfg)
    base = retrain(scenario.net, scenario.simulator_pool, scenario.field_pool, rand, scenario.test, rcfg)
    return RetrainOutcome(sede, base, accuracy(scenario.net, scenario.test), len(unsafe))


# whole workflow


STAGES = ("cluster", "explain", "evaluate", "retrain")


@dataclass
class PipelineReport:
    config: Config
    test_accuracy: float
    n_failures: int
    clustering: ClusteringResult | None
    clusters: list = field(default_factory=list)
    retraining: RetrainOutcome | None = None
    stage: str = "retrain"

    @property
    def covered_fraction(self) -> float:
        considered = [r for r in self.clusters if r.status != DEGENERATE]
        if not considered:
            return 0.0
        return sum(r.p1 is not None and len(r.p1) > 0 for r in considered) / len(considered)

    def summary_csv(self) -> str:
        return rows_to_csv([r.summary_row() for r in self.clusters])

    def to_text(self) -> str:
        lines = [
            f"scenario: {self.config.scenario}   seed: {self.config.seed}   stage: {self.stage}",
            f"test accuracy: {self.test_accuracy:.4f}   failing test inputs: {self.n_failures}",
        ]
        if self.clustering is None:
            lines.append("no failures to analyse" if self.n_failures == 0 else
                         "too few failures to cluster; steps 2-4 skipped")
            return "\n".join(lines) + "\n"
        lines.append(f"clusters: {len(self.clustering.clusters)} at layer {self.clustering.layer} "
                     f"(weighted intra-cluster distance {self.clustering.weighted_icd:.4f})")
        if self.clusters:
            lines.append(f"covered clusters: {self.covered_fraction:.1%}")
        for r in self.clusters:
            lines.append("")
            lines.append(f"cluster {r.cluster_id}: {r.size} failures, status {r.status}"
                         + (f" ({r.note})" if r.note else ""))
            if r.status == DEGENERATE:
                continue
            lines.append(f"  |P1|={_n(r.p1)} |P2|={_n(r.p2)} |P3|={_n(r.p3)}  diversity {r.diversity:.4f}"
                         f"  evaluations {r.evaluations}")
            if r.vrr:
                lines.append("  VRR: " + ", ".join(f"{k}={v:.3f}" for k, v in r.vrr.items()))
            if r.decision_list is not None:
                lines.append("  rules:")
                lines.extend("    " + ln for ln in r.decision_list.to_text().splitlines())
            if r.expression is not None:
                lines.append(f"  expression: {r.expression.render()}")
            if r.unsafe_space is not None:
                u = r.unsafe_space
                lines.append(f"  accuracy inside {u.accuracy_inside:.3f} vs random {u.accuracy_random:.3f}"
                             f" (n={u.n}, Fisher p={u.p_value:.3g})")
        if self.retraining is not None:
            rt = self.retraining
            lines.append("")
            lines.append(f"retraining with {rt.improvement_size} unsafe samples: "
                         f"original {rt.original_accuracy:.4f}, "
                         f"SEDE best {rt.sede.best_accuracy:.4f}, random baseline best {rt.baseline.best_accuracy:.4f}")
        return "\n".join(lines) + "\n"


def run_pipeline(cfg: Config, stage: str = "retrain", scenario: Scenario | None = None) -> PipelineReport:
    """Run the workflow up to ``stage`` (one of ``STAGES``)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    scenario = scenario or build_scenario(cfg)
    fails = failing_indices(scenario)
    report = PipelineReport(cfg, accuracy(scenario.net, scenario.test), len(fails), None, stage=stage)
    report.scenario = scenario
    if len(fails) == 0:
        return report
    report.clustering = step1(scenario, cfg)
    if report.clustering is None or stage == "cluster":
        return report
    report.clusters = analyse_clusters(report.clustering.clusters, scenario, cfg,
                                       evaluate=stage in ("evaluate", "retrain"))
    if stage == "retrain":
        report.retraining = step4(scenario, report.clusters, cfg)
    return report


def write_outputs(report: PipelineReport, outdir) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    sc = getattr(report, "scenario", None)
    if sc is not None and sc.trained:
        neural.save(sc.net, out / "model.txt")
    (out / "report.txt").write_text(report.to_text())
    if report.clustering is not None:
        (out / "assignments.csv").write_text(assignments_csv(report.clustering))
    if report.clusters:
        (out / "clusters.csv").write_text(report.summary_csv())
    space = sc.simulator.space if sc is not None else None
    for r in report.clusters:
        d = out / "clusters" / f"cluster_{r.cluster_id}"
        d.mkdir(parents=True, exist_ok=True)
        for name, X in (("P1", r.p1), ("P2", r.p2), ("P3", r.p3)):
            if X is not None and space is not None:
                (d / f"{name}.csv").write_text(space.to_csv(X))
        for name, rows in r.traces.items():
            (d / f"trace_{name}.csv").write_text(rows_to_csv(rows))
        if r.vrr:
            (d / "vrr.csv").write_text(rows_to_csv([{"parameter": k, "vrr": v} for k, v in r.vrr.items()]))
        if r.decision_list is not None:
            (d / "rules.txt").write_text(r.decision_list.to_text())
        if r.expression is not None:
            (out / "expressions").mkdir(exist_ok=True)
            (out / "expressions" / f"cluster_{r.cluster_id}.txt").write_text(r.expression.render() + "\n")
    if report.retraining is not None:
        rt = report.retraining
        rows = []
        for name, res in (("sede", rt.sede), ("random", rt.baseline)):
            for i, acc in enumerate(res.accuracies):
                rows.append({"method": name, "repetition": i, "accuracy": acc, "selected": int(i == res.best)})
        (out / "retrain.csv").write_text(rows_to_csv(rows))
        neural.save(rt.sede.model, out / "retrained_model.txt")
    return out


# search comparison


ALGORITHMS = {PAIR: pair_search, NSGA2: nsga2_baseline, DEEP_NSGA2: deep_nsga2_baseline}


@dataclass
class Comparison:
    """Per (algorithm, seed, cluster) outcomes of budget-matched searches."""

    budget: int
    seeds: list
    cluster_ids: list
    fraction: dict = field(default_factory=dict)  # (alg, seed, cid) -> in-cluster fraction
    diversity: dict = field(default_factory=dict)
    covered: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # (alg, metric) -> MetricSeries over checkpoints

    def mean_fraction(self, alg: str, cid) -> float:
        return float(np.mean([self.fraction[(alg, s, cid)] for s in self.seeds]))

    def covered_count(self, alg: str) -> int:
        return sum(self.covered[(alg, s, c)] for s in self.seeds for c in self.cluster_ids)

    def per_seed(self, metric: dict, alg: str) -> np.ndarray:
        return np.array([np.mean([metric[(alg, s, c)] for c in self.cluster_ids]) for s in self.seeds])

    def table(self) -> list[dict]:
        rows = []
        n = len(self.seeds) * len(self.cluster_ids)
        for other in (NSGA2, DEEP_NSGA2):
            for name, metric in (("in_cluster", self.fraction), ("diversity", self.diversity)):
                rows.append(comparison_row(f"{PAIR} vs {other}: {name}",
                                           self.per_seed(metric, PAIR), self.per_seed(metric, other)))
            a, b = self.covered_count(PAIR), self.covered_count(other)
            rows.append({"comparison": f"{PAIR} vs {other}: covered", "avg_ours": a / n, "avg_theirs": b / n,
                         "p_value": fisher_exact([[a, n - a], [b, n - b]])})
        return rows


def _checkpoint_values(trace: list, checkpoints: Sequence[int], key: str) -> list[float]:
    out = []
    for c in checkpoints:
        rows = [r for r in trace if r["evaluations"] <= c]
        out.append(float(rows[-1][key]) if rows else 0.0)
    return out


def compare_search_algorithms(clusters: Sequence[RootCauseCluster], scenario: Scenario, cfg: SearchRun,
                              seeds: Sequence[int], n_checkpoints: int = 5) -> Comparison:
    """Run PaiR and both baselines on each cluster and seed with equal evaluation budgets."""
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    budget = cfg.pair_evaluations
    clusters = [C for C in clusters if not C.degenerate]
    cmp = Comparison(budget, list(seeds), [int(C.label) for C in clusters])
    checkpoints = [int(round(budget * (i + 1) / n_checkpoints)) for i in range(n_checkpoints)]
    s = cfg.population_size
    for alg, fn in ALGORITHMS.items():
        series = {m: MetricSeries(checkpoints) for m in ("in_cluster", "diversity")}
        for seed in seeds:
            for C in clusters:
                ev = Evaluator(scenario.simulator, scenario.net, C.layer)
                run = SearchRun(alg, s, cfg.iterations, cfg.restarts, cfg.p_c, cfg.p_m, seed, budget=budget)
                res = fn(C, ev, run, stream(seed, KEY_COMPARE, int(C.label)))
                key = (alg, seed, int(C.label))
                cmp.fraction[key] = res.in_cluster_fraction
                cmp.diversity[key] = population_diversity(scenario.simulator.space, res.members)
                cmp.covered[key] = res.covered
                cmp.evaluations[key] = ev.requests
                series["in_cluster"].add([v / s for v in _checkpoint_values(res.trace, checkpoints, "in_cluster")])
                series["diversity"].add(_checkpoint_values(res.trace, checkpoints, "diversity"))
        for m, ser in series.items():
            cmp.series[(alg, m)] = ser
    return cmp


def write_comparison(cmp: Comparison, outdir) -> Path:
    d = Path(outdir) / "comparison"
    d.mkdir(parents=True, exist_ok=True)
    rows = [{"algorithm": a, "seed": s, "cluster_id": c, "in_cluster": cmp.fraction[(a, s, c)],
             "diversity": cmp.diversity[(a, s, c)], "covered": int(cmp.covered[(a, s, c)]),
             "evaluations": cmp.evaluations[(a, s, c)]}
            for a in ALGORITHMS for s in cmp.seeds for c in cmp.cluster_ids]
    (d / "runs.csv").write_text(rows_to_csv(rows))
    (d / "tests.csv").write_text(rows_to_csv(cmp.table()))
    series_rows = []
    for (alg, metric), ser in sorted(cmp.series.items()):
        for i, cp in enumerate(ser.checkpoints):
            vals = ser.at(i)
            series_rows.append({"algorithm": alg, "metric": metric, "evaluations": cp,
                                "mean": float(vals.mean()), "std": float(vals.std())})
    (d / "series.csv").write_text(rows_to_csv(series_rows))
    return d
