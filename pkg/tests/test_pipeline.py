import numpy as np
import pytest
from dataclasses import replace

from rcclens.config import Config
from rcclens.evolution import NSGA2, PAIR, SearchRun
from rcclens.neural import forward
from rcclens.pipeline import (
    CHARACTERIZED,
    ModelNotFoundError,
    Scenario,
    build_scenario,
    compare_search_algorithms,
    evaluate_unsafe_space,
    run_pipeline,
    write_comparison,
    write_outputs,
)
from rcclens.retrain import LabeledSet
from rcclens.rules import TRUE, UnsafeExpression
from rcclens.stats import comparison_row

FAST = Config(train_size=1500, field_size=200, test_size=800, train_epochs=20, pair_population=10,
              pair_iterations=10, pair_restarts=2, unsafe_population=10, unsafe_iterations=10,
              safe_population=10, safe_iterations=10, retrain_repetitions=1, retrain_epochs=3,
              retrain_per_cluster=20, eval_samples=200, max_k=4)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_reference_run_characterizes_planted_clusters(reference_report):
    r = reference_report
    assert r.n_failures > 0 and r.clustering is not None
    chars = [c for c in r.clusters if c.status == CHARACTERIZED]
    assert chars and all(c.expression.disjuncts for c in chars)
    assert r.retraining is not None and r.retraining.improvement_size == 50 * len(chars)
    text = r.to_text()
    assert "expression:" in text and "retraining with" in text


def test_output_layout(reference_report, tmp_path):
    out = write_outputs(reference_report, tmp_path / "out")
    names = set(_tree(out))
    for f in ("model.txt", "report.txt", "clusters.csv", "assignments.csv", "retrain.csv", "retrained_model.txt"):
        assert f in names
    for c in reference_report.clusters:
        if c.characterized:
            assert f"expressions/cluster_{c.cluster_id}.txt" in names
            for f in ("P1.csv", "P2.csv", "P3.csv", "rules.txt", "vrr.csv", "trace_pair.csv"):
                assert f"clusters/cluster_{c.cluster_id}/{f}" in names


def test_same_seed_same_outputs(tmp_path):
    a, b = run_pipeline(FAST), run_pipeline(FAST)
    assert a.to_text() == b.to_text()
    assert _tree(write_outputs(a, tmp_path / "a")) == _tree(write_outputs(b, tmp_path / "b"))
    assert run_pipeline(replace(FAST, seed=1)).to_text() != a.to_text()


def test_worker_count_does_not_change_results():
    sc = build_scenario(FAST)
    one = run_pipeline(FAST, "explain", scenario=sc).to_text()
    two = run_pipeline(replace(FAST, workers=2), "explain", scenario=sc).to_text()
    assert one == two


def test_zero_failures_skips_later_steps():
    sc = build_scenario(FAST)
    pred = np.argmax(forward(sc.net, sc.test.inputs).logits, axis=1)
    perfect = Scenario(sc.simulator, sc.net, sc.simulator_pool, sc.field_pool,
                       LabeledSet(sc.test.X, sc.test.inputs, pred), sc.trained)
    r = run_pipeline(FAST, scenario=perfect)
    assert r.n_failures == 0 and r.clustering is None and not r.clusters and r.retraining is None
    assert "no failures" in r.to_text()


def test_stage_and_model_errors(tmp_path):
    with pytest.raises(ValueError):
        run_pipeline(FAST, "bogus")
    with pytest.raises(ModelNotFoundError):
        build_scenario(replace(FAST, model_path=str(tmp_path / "none.txt")))


def test_unsafe_space_whole_box(reference_report, rng):
    sc = reference_report.scenario
    ev = evaluate_unsafe_space(UnsafeExpression((TRUE,)), 500, sc.simulator, sc.net, rng)
    assert abs(ev.accuracy_inside - ev.accuracy_random) < 0.05
    with pytest.raises(ValueError):
        evaluate_unsafe_space(UnsafeExpression((TRUE,)), 0, sc.simulator, sc.net, rng)


def test_unsafe_space_planted(reference_report):
    for c in reference_report.clusters:
        if c.characterized:
            assert c.unsafe_space.accuracy_inside < c.unsafe_space.accuracy_random


@pytest.fixture(scope="module")
def small_comparison(reference_report):
    clusters = sorted((C for C in reference_report.clustering.clusters if not C.degenerate), key=len, reverse=True)
    run = SearchRun(PAIR, 10, 20, 2, 0.7, 0.3)
    return compare_search_algorithms(clusters[:2], reference_report.scenario, run, [0, 1])


def test_comparison_budget_parity(small_comparison):
    cmp = small_comparison
    assert cmp.budget == 10 * (2 + 20)
    assert set(cmp.evaluations.values()) == {cmp.budget}


def test_comparison_diversity_and_self_test(small_comparison, tmp_path):
    cmp = small_comparison
    pair = cmp.per_seed(cmp.diversity, PAIR)
    assert pair.mean() >= cmp.per_seed(cmp.diversity, NSGA2).mean()
    row = comparison_row("self", pair, pair.copy())
    assert row["a12"] == 0.5 and row["p_value"] > 0.05
    d = write_comparison(cmp, tmp_path)
    assert {p.name for p in d.iterdir()} == {"runs.csv", "tests.csv", "series.csv"}
    with pytest.raises(ValueError):
        compare_search_algorithms([], None, SearchRun(), [0])
