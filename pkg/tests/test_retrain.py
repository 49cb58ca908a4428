import numpy as np
import pytest

from rcclens.neural import DenseNet, dumps
from rcclens.retrain import (
    LabeledSet,
    RetrainConfig,
    accuracy,
    build_unsafe_set,
    retrain,
    subsample,
)
from rcclens.rules import Atom, UnsafeExpression, parse


@pytest.fixture(scope="module")
def pools(simulator):
    r = np.random.default_rng(3)
    sp = simulator.space
    return (LabeledSet.render(simulator, sp.random(r, 400)), LabeledSet.render(simulator, sp.random(r, 60)),
            LabeledSet.render(simulator, sp.random(r, 300)))


@pytest.fixture(scope="module")
def net(simulator):
    return DenseNet.initialize((simulator.config.input_dim, 16, simulator.config.class_count), seed=1)


EXPRS = {
    0: UnsafeExpression((parse("(pose_y > 30) & (pose_z > 5)"),)),
    3: UnsafeExpression((Atom("illumination", "<", 0.6),), (Atom("face_model", "=", "model_b"),)),
}


def test_build_unsafe_set(simulator, rng):
    U = build_unsafe_set(EXPRS, 50, simulator, rng)
    assert len(U) == 100
    for cid, expr in EXPRS.items():
        mine = U.source == cid
        assert mine.sum() == 50 and np.all(expr.evaluate(simulator.space, U.X[mine]))
    inputs, labels = simulator.render_batch(U.X)
    assert np.array_equal(inputs, U.inputs) and np.array_equal(labels, U.labels)
    assert len(build_unsafe_set(EXPRS, 0, simulator, rng)) == 0


def test_build_unsafe_set_skips_unsatisfiable(simulator, rng):
    bad = {1: UnsafeExpression((parse("(pose_y > 50) & (pose_y < 10)"),))}
    assert len(build_unsafe_set({**EXPRS, **bad}, 10, simulator, rng)) == 20


def test_subsample_counts(pools, rng):
    sim, fld, _ = pools
    assert len(subsample(sim, 5.0, rng)) == 20
    assert len(subsample(fld, 100.0, rng)) == len(fld)
    assert len(subsample(fld, 0.0, rng)) == 0


def test_mixture_proportions(pools, net, simulator, rng):
    sim, fld, test = pools
    U = build_unsafe_set(EXPRS, 50, simulator, rng)
    res = retrain(net, sim, fld, U, test, RetrainConfig(S=5, R=100, repetitions=3, epochs=2))
    assert res.mixture_sizes == [(20, 60, 100)] * 3
    assert len(res.accuracies) == 3 and res.best_accuracy == max(res.accuracies)
    assert res.report_csv().splitlines()[0] == "repetition,simulator,field,improvement,accuracy,selected"


def test_single_repetition_returns_that_model(pools, net):
    sim, fld, test = pools
    cfg = RetrainConfig(repetitions=1, epochs=3, seed=9)
    a = retrain(net, sim, fld, LabeledSet.concat([fld]), test, cfg)
    b = retrain(net, sim, fld, LabeledSet.concat([fld]), test, cfg)
    assert a.best == 0 and dumps(a.model) == dumps(b.model)
    assert a.accuracies[0] == accuracy(a.model, test)


def test_original_model_untouched(pools, net):
    before = dumps(net)
    retrain(net, *pools[:2], pools[1], pools[2], RetrainConfig(repetitions=1, epochs=1))
    assert dumps(net) == before


def test_divergent_repetition_scores_zero(pools, net):
    sim, fld, test = pools
    with np.errstate(all="ignore"):
        res = retrain(net, sim, fld, fld, test, RetrainConfig(repetitions=2, epochs=3, learning_rate=1e300))
    assert res.accuracies == [0.0, 0.0]


def test_config_validation(pools, net, simulator):
    with pytest.raises(ValueError):
        RetrainConfig(S=120)
    with pytest.raises(ValueError):
        RetrainConfig(repetitions=0)
    empty = LabeledSet.empty(simulator)
    with pytest.raises(ValueError):
        retrain(net, empty, empty, empty, pools[2], RetrainConfig())
    with pytest.raises(ValueError):
        accuracy(net, empty)
