import math

import numpy as np
import pytest

from declab import estimation as est
from declab import probkit as pk
from declab.dec import dec_lp
from declab.e2d import (TRACE_COLUMNS, ContextualClass, ExperimentConfig, contextual_e2d_step, e2d_bayes_step,
                        e2d_step, run_experiment)
from declab.errors import SchemaError, UnknownContext
from declab.models import Model, ModelClass, mixture

from conftest import mab_class, random_bernoulli_class, two_model_class


def test_option_one_example():
    cls = two_model_class()
    state = est.init_state(cls, [1.0, 0.0])
    p, value = e2d_step("I", state, cls, 1.0, "squared")
    np.testing.assert_allclose(p, [0.55, 0.45], atol=1e-9)
    assert value == pytest.approx(0.045, abs=1e-9)


def test_singleton_class_runs_without_regret():
    M = Model.bernoulli([0.3, 0.8, 0.1])
    cls = ModelClass((M,))
    p, value = e2d_step("I", est.init_state(cls), cls, 2.0, "hellinger")
    np.testing.assert_allclose(p, [0, 1, 0], atol=1e-12)
    assert value == pytest.approx(0, abs=1e-12)
    for option in ("I", "II", "Bayes", "Generalized"):
        tr = run_experiment(cls, 0, ExperimentConfig(T=25, gamma=2.0, option=option))
        assert tr.summary["cum_regret"] == pytest.approx(0, abs=1e-9)


def test_empty_horizon():
    tr = run_experiment(two_model_class(), 0, ExperimentConfig(T=0, gamma=1.0))
    assert tr.t.size == 0 and tr.summary["cum_regret"] == 0.0


def test_option_two_with_infinite_radius_matches_option_one():
    cls = mab_class(4, 0.2)
    a = run_experiment(cls, 1, ExperimentConfig(T=60, gamma=10.0, option="I", seed=3))
    b = run_experiment(cls, 1, ExperimentConfig(T=60, gamma=10.0, option="II", seed=3, radius2=math.inf))
    np.testing.assert_array_equal(a.pi, b.pi)
    np.testing.assert_allclose(a.inst_regret, b.inst_regret, atol=1e-12)


def test_bayes_grouping():
    cls = two_model_class()
    step = e2d_bayes_step(cls, [0.5, 0.5], 1.0, "hellinger")
    assert len(step.coarse_class) == 2
    np.testing.assert_allclose(step.coarse_weights, [0.5, 0.5])
    np.testing.assert_allclose(step.reference.fvec, mixture(cls, [0.5, 0.5]).fvec)
    shared = ModelClass((Model.bernoulli([0.7, 0.2]), Model.bernoulli([0.9, 0.4])))
    step = e2d_bayes_step(shared, [0.25, 0.75], 1.0, "hellinger")
    assert len(step.coarse_class) == 1
    np.testing.assert_allclose(step.coarse_class[0].fvec, [0.85, 0.35])
    point = e2d_bayes_step(cls, [0.0, 1.0], 1.0, "hellinger")
    np.testing.assert_allclose(point.p, [0, 1], atol=1e-9)
    expected = e2d_bayes_step(cls, [0.5, 0.5], 1.0, "hellinger", mode="expected")
    assert set(np.round(expected.p, 12)) <= {0.0, 1.0}


def test_contextual():
    a = two_model_class()
    b = ModelClass((Model.bernoulli([0.5, 0.6]), Model.bernoulli([0.6, 0.5])))  # best arms swapped
    ccls = ContextualClass((a, b), [0.5, 0.5])
    state = est.init_state(a, [1.0, 0.0])
    p0, v0 = contextual_e2d_step(0, ccls, state, 1.0, "squared")
    p1, v1 = contextual_e2d_step(1, ccls, state, 1.0, "squared")
    np.testing.assert_allclose(p0, dec_lp(a, a[0], 1.0, "squared").witness, atol=1e-9)
    np.testing.assert_allclose(p1, dec_lp(b, b[0], 1.0, "squared").witness, atol=1e-9)
    assert not np.allclose(p0, p1)
    with pytest.raises(UnknownContext):
        ccls.project(2)
    single = ContextualClass((ModelClass((Model.bernoulli([0.2, 0.9]),)),), [1.0])
    p, _ = contextual_e2d_step(0, single, est.init_state(single.project(0)), 1.0, "hellinger")
    np.testing.assert_allclose(p, [0, 1], atol=1e-12)


def test_single_context_replays_option_one():
    cls = mab_class(3, 0.2)
    a = run_experiment(cls, 2, ExperimentConfig(T=40, gamma=5.0, option="I", seed=11))
    b = run_experiment(ContextualClass((cls,), [1.0]), 2, ExperimentConfig(T=40, gamma=5.0, option="Contextual", seed=11))
    for c in TRACE_COLUMNS:
        np.testing.assert_array_equal(getattr(a, c), getattr(b, c))


@pytest.mark.parametrize("option", ["I", "II", "Bayes", "Generalized"])
@pytest.mark.parametrize("div", ["hellinger", "squared", "kl"])
def test_pathwise_bound_and_trace_algebra(option, div, rng):
    for _ in range(3):
        cls = random_bernoulli_class(rng, 4, 3)
        truth = int(rng.integers(4))
        tr = run_experiment(cls, truth, ExperimentConfig(T=40, gamma=4.0, option=option, divergence=div,
                                                        seed=int(rng.integers(1000))))
        assert tr.pathwise_ok()
        np.testing.assert_array_equal(tr.cum_regret, np.cumsum(tr.inst_regret))
        np.testing.assert_array_equal(tr.cum_est, np.cumsum(tr.hell_inc))
        assert tr.summary["cum_regret"] <= tr.summary["bound_rhs"] + 1e-9


def test_gaussian_class_with_randomized_estimator():
    cls = ModelClass(tuple(Model(tuple(pk.Gaussian(0.5 + 0.2 * (a == i), 1.0) for a in range(3))) for i in range(3)))
    tr = run_experiment(cls, 0, ExperimentConfig(T=30, gamma=5.0, option="Generalized", seed=2))
    assert tr.pathwise_ok()


def test_determinism():
    cls = mab_class(5, 0.2)
    a = run_experiment(cls, 2, ExperimentConfig(T=100, gamma=10.0, seed=9))
    b = run_experiment(cls, 2, ExperimentConfig(T=100, gamma=10.0, seed=9))
    for c in TRACE_COLUMNS:
        np.testing.assert_array_equal(getattr(a, c), getattr(b, c))
    c2 = run_experiment(cls, 2, ExperimentConfig(T=100, gamma=10.0, seed=10))
    assert not np.array_equal(a.pi, c2.pi)


def test_config_validation():
    with pytest.raises(SchemaError):
        ExperimentConfig(T=10, gamma=-1.0)
    with pytest.raises(SchemaError):
        ExperimentConfig(T=10, gamma=1.0, option="III")
    with pytest.raises(SchemaError):
        run_experiment(two_model_class(), 5, ExperimentConfig(T=1, gamma=1.0))
