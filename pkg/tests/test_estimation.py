import math

import numpy as np
import pytest
from scipy.special import logsumexp

from declab import estimation as est
from declab import probkit as pk
from declab.errors import AllZeroLikelihood, EmptyActiveSet
from declab.models import Model, ModelClass

from conftest import random_bernoulli_class


def run_sequence(cls, obs):
    state = est.init_state(cls)
    for o in obs:
        state = est.aggregate_update(state, cls, o)
    return state


def random_observations(cls, rng, T):
    out = []
    truth = cls[int(rng.integers(len(cls)))]
    for _ in range(T):
        pi = int(rng.integers(cls.n_decisions))
        r, lab = truth.outcomes[pi].sample(rng)
        out.append((pi, r, lab))
    return out


def test_singleton():
    cls = ModelClass((Model.bernoulli([0.3, 0.8]),))
    state = run_sequence(cls, [(0, 1.0, None), (1, 0.0, None)])
    np.testing.assert_allclose(state.weights, [1.0])
    assert state.reg_kl() == pytest.approx(0.0, abs=1e-12)


def test_one_bayes_step():
    cls = ModelClass((Model.bernoulli([0.9]), Model.bernoulli([0.1])))
    state = run_sequence(cls, [(0, 1.0, None)])
    np.testing.assert_allclose(state.weights, [0.9, 0.1], atol=1e-12)


def test_reg_kl_against_direct_bayes_marginal(rng):
    for _ in range(200):
        cls = random_bernoulli_class(rng, int(rng.integers(1, 9)))
        obs = random_observations(cls, rng, int(rng.integers(1, 51)))
        state = run_sequence(cls, obs)
        # oracle: learner log loss is -log of the Bayes marginal likelihood
        ll = np.array([[m.outcomes[pi].log_density(r) for pi, r, _ in obs] for m in cls]).sum(axis=1)
        marginal = logsumexp(ll) - math.log(len(cls))
        assert state.learner_logloss == pytest.approx(-marginal, abs=1e-9)
        assert state.reg_kl() == pytest.approx(-marginal + ll.max(), abs=1e-9)
        assert state.reg_kl() <= math.log(len(cls)) + 1e-9


def test_order_invariance(rng):
    cls = random_bernoulli_class(rng, 5, 3)
    obs = random_observations(cls, rng, 30)
    a = run_sequence(cls, obs)
    b = run_sequence(cls, obs[::-1])
    np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-12)


def test_all_zero_likelihood():
    cls = ModelClass((Model.bernoulli([1.0]), Model.bernoulli([1.0])))
    with pytest.raises(AllZeroLikelihood):
        est.aggregate_update(est.init_state(cls), cls, (0, 0.0, None))


def test_predict_examples():
    cls = ModelClass((Model.bernoulli([0.2]), Model.bernoulli([0.8])))
    st = est.init_state(cls, [1.0, 0.0])
    assert est.predict(st, cls).outcomes[0] == pk.Bernoulli(0.2)
    st = est.init_state(cls)
    assert est.predict(st, cls).outcomes[0] == pk.Bernoulli(0.5)
    sharp = ModelClass((Model.bernoulli([0.0]), Model.bernoulli([0.0])))
    sm = est.predict(est.init_state(sharp), sharp, smoothing=0.1).outcomes[0]
    assert min(sm.mu, 1 - sm.mu) == pytest.approx(0.05)


def test_predict_restricted():
    cls = ModelClass(tuple(Model.bernoulli([m]) for m in (0.1, 0.5, 0.9)))
    st = est.init_state(cls, [0.6, 0.3, 0.1])
    np.testing.assert_allclose(est.restricted_weights(st, [1, 2]), [0.75, 0.25])
    assert est.predict_restricted(st, cls, [1, 2]).fvec[0] == pytest.approx(0.75 * 0.5 + 0.25 * 0.9)
    assert est.predict_restricted(st, cls, [2]).fvec[0] == pytest.approx(0.9)
    full = est.predict_restricted(st, cls, [0, 1, 2]).fvec
    np.testing.assert_allclose(full, est.predict(st, cls).fvec, atol=1e-12)
    with pytest.raises(EmptyActiveSet):
        est.predict_restricted(st, cls, [])


def test_confidence_set_examples():
    cls = ModelClass((Model.bernoulli([0.6, 0.5]), Model.bernoulli([0.5, 0.6])))
    assert est.confidence_set([], cls, 0.001) == [0, 1]
    assert est.confidence_set([(np.array([1.0, 0.0]), cls[0])], cls, math.inf) == [0, 1]
    d = pk.divergence("hellinger", pk.Bernoulli(0.5), pk.Bernoulli(0.6))
    hist = [(np.array([1.0, 0.0]), cls[0])]
    assert est.confidence_set(hist, cls, d) == [0, 1]
    assert est.confidence_set(hist, cls, d * (1 - 1e-9)) == [0]


def test_confidence_set_nesting(rng):
    cls = random_bernoulli_class(rng, 6, 3)
    hist, prev = [], None
    for _ in range(20):
        hist.append((rng.dirichlet(np.ones(3)), cls[int(rng.integers(6))]))
        cur = est.confidence_set(hist, cls, 0.3, prev)
        if prev is not None:
            assert set(cur) <= set(prev)
        prev = cur


def test_ledger():
    M = Model.bernoulli([0.6, 0.2])
    st = est.init_state(ModelClass((M,)))
    assert est.ledger_add(st, [0.3, 0.7], M, M).ledger == 0.0
    st1 = est.ledger_add(st, [1.0, 0.0], Model.bernoulli([0.5, 0.2]), M)
    expected = (math.sqrt(0.6) - math.sqrt(0.5)) ** 2 + (math.sqrt(0.4) - math.sqrt(0.5)) ** 2
    assert st1.ledger == pytest.approx(expected, abs=1e-15)
    st2 = est.ledger_add(st1, [1.0, 0.0], Model.bernoulli([0.5, 0.2]), M)
    assert st2.ledger == pytest.approx(2 * expected, abs=1e-15)


def test_default_radius():
    assert est.default_radius(5, 0.05) == pytest.approx(math.log(5) + 2 * math.log(20))
