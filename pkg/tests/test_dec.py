import math

import numpy as np
import pytest
from scipy.optimize import linprog as scipy_linprog

from declab.dec import (dec_dual_lp, dec_lp, dec_randomized, igw, igw_sup_objective, objective_matrix,
                        posterior_sampling_certificate, witness_objective)
from declab.errors import SchemaError
from declab.families import make_family
from declab.models import Model, ModelClass, divergence_matrix, gap_matrix

from conftest import random_bernoulli_class, two_model_class


def grid_value(cls, ref_weights, refs, gamma, div, step=1e-4):
    """min over p = (p1, 1-p1) of max_M objective, by grid search."""
    D = sum(w * divergence_matrix(div, cls.models, R) for w, R in zip(ref_weights, refs))
    C = gap_matrix(cls) - gamma * D
    p1 = np.arange(0, 1 + step / 2, step)
    P = np.stack([p1, 1 - p1])
    vals = (C @ P).max(axis=0)
    k = int(np.argmin(vals))
    return vals[k], p1[k]


def scipy_value(C):
    N, A = C.shape
    c = np.r_[np.zeros(A), 1.0]
    A_ub = np.hstack([C, -np.ones((N, 1))])
    res = scipy_linprog(c, A_ub=A_ub, b_ub=np.zeros(N), A_eq=np.r_[np.ones(A), 0.0][None],
                        b_eq=[1.0], bounds=[(0, None)] * A + [(None, None)], method="highs")
    return res.fun


def test_singleton_class():
    M = Model.bernoulli([0.2, 0.9, 0.4])
    cert = dec_lp(ModelClass((M,)), M, 1.0, "hellinger")
    assert cert.value == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(cert.witness, [0, 1, 0], atol=1e-12)
    low = dec_dual_lp(ModelClass((M,)), M, 1.0, "hellinger")
    assert low.value == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(low.prior, [1.0])


def test_two_model_example_against_grid():
    cls = two_model_class()
    cert = dec_lp(cls, cls[0], 1.0, "squared")
    val, p1 = grid_value(cls, [1.0], [cls[0]], 1.0, "squared")
    assert cert.value == pytest.approx(0.045, abs=1e-9)
    assert val == pytest.approx(0.045, abs=1e-8)
    np.testing.assert_allclose(cert.witness, [0.55, 0.45], atol=1e-9)
    assert p1 == pytest.approx(0.55, abs=1e-4)
    assert cert.to_json()["method"] == "LP"
    assert dec_dual_lp(cls, cls[0], 1.0, "squared").value == pytest.approx(0.045, abs=1e-6)


def test_two_model_gamma_ten():
    cls = two_model_class()
    cert = dec_lp(cls, cls[0], 10.0, "squared")
    val, _ = grid_value(cls, [1.0], [cls[0]], 10.0, "squared")
    assert cert.value == pytest.approx(0.0, abs=1e-9) and val == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(cert.witness, [1, 0], atol=1e-9)


def test_primal_dual_against_scipy(rng):
    for _ in range(150):
        cls = random_bernoulli_class(rng)
        ref = random_bernoulli_class(rng, 1, cls.n_decisions)[0]
        gamma = float(rng.choice([0.5, 1.0, 5.0, 50.0]))
        div = str(rng.choice(["hellinger", "squared", "kl", "tv"]))
        C = objective_matrix(cls, ref, gamma, div)
        primal = dec_lp(cls, ref, gamma, div)
        dual = dec_dual_lp(cls, ref, gamma, div)
        assert primal.value == pytest.approx(scipy_value(C), abs=1e-7)
        assert abs(primal.value - dual.value) <= 1e-6
        # witness is a certificate: no member beats the reported value
        assert np.max(witness_objective(cls, ref, gamma, div, primal.witness)) <= primal.value + 1e-9
        # random distributions cannot beat the LP optimum
        for p in rng.dirichlet(np.ones(cls.n_decisions), size=20):
            assert np.max(C @ p) >= primal.value - 1e-9


def test_monotonicity(rng):
    for _ in range(60):
        cls = random_bernoulli_class(rng, 5)
        ref = cls[0]
        vals = [dec_lp(cls, ref, g, "hellinger").value for g in (0.5, 1, 2, 8, 32)]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))
        sub = cls.subset([0, 1, 2])
        assert dec_lp(sub, ref, 2.0, "hellinger").value <= dec_lp(cls, ref, 2.0, "hellinger").value + 1e-9
        assert dec_lp(cls, ref, 2.0, "hellinger").value <= dec_lp(cls, ref, 2.0, "squared").value + 1e-9


def test_invalid_gamma_and_empty():
    cls = two_model_class()
    with pytest.raises(SchemaError):
        dec_lp(cls, cls[0], 0.0, "hellinger")
    with pytest.raises(SchemaError):
        dec_lp(ModelClass(()), cls[0], 1.0, "hellinger")


def test_igw_examples():
    cert = igw(np.full(4, 0.3), 2.0)
    assert cert.info["lambda"] == pytest.approx(4.0, abs=1e-10)
    np.testing.assert_allclose(cert.witness, 0.25, atol=1e-12)
    cert = igw([1.0, 0.0], 1.0)
    lam = cert.info["lambda"]
    assert 1 / lam + 1 / (lam + 2) == pytest.approx(1.0, abs=1e-11)
    assert lam == pytest.approx(math.sqrt(2), abs=1e-9)
    np.testing.assert_allclose(cert.witness, [0.707107, 0.292893], atol=1e-6)
    assert cert.value == pytest.approx(2.0)


def _grid_sup(fbar, p, gamma, n=401):
    """Brute-force sup over a grid of mean vectors (A = 2)."""
    g = np.linspace(0, 1, n)
    m1, m2 = np.meshgrid(g, g, indexing="ij")
    obj = np.maximum(m1, m2) - p[0] * m1 - p[1] * m2 - gamma * (p[0] * (m1 - fbar[0]) ** 2 + p[1] * (m2 - fbar[1]) ** 2)
    return obj.max()


def test_igw_sup_objective_against_grid(rng):
    for _ in range(30):
        fbar = rng.uniform(0, 1, 2)
        gamma = float(rng.choice([0.5, 2.0, 10.0]))
        p = rng.dirichlet(np.ones(2))
        exact = igw_sup_objective(fbar, p, gamma)
        grid = _grid_sup(fbar, p, gamma)
        assert exact >= grid - 1e-12
        assert exact <= grid + 2e-4


@pytest.mark.parametrize("A", [2, 5, 10])
@pytest.mark.parametrize("gamma", [1.0, 10.0, 100.0])
def test_igw_certificate(A, gamma, rng):
    for _ in range(20):
        fbar = rng.uniform(0, 1, A)
        cert = igw(fbar, gamma)
        assert igw_sup_objective(fbar, cert.witness, gamma) <= A / gamma + 1e-9
        cls = random_bernoulli_class(rng, 4, A)
        ref = Model.bernoulli(fbar)
        assert dec_lp(cls, ref, gamma, "squared").value <= cert.value + 1e-9


def test_posterior_sampling_examples():
    cls = two_model_class()
    ps = posterior_sampling_certificate(cls, [0.5, 0.5], cls[0], 1.0, "squared")
    np.testing.assert_allclose(ps.witness, [0.5, 0.5])
    # hand evaluation: M1 row (0, 0.1) . p = 0.05, M2 row (0.09, -0.01) . p = 0.04
    assert ps.value == pytest.approx(0.5 * 0.05 + 0.5 * 0.04, abs=1e-12)
    assert ps.value == pytest.approx(0.045, abs=1e-12)
    M = cls[1]
    one = posterior_sampling_certificate(cls, [0.0, 1.0], M, 3.0, "hellinger")
    np.testing.assert_allclose(one.witness, [0, 1])
    assert one.value <= 0


def test_posterior_sampling_mab_bound(rng):
    # uniform prior over Bernoulli MAB-style classes: value <= A / gamma
    for A in (2, 4, 6):
        for gamma in (1.0, 10.0):
            cls = random_bernoulli_class(rng, 6, A)
            mu = np.full(len(cls), 1 / len(cls))
            ref = Model.bernoulli(mu @ cls.fmat)
            ps = posterior_sampling_certificate(cls, mu, ref, gamma, "squared")
            assert ps.value <= A / gamma + 1e-9


def test_dec_randomized():
    cls = two_model_class()
    same = dec_randomized(cls, [cls[0]], [1.0], 1.0, "squared")
    base = dec_lp(cls, cls[0], 1.0, "squared")
    assert same.value == pytest.approx(base.value, abs=1e-12)
    np.testing.assert_allclose(same.witness, base.witness)
    rand = dec_randomized(cls, list(cls), [0.5, 0.5], 1.0, "squared")
    val, _ = grid_value(cls, [0.5, 0.5], list(cls), 1.0, "squared")
    assert rand.value == pytest.approx(val, abs=1e-7)
    assert rand.value <= max(dec_lp(cls, m, 1.0, "squared").value for m in cls) + 1e-9


def test_mab_family_dual_bound():
    for A, delta, gamma in [(3, 0.1, 5.0), (4, 0.05, 20.0), (8, 0.02, 50.0)]:
        f = make_family("mab", A=A, delta=delta)
        val = dec_dual_lp(f.cls, f.ref, gamma, "hellinger").value
        assert val >= delta / 2 - 3 * gamma * delta**2 / A - 1e-9
