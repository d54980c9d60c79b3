import dataclasses
import math

import numpy as np
import pytest

from declab import families as fam
from declab import mdp
from declab.errors import InvalidParams
from declab.models import ModelClass, localize_linf

SMALL = {
    "mab": {"A": 3, "delta": 0.1},
    "gap_mab": {"A": 4, "delta": 0.05},
    "linear": {"d": 4, "delta": 0.1},
    "gap_linear": {"d": 4, "delta": 0.1},
    "lipschitz": {"eps": 0.1},
    "relu": {"d": 2, "eps": 0.2},
    "tree": {"S": 4, "A": 2, "H": 2, "delta": 0.1},
    "linear_qstar": {"d": 8, "H": 2, "delta": 1 / 6, "m": 4},
}


def hellinger_ber(p, q):
    return (math.sqrt(p) - math.sqrt(q)) ** 2 + (math.sqrt(1 - p) - math.sqrt(1 - q)) ** 2


def test_mab_construction():
    f = fam.make_family("mab", A=3, delta=0.1)
    assert f.N == 3
    np.testing.assert_allclose(f.ref.fvec, 0.5)
    for i, M in enumerate(f.alternatives):
        np.testing.assert_allclose(M.fvec, 0.5 + 0.1 * np.eye(3)[i])
    rep = fam.verify_family(f)
    assert rep.passes and not rep.sampled and rep.n_points == 3
    assert (f.alpha, f.beta, f.delta) == (0.1, pytest.approx(0.03), 0.0)
    # information is exact: H^2(Ber(0.6), Ber(0.5)) on the alternative's own arm, 0 elsewhere
    D = f.information(np.arange(3))
    np.testing.assert_allclose(D, hellinger_ber(0.6, 0.5) * np.eye(3), atol=1e-15)
    assert rep.beta_tight == pytest.approx(hellinger_ber(0.6, 0.5), rel=1e-12)


def test_linear_construction():
    f = fam.make_family("linear", d=4, delta=0.1)
    assert f.N == 4
    pts = f.points
    for i, M in enumerate(f.alternatives):
        np.testing.assert_allclose(M.fvec, 0.1 * pts[:, i], atol=1e-15)
    np.testing.assert_allclose(f.ref.fvec, 0.0)
    assert fam.verify_family(f).passes


def test_tree_construction():
    f = fam.make_family("tree", S=4, A=2, H=2, delta=0.1)
    assert f.params["H1"] == 1
    P = f.ref.P
    # root 0 branches to leaves 1 and 2; state 3 is terminal
    assert P[0, 0, 0, 1] == 1 and P[0, 0, 1, 2] == 1
    assert P[0, 3, 0, 3] == 1 and P[0, 1, 1, 3] == 1
    assert f.params["index"] == [(1, 1, 1), (1, 2, 1)]
    rep = fam.verify_family(f)
    assert rep.passes and rep.sampled


def test_tree_sum_v_random_policies(rng):
    f = fam.make_family("tree", S=8, A=3, H=4, delta=0.1)
    pis = mdp.random_policies(f.ref.H, f.ref.S, f.ref.A, 1000, rng)
    V = f.v(pis)
    # independent: each trajectory exits the tree at most once, so total exit occupancy <= 1
    occ = mdp.occupancy(f.ref, pis)
    want = np.stack([occ[:, h, s, a] for h, s, a in f.params["index"]], axis=1)
    np.testing.assert_allclose(V, want, atol=1e-15)
    assert V.sum(axis=1).max() <= 1 + 1e-12


@pytest.mark.parametrize("kind", fam.KINDS)
def test_every_family_passes(kind):
    rep = fam.verify_family(fam.make_family(kind, **SMALL[kind]), n_random=300)
    assert rep.passes, rep.checks


@pytest.mark.parametrize("kind", [k for k in fam.KINDS if k != "linear_qstar"])
def test_understated_beta_fails(kind):
    # delta = 0 families: halving the tightest beta that the data admits must break the information check
    f = fam.make_family(kind, **SMALL[kind])
    assert f.delta == 0
    rep = fam.verify_family(f, n_random=300)
    assert 0 < rep.beta_tight <= f.beta
    bad = fam.verify_family(dataclasses.replace(f, beta=rep.beta_tight / 2), n_random=300)
    assert not bad.checks["information"]["ok"] and not bad.passes


def test_lower_bound_formula():
    f = fam.make_family("mab", A=4, delta=0.1)
    assert fam.family_lower_bound(f, 0.0) == f.alpha / 2
    for A, gamma in [(4, 10.0), (6, 25.0), (10, 100.0)]:
        f = fam.make_family("mab", A=A, delta=A / (12 * gamma))
        assert fam.family_lower_bound(f, gamma) == pytest.approx(A / (48 * gamma), rel=1e-12)


@pytest.mark.parametrize("kind", fam.KINDS)
def test_dual_lp_dominates_bound(kind):
    f = fam.make_family(kind, **SMALL[kind])
    for gamma in (1.0, 10.0, 100.0):
        val = fam.family_dual_lp(f, gamma)
        if val is None:
            continue
        assert val >= fam.family_lower_bound(f, gamma) - 1e-9


def test_mdp_dual_none_when_too_large():
    f = fam.make_family("linear_qstar", d=8, H=2, m=4)
    assert fam.family_dual_lp(f, 1.0) is None


def test_localization_membership():
    for A, delta in [(3, 0.1), (5, 0.05), (8, 0.2)]:
        f = fam.make_family("mab", A=A, delta=delta)
        members = ModelClass(tuple(f.alternatives) + (f.ref,))
        assert len(localize_linf(members, f.ref, delta)) == A + 1


def test_linear_qstar_vectors():
    f = fam.make_family("linear_qstar", d=16, H=3, delta=0.15, seed=3)
    m = f.params["m"]
    assert m == max(4, math.ceil(math.exp(0.15**2 * 16 / 8)))
    rng = np.random.default_rng(3)
    V = fam.near_orthogonal(m, 16, 0.15, rng)
    G = V @ V.T
    np.testing.assert_allclose(np.diag(G), 1.0)
    assert np.abs(G - np.eye(m)).max() <= 0.15
    with pytest.raises(Exception):
        fam.near_orthogonal(50, 2, 0.01, rng, max_draws=1000)


def test_greedy_packing():
    X = np.linspace(0, 1, 21)[:, None]
    idx = fam.greedy_packing(X, 0.2)
    pts = X[idx, 0]
    assert np.min(np.diff(np.sort(pts))) >= 0.2 - 1e-12
    # maximality: every grid point is within 0.2 of the packing
    assert np.max(np.min(np.abs(X - pts[None, :]), axis=1)) < 0.2


def test_deterministic_policies():
    pis = fam.deterministic_policies(2, 2, 2)
    assert pis.shape == (16, 2, 2, 2)
    assert len({p.tobytes() for p in pis}) == 16
    np.testing.assert_array_equal(pis.sum(-1), 1.0)


@pytest.mark.parametrize("kind,params", [
    ("mab", {"A": 1, "delta": 0.1}),
    ("mab", {"A": 3, "delta": 0.5}),
    ("mab", {"A": 3, "delta": 0.0}),
    ("gap_mab", {"A": 3, "delta": 0.2}),
    ("linear", {"d": 4, "delta": 0.1, "bogus": 1}),
    ("tree", {"S": 6, "A": 2, "H": 4, "delta": 0.1}),
    ("tree", {"S": 8, "A": 2, "H": 2, "delta": 0.1}),
    ("linear_qstar", {"d": 8, "H": 2, "delta": 0.3}),
    ("nonsense", {}),
])
def test_invalid_params(kind, params):
    with pytest.raises(InvalidParams):
        fam.make_family(kind, **params)


def test_report_json():
    rep = fam.verify_family(fam.make_family("mab", A=3, delta=0.1))
    js = rep.to_json()
    assert set(js) == {"passes", "checks", "n_points", "sampled", "beta_tight"}
    assert set(js["checks"]) == {"sum_u", "sum_v", "regret", "information"}
