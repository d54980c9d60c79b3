import numpy as np
import pytest
from scipy.optimize import linprog as scipy_linprog

from declab.errors import LPInfeasible, LPUnbounded
from declab.lp import linprog


def test_matches_scipy_on_random_feasible_problems(rng):
    for _ in range(200):
        n, m = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)
        c = rng.normal(size=n)
        A_eq = np.ones((1, n))
        b_eq = np.array([x0.sum()])
        ours = linprog(c, A, b, A_eq, b_eq)
        ref = scipy_linprog(c, A_ub=A, b_ub=b, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        assert ref.status == 0
        assert ours.fun == pytest.approx(ref.fun, abs=1e-7)
        assert np.all(A @ ours.x <= b + 1e-8) and np.all(ours.x >= -1e-12)


def test_degenerate_and_redundant_rows():
    c = np.array([-1.0, -1.0])
    A_eq = np.array([[1.0, 1.0], [2.0, 2.0]])  # dependent
    b_eq = np.array([1.0, 2.0])
    res = linprog(c, None, None, A_eq, b_eq)
    assert res.fun == pytest.approx(-1.0)


def test_infeasible_and_unbounded():
    with pytest.raises(LPInfeasible):
        linprog(np.array([1.0]), np.array([[1.0]]), np.array([-1.0]))
    with pytest.raises(LPUnbounded):
        linprog(np.array([-1.0, 0.0]), np.array([[0.0, 1.0]]), np.array([1.0]))
