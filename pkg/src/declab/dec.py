"""Exact DEC values for finite classes and closed-form DEC certificates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import probkit as pk
from .errors import SchemaError, UnsupportedDivergence
from .lp import linprog
from .models import Model, ModelClass, divergence_matrix, gap_matrix

BISECT_TOL = 1e-12
BISECT_ITERS = 200


@dataclass
class DecCertificate:
    gamma: float
    divergence: pk.DivergenceKind
    value: float
    witness: np.ndarray
    method: str
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"value": float(self.value), "p": [float(x) for x in self.witness], "method": self.method}


@dataclass
class DecLowerWitness:
    prior: np.ndarray
    value: float


def objective_matrix(cls: ModelClass, ref: Model, gamma: float, div) -> np.ndarray:
    """C[M, pi] = f_M(pi_M) - f_M(pi) - gamma * D(M(pi) || ref(pi))."""
    D = divergence_matrix(div, cls.models, ref)
    return _objective(cls, gamma, D)


def _objective(cls: ModelClass, gamma: float, D: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(D)):
        raise UnsupportedDivergence("infinite divergence entries (support mismatch)")
    return gap_matrix(cls) - gamma * D


def _check(cls: ModelClass, gamma: float):
    if len(cls) == 0:
        raise SchemaError("DEC of an empty class")
    if not gamma > 0:
        raise SchemaError(f"gamma must be positive, got {gamma}")


def solve_primal(C: np.ndarray) -> tuple[float, np.ndarray]:
    """min_p max_M C[M] @ p over the simplex; returns (LP value, p)."""
    N, A = C.shape
    # variables: p (A), t+, t-
    c = np.zeros(A + 2)
    c[A], c[A + 1] = 1.0, -1.0
    A_ub = np.hstack([C, -np.ones((N, 1)), np.ones((N, 1))])
    A_eq = np.zeros((1, A + 2))
    A_eq[0, :A] = 1.0
    res = linprog(c, A_ub, np.zeros(N), A_eq, np.ones(1))
    return res.fun, _simplex_project(res.x[:A])


def solve_dual(C: np.ndarray) -> tuple[float, np.ndarray]:
    """max_mu min_pi (mu @ C)[pi]; returns (LP value, mu)."""
    N, A = C.shape
    c = np.zeros(N + 2)
    c[N], c[N + 1] = -1.0, 1.0
    A_ub = np.hstack([-C.T, np.ones((A, 1)), -np.ones((A, 1))])
    A_eq = np.zeros((1, N + 2))
    A_eq[0, :N] = 1.0
    res = linprog(c, A_ub, np.zeros(A), A_eq, np.ones(1))
    return -res.fun, _simplex_project(res.x[:N])


def _simplex_project(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def _certificate(C, gamma, div, method, info=None) -> DecCertificate:
    lp_value, p = solve_primal(C)
    value = float(np.max(C @ p))
    info = dict(info or {})
    info["lp_value"] = lp_value
    return DecCertificate(gamma, pk.DivergenceKind.parse(div), value, p, method, info)


def dec_lp(cls: ModelClass, ref: Model, gamma: float, div) -> DecCertificate:
    """DEC of a finite class at reference ``ref`` via the minimax LP.

    The reported value is the witness's worst case over the class, which
    agrees with the LP optimum up to solver tolerance.
    """
    _check(cls, gamma)
    return _certificate(objective_matrix(cls, ref, gamma, div), gamma, div, "LP")


def dec_dual_lp(cls: ModelClass, ref: Model, gamma: float, div) -> DecLowerWitness:
    _check(cls, gamma)
    C = objective_matrix(cls, ref, gamma, div)
    _, mu = solve_dual(C)
    return DecLowerWitness(mu, float(np.min(mu @ C)))


def dec_randomized(cls: ModelClass, nu_models: Sequence[Model], nu_weights, gamma: float, div) -> DecCertificate:
    """DEC against a randomized reference: divergence column averaged over nu."""
    _check(cls, gamma)
    w = np.asarray(nu_weights, dtype=float)
    D = sum(wk * divergence_matrix(div, cls.models, Mk) for wk, Mk in zip(w, nu_models) if wk > 0)
    return _certificate(_objective(cls, gamma, D), gamma, div, "LP", {"randomized": True})


def witness_objective(cls: ModelClass, ref: Model, gamma: float, div, p) -> np.ndarray:
    """Per-model objective E_{pi~p}[...] of a fixed witness."""
    return objective_matrix(cls, ref, gamma, div) @ np.asarray(p, dtype=float)


# ---------------------------------------------------------------- IGW


def bisect_normalizer(mass, lo: float, hi: float) -> float:
    """Root of the decreasing map lam -> mass(lam) - 1 on [lo, hi]."""
    if mass(lo) < 1.0:
        return lo
    if mass(hi) > 1.0:
        return hi
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if mass(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECT_TOL:
            break
    return 0.5 * (lo + hi)


def igw_weights(fbar, gamma: float) -> tuple[np.ndarray, float]:
    fbar = np.asarray(fbar, dtype=float)
    gaps = fbar.max() - fbar
    lam = bisect_normalizer(lambda l: float(np.sum(1.0 / (l + 2 * gamma * gaps))), 1.0, float(fbar.size))
    p = 1.0 / (lam + 2 * gamma * gaps)
    return p / p.sum(), lam


def igw(fbar, gamma: float) -> DecCertificate:
    """Inverse gap weighting; certifies A/gamma for the squared-mean DEC."""
    if not gamma > 0:
        raise SchemaError("gamma must be positive")
    p, lam = igw_weights(fbar, gamma)
    return DecCertificate(gamma, pk.DivergenceKind.SQUARED, p.size / gamma, p, "IGW", {"lambda": lam})


def igw_sup_objective(fbar, p, gamma: float) -> float:
    """Exact sup over all mean vectors m in [0,1]^A of
    max_j m_j - <p, m> - gamma * sum_pi p(pi) (m(pi) - fbar(pi))^2.

    For a fixed best arm j the objective separates into concave quadratics.
    """
    fbar = np.asarray(fbar, dtype=float)
    p = np.asarray(p, dtype=float)

    def best(lin, quad, center):
        # maximize lin*m - quad*(m-center)^2 on [0,1]
        m = center + lin / (2 * quad) if quad > 0 else (1.0 if lin > 0 else 0.0)
        m = np.clip(m, 0.0, 1.0)
        return lin * m - quad * (m - center) ** 2

    others = np.array([best(-p[i], gamma * p[i], fbar[i]) for i in range(p.size)])
    total = others.sum()
    vals = [total - others[j] + best(1 - p[j], gamma * p[j], fbar[j]) for j in range(p.size)]
    return float(max(vals))


# ---------------------------------------------------------------- posterior sampling


def posterior_sampling_certificate(cls: ModelClass, mu, ref: Model, gamma: float, div) -> DecCertificate:
    """p = law of pi_M under M ~ mu; value is the dual objective at (mu, p).

    ``info['worst_case']`` holds the witness's maximum over the class.
    """
    _check(cls, gamma)
    mu = np.asarray(mu, dtype=float)
    C = objective_matrix(cls, ref, gamma, div)
    p = np.zeros(cls.n_decisions)
    for w, m in zip(mu, cls):
        p[int(np.argmax(m.fvec))] += w
    p = p / p.sum()
    value = float(mu @ C @ p)
    return DecCertificate(gamma, pk.DivergenceKind.parse(div), value, p, "PosteriorSampling",
                          {"worst_case": float(np.max(C @ p))})
