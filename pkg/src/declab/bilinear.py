"""Bilinear embeddings, IGW barycentric spanners and PC-IGW for bilinear classes.

Layers are 0-based.  ``X`` and ``W`` have shape (N, H, d) for a class of N
members; the planning oracle maximizes <X(M), theta> over the concatenated
(H*d)-vector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from . import mdp as mdpmod
from .dec import DecCertificate, bisect_normalizer
from .errors import GammaTooSmall, NonconvergenceGuard, SchemaError
from .models import Model, ModelClass
from .probkit import DivergenceKind

SWAP_FACTOR = math.sqrt(2.0)
SWAP_RTOL = 1e-12
PINV_CUTOFF = 1e-10
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BilinearEmbedding:
    X: np.ndarray  # (N, H, d)
    W: np.ndarray  # (N, H, d)
    theta_ref: np.ndarray  # (H*d,)
    ref_idx: int
    L_bi: float = 1.0
    decisions: Optional[np.ndarray] = None  # bandit: pi_M per member
    policies: Optional[np.ndarray] = None  # MDP: (N, H, S, A) greedy policies
    est_policies: Optional[np.ndarray] = None  # MDP: estimation policies (default on-policy)
    gaps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X, W = np.asarray(self.X, dtype=float), np.asarray(self.W, dtype=float)
        if X.ndim != 3 or X.shape != W.shape:
            raise SchemaError("X and W must share shape (N, H, d)")
        if np.max(np.linalg.norm(X, axis=2)) > 1 + 1e-9:
            raise SchemaError("embedding requires ||X_h|| <= 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        flat = X.reshape(X.shape[0], -1)
        f = flat @ self.theta_ref
        object.__setattr__(self, "gaps", np.clip(f[self.ref_idx] - f, 0.0, None))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def H(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    def residual(self, i: int, j: int, h: int) -> float:
        """<X_h(M_i), W_h(M_j)>."""
        return float(self.X[i, h] @ self.W[j, h])


class EnumerationOracle:
    """Exact planning oracle for finite classes: argmax_M <X(M), theta>, least index on ties."""

    def __init__(self, emb: BilinearEmbedding):
        self.flat = emb.X.reshape(emb.N, -1)
        self.calls = 0

    def __call__(self, theta: np.ndarray) -> int:
        self.calls += 1
        return int(np.argmax(self.flat @ theta))


# ---------------------------------------------------------------- constructors


def linear_bandit_embedding(features: np.ndarray, thetas: np.ndarray, ref_idx: int, L_bi: float = 1.0) -> BilinearEmbedding:
    """H = 1 linear bandit: f_M(pi) = <x_pi, theta_M>; X(M) = x_{pi_M}, W(M) = theta_M - theta_ref."""
    features = np.asarray(features, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    best = np.argmax(thetas @ features.T, axis=1)
    X = features[best][:, None, :]
    W = (thetas - thetas[ref_idx])[:, None, :]
    return BilinearEmbedding(X, W, thetas[ref_idx].copy(), ref_idx, L_bi, decisions=best)


def tabular_embedding(models: Sequence[mdpmod.TabularMdp], ref_idx: int, L_bi: float = 2.0) -> BilinearEmbedding:
    """Tabular MDPs with d = S*A: X_h(M) = d_h^{ref, pi_M}, W_h(M) = Q*_M - r_ref - P_ref V*_M."""
    ref = models[ref_idx]
    H, S, A = ref.H, ref.S, ref.A
    plans = [mdpmod.value_iteration(M) for M in models]
    policies = np.stack([p.policy for p in plans])
    X = mdpmod.occupancy(ref, policies).reshape(len(models), H, S * A)
    W = np.zeros_like(X)
    for i, p in enumerate(plans):
        for h in range(H):
            W[i, h] = (p.Q[h] - ref.rmean[h] - ref.P[h] @ p.V[h + 1]).ravel()
    return BilinearEmbedding(X, W, ref.rmean.reshape(-1).copy(), ref_idx, L_bi, policies=policies)


# ---------------------------------------------------------------- IGW-ArgMax


def grid_size(r: float, d: int, eta: float | None = None) -> int:
    """ceil(log_{4/3}((4/3) r^-d)); with ``eta`` the range is widened by (1 + eta)."""
    scale = (4.0 / 3.0) * r ** (-d) * (1.0 + eta if eta is not None else 1.0)
    return int(math.ceil(math.log(scale) / math.log(4.0 / 3.0) - 1e-12))


def argmax_grid(r: float, d: int, eta: float | None = None) -> np.ndarray:
    n = grid_size(r, d, eta)
    pos = (3.0 / 4.0) ** np.arange(1, n + 1)
    return np.concatenate([pos, -pos])


def reweighted_objective(emb: BilinearEmbedding, h: int, eta: float, theta: np.ndarray) -> np.ndarray:
    return np.abs(emb.X[:, h] @ theta) / np.sqrt(1.0 + eta * emb.gaps)


def igw_argmax(theta: np.ndarray, emb: BilinearEmbedding, h: int, eta: float, r: float,
               oracle: Optional[Callable] = None, d: Optional[int] = None, widen: bool = True) -> int:
    """Approximate argmax_M |<X_h(M), theta>| / sqrt(1 + eta * gap(M)) via planning-oracle calls.

    theta is rescaled to unit norm first; the target is scale invariant
    while the geometric grid is not.  With ``widen`` the grid reaches down
    to scale r^d / (1 + eta): when gaps are large the maximizer is only
    exposed at step sizes of order 1/eta, which the eta-free grid misses.
    """
    oracle = oracle or EnumerationOracle(emb)
    d = emb.d if d is None else d
    theta = np.asarray(theta, dtype=float)
    nrm = np.linalg.norm(theta)
    if nrm == 0:
        return emb.ref_idx
    theta = theta / nrm
    lift = np.zeros((emb.H, emb.d))
    lift[h] = theta
    lift = lift.ravel()
    cands = []
    for eps in argmax_grid(r, d, eta if widen else None):
        cands.append(oracle(eps * lift + eta * eps**2 * emb.theta_ref))
    cands = sorted(set(cands))
    scores = reweighted_objective(emb, h, eta, theta)[cands]
    return cands[int(np.argmax(scores))]


# ---------------------------------------------------------------- IGW-Spanner


@dataclass
class SpannerResult:
    members: list
    basis: np.ndarray  # (d, k) orthonormal basis of span{X_h}
    r: float
    swaps: int
    oracle_calls: int

    @property
    def design(self) -> dict:
        return {m: 1.0 / len(self.members) for m in self.members}


def span_basis(V: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the row span of V."""
    _, s, vt = np.linalg.svd(V, full_matrices=False)
    k = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return vt[:k].T


def greedy_volume_init(V: np.ndarray, k: int) -> list:
    """Greedy volume maximization: repeatedly add the vector with largest residual norm."""
    chosen = []
    R = V.copy()
    for _ in range(k):
        norms = np.linalg.norm(R, axis=1)
        norms[chosen] = -1.0
        i = int(np.argmax(norms))
        chosen.append(i)
        u = R[i] / np.linalg.norm(R[i])
        R = R - np.outer(R @ u, u)
    return chosen


def _det(M: np.ndarray) -> float:
    with warnings.catch_warnings():
        # a singular M gives a zero pivot and det 0; callers handle that case
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    sign = (-1.0) ** np.sum(piv != np.arange(piv.size))
    return float(sign * np.prod(np.diag(lu)))


def reweighted_vectors(emb: BilinearEmbedding, h: int, eta: float, basis: np.ndarray) -> np.ndarray:
    return (emb.X[:, h] @ basis) / np.sqrt(1.0 + eta * emb.gaps)[:, None]


def igw_spanner(emb: BilinearEmbedding, h: int, eta: float, init: Optional[Sequence[int]] = None,
                oracle: Optional[Callable] = None, widen: bool = True) -> SpannerResult:
    """Determinant-swap search for a 2-approximate barycentric spanner of the reweighted Y_h.

    Works in an orthonormal basis of span{X_h(M)}, so rank-deficient
    embeddings are handled in their intrinsic dimension k <= d.
    """
    oracle = oracle or EnumerationOracle(emb)
    basis = span_basis(emb.X[:, h])
    k = basis.shape[1]
    if k == 0:
        return SpannerResult([emb.ref_idx], basis, 1.0, 0, 0)
    Xr = emb.X[:, h] @ basis
    Y = reweighted_vectors(emb, h, eta, basis)
    members = list(init) if init is not None else greedy_volume_init(Xr, k)
    if len(members) != k:
        raise SchemaError(f"spanner init needs {k} members, got {len(members)}")
    det_x = abs(_det(Xr[members].T))
    if det_x <= 0:
        raise SchemaError("spanner init is singular")
    r = min(det_x ** (1.0 / k), 1.0 - 1e-12)
    C = Y[members].T.copy()
    det_c = _det(C)
    cap = int(math.ceil(max(k * math.log(k / r**k) / math.log(SWAP_FACTOR),
                            math.log(1.0 / abs(det_c)) / math.log(SWAP_FACTOR)))) + k
    swaps = 0
    improved = True
    while improved:
        improved = False
        for i in range(k):
            # theta with det(y, C_{-i}) = <theta, y>: det(C) times row i of C^{-1}
            theta = det_c * np.linalg.solve(C.T, np.eye(k)[i])
            m = igw_argmax(basis @ theta, emb, h, eta, r, oracle, d=k, widen=widen)
            new_det = float(theta @ Y[m])
            if abs(new_det) >= SWAP_FACTOR * abs(det_c) * (1 + SWAP_RTOL):
                members[i] = m
                C[:, i] = Y[m]
                det_c = _det(C)
                swaps += 1
                if swaps > cap:
                    raise NonconvergenceGuard(f"spanner exceeded {cap} swaps")
                improved = True
                break
    return SpannerResult(members, basis, r, swaps, getattr(oracle, "calls", 0))


def spanner_coefficients(emb: BilinearEmbedding, h: int, eta: float, res: SpannerResult) -> np.ndarray:
    """(N, k) coefficients of every reweighted vector in the spanner basis."""
    Y = reweighted_vectors(emb, h, eta, res.basis)
    C = Y[res.members].T
    return np.linalg.solve(C, Y.T).T


def design_test(emb: BilinearEmbedding, h: int, eta: float, res: SpannerResult) -> float:
    """sup_M <Sigma_q^+ Y(M), Y(M)> for the uniform design on the spanner."""
    Y = reweighted_vectors(emb, h, eta, res.basis)
    S = Y[res.members].T @ Y[res.members] / len(res.members)
    w, V = np.linalg.eigh(S)
    inv = np.where(w > PINV_CUTOFF, 1.0 / np.where(w > PINV_CUTOFF, w, 1.0), 0.0)
    Sp = (V * inv) @ V.T
    return float(np.max(np.einsum("ni,ij,nj->n", Y, Sp, Y)))


# ---------------------------------------------------------------- PC-IGW.Bilinear


def pcigw_bilinear(emb: BilinearEmbedding, gamma: float, C_opt: Optional[float] = None, on_policy: bool = True,
                   oracle: Optional[Callable] = None) -> DecCertificate:
    """Inverse-gap-weighted mixture of per-layer spanner designs.

    ``info['members']`` lists the support (class indices), ``witness`` their
    probabilities, and ``info['alpha']`` the forced-exploration weight.
    """
    H, d, L = emb.H, emb.d, emb.L_bi
    C_opt = 2.0 * d if C_opt is None else float(C_opt)
    k4 = H**4 * C_opt * L**2 * d
    if on_policy:
        eta = gamma / (3 * H**3 * C_opt * L**2 * d)
        alpha = 0.0
        value = 9 * H**3 * C_opt * L**2 * d / gamma
    else:
        if gamma < 72 * k4:
            raise GammaTooSmall(f"off-policy certificate needs gamma >= {72 * k4}")
        eta = gamma / (6 * k4)
        alpha = math.sqrt(18 * k4 / gamma)
        value = math.sqrt(72 * k4 / gamma)
    q = np.zeros(emb.N)
    spanners = []
    for h in range(H):
        res = igw_spanner(emb, h, eta, oracle=oracle)
        spanners.append(res)
        for m, w in res.design.items():
            q[m] += 0.5 * w / H
    q[emb.ref_idx] += 0.5
    supp = np.nonzero(q > 0)[0]
    lam = bisect_normalizer(lambda l: float(np.sum(q[supp] / (l + eta * emb.gaps[supp]))), 0.5, 1.0)
    p = q[supp] / (lam + eta * emb.gaps[supp])
    p = p / p.sum()
    info = {"members": supp.tolist(), "lambda": lam, "eta": eta, "alpha": alpha, "q": q[supp].tolist(),
            "C_opt": C_opt, "spanners": spanners}
    return DecCertificate(gamma, DivergenceKind.HELLINGER, value, p, "PCIGWBilinear", info)


def mixed_policies(emb: BilinearEmbedding, members: Sequence[int], alpha: float) -> np.ndarray:
    """pi^alpha_M: per layer, pi_M w.p. 1 - alpha/H and the estimation policy w.p. alpha/H."""
    pols = emb.policies[list(members)]
    if alpha == 0 or emb.est_policies is None:
        return pols
    est = emb.est_policies[list(members)]
    return (1 - alpha / emb.H) * pols + (alpha / emb.H) * est


def bandit_decision_law(emb: BilinearEmbedding, cert: DecCertificate, n_decisions: int) -> np.ndarray:
    """Push the member distribution forward to decisions pi_M."""
    p = np.zeros(n_decisions)
    for m, w in zip(cert.info["members"], cert.witness):
        p[emb.decisions[m]] += w
    return p


def bandit_class(features: np.ndarray, thetas: np.ndarray, outcome: str = "rademacher") -> ModelClass:
    """Model class with f_M(pi) = <x_pi, theta_M> and the given outcome family."""
    means = np.asarray(thetas) @ np.asarray(features).T
    make = Model.rademacher if outcome == "rademacher" else Model.bernoulli
    return ModelClass(tuple(make(m) for m in means))
