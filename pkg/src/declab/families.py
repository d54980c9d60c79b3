"""Hard-instance (alpha, beta, delta)-families and their DEC lower bounds.

A family is a reference model plus N alternatives M_i with weight functions
u_i, v_i over decisions such that

    sum_i u_i(pi) <= N/2,   sum_i v_i(pi) <= 1,
    f_i(pi_i) - f_i(pi) >= alpha * (1 - u_i(pi)),
    D_H^2(M_i(pi) || ref(pi)) <= beta * v_i(pi) + delta,

which certifies comp-bar >= alpha/2 - gamma * (beta/N + delta).

Bandit families live on a finite decision grid and are checked exactly.
MDP families are checked on enumerated deterministic policies (when few
enough) plus sampled randomized policies, and the report says so.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mdp as mdpmod
from . import probkit as pk
from .dec import dec_dual_lp, solve_dual
from .errors import InvalidParams, NumericFailure
from .mdp import TabularMdp
from .models import Model, ModelClass, divergence_matrix

KINDS = ("mab", "linear", "lipschitz", "relu", "gap_mab", "gap_linear", "tree", "linear_qstar")
CHECK_TOL = 1e-9
MAX_ENUM = 4096  # largest deterministic-policy set enumerated for MDP families
MAX_DRAWS = 100_000


@dataclass(eq=False)
class HardFamily:
    """Alternatives, reference and the weight functions of an (alpha, beta, delta)-family.

    ``u`` and ``v`` map a batch of decisions (index array for bandit
    families, policy array (K, H, S, A) for MDP families) to a (K, N) array.
    """

    kind: str
    alternatives: tuple
    ref: object
    alpha: float
    beta: float
    delta: float
    u: Callable
    v: Callable
    params: dict = field(default_factory=dict)
    points: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return len(self.alternatives)

    @property
    def is_mdp(self) -> bool:
        return isinstance(self.ref, TabularMdp)

    @property
    def cls(self) -> ModelClass:
        if self.is_mdp:
            raise InvalidParams("MDP families have no finite-decision ModelClass")
        return ModelClass(tuple(self.alternatives))

    def regret(self, x) -> np.ndarray:
        """(K, N) regret of each decision under each alternative."""
        if self.is_mdp:
            opt = np.array([mdpmod.value_iteration(M).f for M in self.alternatives])
            vals = np.stack([mdpmod.policy_value(M, x) for M in self.alternatives], axis=1)
            return opt[None, :] - vals
        F = self.cls.fmat
        return (F.max(axis=1)[:, None] - F[:, np.asarray(x)]).T

    def information(self, x) -> np.ndarray:
        """(K, N) squared Hellinger between each alternative and the reference."""
        if self.is_mdp:
            return np.stack([np.atleast_1d(mdpmod.trajectory_hellinger(M, self.ref, x))
                             for M in self.alternatives], axis=1)
        D = divergence_matrix(pk.DivergenceKind.HELLINGER, self.alternatives, self.ref)
        return D[:, np.asarray(x)].T


@dataclass
class FamilyReport:
    passes: bool
    checks: dict  # name -> {"ok": bool, "slack": float}
    n_points: int
    sampled: bool
    beta_tight: float

    def to_json(self) -> dict:
        return {"passes": self.passes, "checks": self.checks, "n_points": self.n_points,
                "sampled": self.sampled, "beta_tight": self.beta_tight}


# ---------------------------------------------------------------- bandit families


def _bandit(kind, alts, ref, alpha, beta, delta, U, V, params, points=None) -> HardFamily:
    U, V = np.asarray(U, dtype=float), np.asarray(V, dtype=float)
    return HardFamily(kind, tuple(alts), ref, float(alpha), float(beta), float(delta),
                      lambda x: U[:, np.asarray(x)].T, lambda x: V[:, np.asarray(x)].T,
                      params, points)


def _need(cond: bool, msg: str):
    if not cond:
        raise InvalidParams(msg)


def mab_family(A: int, delta: float) -> HardFamily:
    _need(A >= 2, "MAB family needs A >= 2")
    _need(0 < delta < 0.5, "MAB family needs delta in (0, 1/2)")
    eye = np.eye(A)
    alts = [Model.bernoulli(0.5 + delta * eye[i], f"arm{i}") for i in range(A)]
    return _bandit("mab", alts, Model.bernoulli(np.full(A, 0.5), "ref"),
                   delta, 3 * delta**2, 0.0, eye, eye, {"A": A, "delta": delta})


def gap_mab_family(A: int, delta: float) -> HardFamily:
    _need(A >= 2, "gap MAB family needs A >= 2")
    _need(0 < delta < 0.125, "gap MAB family needs delta in (0, 1/8)")
    base = np.full(A, 0.5)
    base[0] += delta
    eye = np.eye(A)
    alts = [Model.bernoulli(base + (2 * delta * eye[i] if i else 0), f"arm{i}") for i in range(A)]
    return _bandit("gap_mab", alts, Model.bernoulli(base, "ref"),
                   delta, 12 * delta**2, 0.0, eye, eye, {"A": A, "delta": delta})


def linear_family(d: int, delta: float, n_grid: int = 64, seed: int = 0, grid=None) -> HardFamily:
    """theta_i = delta * e_i with Rademacher rewards on a grid of the unit ball."""
    _need(d >= 4, "linear family needs d >= 4")
    _need(0 < delta <= 1, "linear family needs delta in (0, 1]")
    if grid is None:
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(n_grid, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        grid = np.vstack([np.eye(d), -np.eye(d), g])
    X = np.asarray(grid, dtype=float)
    _need(X.ndim == 2 and X.shape[1] == d, "grid must have shape (K, d)")
    _need(np.all(np.linalg.norm(X, axis=1) <= 1 + 1e-12), "grid points must lie in the unit ball")
    _need(all(np.any(np.all(np.isclose(X, e), axis=1)) for e in np.eye(d)), "grid must contain every e_i")
    alts = [Model.rademacher(delta * X[:, i], f"e{i}") for i in range(d)]
    return _bandit("linear", alts, Model.rademacher(np.zeros(len(X)), "ref"),
                   delta, 0.75 * delta**2, 0.0, X.T, X.T**2, {"d": d, "delta": delta}, X)


def gap_linear_family(d: int, delta: float) -> HardFamily:
    """Decisions e_1..e_d; theta_1 = delta e_1 is the reference, theta_i adds 2 delta e_i."""
    _need(d >= 2, "gap linear family needs d >= 2")
    _need(0 < delta < 0.25, "gap linear family needs delta in (0, 1/4)")
    eye = np.eye(d)
    base = delta * eye[0]
    alts = [Model.rademacher(base + (2 * delta * eye[i] if i else 0), f"e{i}") for i in range(d)]
    return _bandit("gap_linear", alts, Model.rademacher(base, "ref"),
                   delta, 3 * delta**2, 0.0, eye, eye, {"d": d, "delta": delta}, eye)


def _unit_grid(d: int, n: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, n)] * d
    return np.array(list(itertools.product(*axes)))


def greedy_packing(X: np.ndarray, sep: float) -> list[int]:
    """Indices of a maximal subset of rows with pairwise distance > sep."""
    chosen: list[int] = []
    for k, x in enumerate(X):
        if all(np.linalg.norm(x - X[j]) > sep for j in chosen):
            chosen.append(k)
    return chosen


def lipschitz_family(eps: float, d: int = 1, n: int = 21, grid=None) -> HardFamily:
    """Bump functions of width eps on a 2 eps-packing of a grid, Euclidean metric."""
    _need(0 < eps < 0.5, "Lipschitz family needs eps in (0, 1/2)")
    X = _unit_grid(d, n) if grid is None else np.asarray(grid, dtype=float)
    X = X.reshape(len(X), -1)
    centers = greedy_packing(X, 2 * eps)
    _need(len(centers) >= 2, "grid admits fewer than two packing points")
    dist = np.linalg.norm(X[None, :, :] - X[centers][:, None, :], axis=2)  # (N, K)
    F = 0.5 + eps * np.maximum(1 - dist / eps, 0.0)
    U = (dist <= eps).astype(float)
    alts = [Model.bernoulli(F[i], f"bump{i}") for i in range(len(centers))]
    return _bandit("lipschitz", alts, Model.bernoulli(np.full(len(X), 0.5), "ref"),
                   eps, 3 * eps**2, 0.0, U, U, {"eps": eps, "d": X.shape[1], "centers": centers}, X)


def relu_family(d: int, eps: float, n_dirs: int = 32, n_extra: int = 64, seed: int = 0,
                dirs=None, grid=None) -> HardFamily:
    """f_v(pi) = relu(<v, pi> - (1 - eps)) on a finite grid containing every v.

    u_v = 1{<v, pi> > 1 - eps}.  With K the largest number of directions any
    grid point activates, v_v = u_v / K and beta = 3/4 eps^2 K.
    """
    _need(d >= 2, "ReLU family needs d >= 2")
    _need(0 < eps <= 0.5, "ReLU family needs eps in (0, 1/2]")
    rng = np.random.default_rng(seed)
    if dirs is None:
        dirs = rng.normal(size=(n_dirs, d))
    V = np.asarray(dirs, dtype=float)
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    if grid is None:
        g = rng.normal(size=(n_extra, d))
        grid = np.vstack([V, g / np.linalg.norm(g, axis=1, keepdims=True), np.zeros((1, d))])
    X = np.asarray(grid, dtype=float)
    _need(np.all(np.linalg.norm(X, axis=1) <= 1 + 1e-12), "grid points must lie in the unit ball")
    ip = V @ X.T  # (N, K)
    F = np.maximum(ip - (1 - eps), 0.0)
    _need(np.allclose(F.max(axis=1), eps), "grid must contain every direction")
    U = (ip > 1 - eps).astype(float)
    K = int(U.sum(axis=0).max())
    _need(K <= len(V) / 2, f"directions overlap too much (K={K} > N/2)")
    alts = [Model.rademacher(F[i], f"v{i}") for i in range(len(V))]
    return _bandit("relu", alts, Model.rademacher(np.zeros(len(X)), "ref"),
                   eps, 0.75 * eps**2 * K, 0.0, U, U / K, {"d": d, "eps": eps, "K": K}, X)


# ---------------------------------------------------------------- MDP families


def _ber(mu):
    return pk.Bernoulli(float(mu))


def tree_family(S: int, A: int, H: int, delta: float) -> HardFamily:
    """Depth-H1 binary tree (heap order) with wait/exit actions at the leaves.

    States 0..S-2 form the tree, S-1 is terminal.  Action 0 goes left or
    waits at a leaf; any other action goes right or exits to the terminal
    state.  Leaves are reached at layer H1 = log2(S/2) (0-based).
    """
    _need(S >= 2 and S & (S - 1) == 0, "tree family needs S a power of two")
    _need(A >= 2, "tree family needs A >= 2")
    _need(0 < delta < 0.5, "tree family needs delta in (0, 1/2)")
    H1 = int(round(math.log2(S // 2)))
    _need(H >= max(2 * H1, H1 + 1), "tree family needs H >= 2 log2(S/2)")
    term = S - 1
    leaves = list(range(2**H1 - 1, 2 ** (H1 + 1) - 1))
    P = np.zeros((H, S, A, S))
    for s in range(S - 1):
        if s in leaves:
            P[:, s, 0, s] = 1.0
            P[:, s, 1:, term] = 1.0
        else:
            P[:, s, 0, 2 * s + 1] = 1.0
            P[:, s, 1:, 2 * s + 2] = 1.0
    P[:, term, :, term] = 1.0
    d1 = np.eye(S)[0]
    index = [(h, s, a) for h in range(H1, H) for s in leaves for a in range(1, A)]
    _need(len(index) >= 2, "tree family needs at least two alternatives")

    def rewards(target):
        R = [[[_ber(0.0) for _ in range(A)] for _ in range(S)] for _ in range(H)]
        for h in range(H1, H):
            for s in leaves:
                for a in range(1, A):
                    R[h][s][a] = _ber(0.5 + delta * ((h, s, a) == target))
        return R

    ref = TabularMdp(P, rewards(None), d1)
    alts = tuple(TabularMdp(P, rewards(t), d1) for t in index)
    hh, ss, aa = (np.array(c) for c in zip(*index))

    def u(x):
        return mdpmod.occupancy(ref, _batch(x))[:, hh, ss, aa]

    return HardFamily("tree", alts, ref, delta, 3 * delta**2, 0.0, u, u,
                      {"S": S, "A": A, "H": H, "delta": delta, "H1": H1, "index": index})


def near_orthogonal(m: int, d: int, tol: float, rng: np.random.Generator,
                    max_draws: int = MAX_DRAWS) -> np.ndarray:
    """m unit vectors with pairwise |<v_i, v_j>| <= tol by sequential rejection."""
    out: list[np.ndarray] = []
    draws = 0
    while len(out) < m:
        if draws >= max_draws:
            raise NumericFailure(f"found only {len(out)} of {m} near-orthogonal vectors in {max_draws} draws")
        draws += 1
        x = rng.normal(size=d)
        x /= np.linalg.norm(x)
        if all(abs(x @ y) <= tol for y in out):
            out.append(x)
    return np.array(out)


def linear_qstar_family(d: int, H: int, delta: float = 1 / 6, m: Optional[int] = None,
                        seed: int = 0) -> HardFamily:
    """Linearly realizable MDPs built on m near-orthogonal unit vectors.

    States and actions are 0..m-1 plus a terminal index m.  Action a = s is
    unavailable at state s; here it behaves like the terminal action, which
    is identical across the family and so carries no information.
    """
    _need(d >= 2 and H >= 2, "linear-Q* family needs d >= 2 and H >= 2")
    _need(0 < delta <= 1 / 6, "linear-Q* family needs delta in (0, 1/6]")
    if m is None:
        m = max(4, math.ceil(math.exp(delta**2 * d / 8)))
    _need(m >= 4, "linear-Q* family needs m >= 4")
    vecs = near_orthogonal(m, d, delta, np.random.default_rng(seed))
    S = A = m + 1
    term = m
    G = vecs @ vecs.T + 2 * delta  # transition-to-a probability for (s, a)
    rad = pk.Rademacher

    def build(star):
        P = np.zeros((H, S, A, S))
        P[:, :, :, term] = 1.0
        R = [[[rad(0.0) for _ in range(A)] for _ in range(S)] for _ in range(H)]
        for s in range(m):
            for a in range(m):
                if a == s or a == star:
                    continue
                P[:, s, a, term] = 1 - G[s, a]
                P[:, s, a, a] = G[s, a]
                for h in range(H - 1):
                    R[h][s][a] = rad(-2 * delta * G[s, a])
            if star is not None and s != star:
                for h in range(H - 1):
                    R[h][s][star] = rad(G[s, star])
            if star is not None:
                for a in range(m):
                    if a != s:
                        R[H - 1][s][a] = rad(G[s, a] * (vecs[a] @ vecs[star]))
        d1 = np.r_[np.full(m, 1.0 / m), 0.0]
        return TabularMdp(P, R, d1)

    ref = build(None)
    alts = tuple(build(k) for k in range(m))
    avail = 1.0 - np.eye(S)  # (s, a) pairs that are real actions at a live state
    avail[term, :] = 0.0
    avail[:, term] = 0.0

    def u(x):
        occ = mdpmod.occupancy(ref, _batch(x))[:, 0]  # (K, S, A)
        live = occ[:, :m, :m]
        s_mass = occ[:, :m].sum(axis=2)
        a_mass = live.sum(axis=1)
        both = np.diagonal(live, axis1=1, axis2=2)
        return s_mass + a_mass - both

    def v(x):
        occ = mdpmod.occupancy(ref, _batch(x)) * avail  # (K, H, S, A)
        return 0.5 * occ.sum(axis=(1, 2))[:, :m]

    return HardFamily("linear_qstar", alts, ref, delta / 2, 22 * delta, (3 * delta) ** (H + 1), u, v,
                      {"d": d, "H": H, "delta": delta, "m": m, "seed": seed})


def _batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 4 else x[None]


# ---------------------------------------------------------------- public API


_BUILDERS = {
    "mab": mab_family,
    "linear": linear_family,
    "lipschitz": lipschitz_family,
    "relu": relu_family,
    "gap_mab": gap_mab_family,
    "gap_linear": gap_linear_family,
    "tree": tree_family,
    "linear_qstar": linear_qstar_family,
}


def make_family(kind: str, **params) -> HardFamily:
    if kind not in _BUILDERS:
        raise InvalidParams(f"unknown family kind {kind!r}; expected one of {KINDS}")
    try:
        return _BUILDERS[kind](**params)
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for {kind}: {exc}") from None


def deterministic_policies(H: int, S: int, A: int) -> np.ndarray:
    """All A^(H*S) deterministic Markov policies, shape (K, H, S, A)."""
    K = A ** (H * S)
    codes = np.arange(K)
    acts = np.zeros((K, H * S), dtype=int)
    for j in range(H * S):
        acts[:, j] = codes % A
        codes //= A
    pis = np.zeros((K, H * S, A))
    pis[np.arange(K)[:, None], np.arange(H * S)[None, :], acts] = 1.0
    return pis.reshape(K, H, S, A)


def family_points(f: HardFamily, n_random: int = 1000, seed: int = 0) -> tuple[np.ndarray, bool]:
    """Decisions to check and whether the check is sampled rather than exhaustive."""
    if not f.is_mdp:
        return np.arange(f.ref.n_decisions), False
    H, S, A = f.ref.H, f.ref.S, f.ref.A
    rng = np.random.default_rng(seed)
    parts = [np.stack([mdpmod.value_iteration(M).policy for M in (f.ref, *f.alternatives)])]
    if A ** (H * S) <= MAX_ENUM:
        parts.append(deterministic_policies(H, S, A))
    else:
        acts = rng.integers(A, size=(n_random, H, S))
        parts.append(np.eye(A)[acts])
    parts.append(mdpmod.random_policies(H, S, A, n_random, rng))
    return np.concatenate(parts), True


def verify_family(f: HardFamily, points=None, n_random: int = 1000, seed: int = 0,
                  tol: float = CHECK_TOL) -> FamilyReport:
    """Check the four family conditions on ``points`` (default: see family_points)."""
    sampled = f.is_mdp
    if points is None:
        points, sampled = family_points(f, n_random, seed)
    U, V = f.u(points), f.v(points)
    G, D = f.regret(points), f.information(points)
    slack = {
        "sum_u": float(np.min(f.N / 2 - U.sum(axis=1))),
        "sum_v": float(np.min(1 - V.sum(axis=1))),
        "regret": float(np.min(G - f.alpha * (1 - U))),
        "information": float(np.min(f.beta * V + f.delta - D)),
    }
    checks = {k: {"ok": bool(s >= -tol), "slack": s} for k, s in slack.items()}
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(V > 0, (D - f.delta) / V, 0.0)
    return FamilyReport(all(c["ok"] for c in checks.values()), checks, len(points), sampled,
                        float(np.max(need, initial=0.0)))


def family_lower_bound(f: HardFamily, gamma: float) -> float:
    return f.alpha / 2 - gamma * (f.beta / f.N + f.delta)


def family_dual_lp(f: HardFamily, gamma: float) -> Optional[float]:
    """Dual LP value of the family at its reference; None when Pi is too large to enumerate.

    For MDP families the decisions are the deterministic Markov policies,
    which can only lower the value relative to randomized policies.
    """
    if not f.is_mdp:
        return dec_dual_lp(f.cls, f.ref, gamma, "hellinger").value
    H, S, A = f.ref.H, f.ref.S, f.ref.A
    if A ** (H * S) > MAX_ENUM:
        return None
    pis = deterministic_policies(H, S, A)
    C = (f.regret(pis) - gamma * f.information(pis)).T
    _, mu = solve_dual(C)
    return float(np.min(mu @ C))
