"""Finite-horizon tabular MDPs: planning, occupancies, trajectory divergences and PC-IGW.

Layers are 0-based in code (h = 0..H-1).  Policies are arrays of shape
(H, S, A) whose rows lie on the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import probkit as pk
from .dec import bisect_normalizer
from .errors import SchemaError
from .lp import linprog

ROW_TOL = 1e-12
DEDUP_TOL = 1e-9
FLOOR_DELTA = 1e-6


@dataclass(frozen=True, eq=False)
class TabularMdp:
    P: np.ndarray  # (H, S, A, S)
    R: tuple  # R[h][s][a] -> OutcomeDist
    d1: np.ndarray  # (S,)
    rmean: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        d1 = np.asarray(self.d1, dtype=float)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise SchemaError(f"P must have shape (H,S,A,S), got {P.shape}")
        H, S, A, _ = P.shape
        if np.any(P < -ROW_TOL) or np.max(np.abs(P.sum(-1) - 1.0)) > ROW_TOL:
            raise SchemaError("transition rows must lie on the simplex")
        if d1.shape != (S,) or np.any(d1 < -ROW_TOL) or abs(d1.sum() - 1.0) > ROW_TOL:
            raise SchemaError("d1 must be a distribution over states")
        R = tuple(tuple(tuple(row) for row in layer) for layer in self.R)
        if len(R) != H or any(len(l) != S or any(len(r) != A for r in l) for l in R):
            raise SchemaError("R must be indexed [h][s][a]")
        rmean = np.array([[[o.mean() for o in r] for r in l] for l in R])
        for arr in (P, d1, rmean):
            arr.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "rmean", rmean)

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    def to_json(self) -> dict:
        return {
            "H": self.H, "S": self.S, "A": self.A,
            "P": self.P.tolist(),
            "R": [[[o.to_json() for o in r] for r in l] for l in self.R],
            "d1": self.d1.tolist(),
        }


def mdp_from_json(obj: dict) -> TabularMdp:
    if not isinstance(obj, dict):
        raise SchemaError("MDP file must be a JSON object")
    need = {"H", "S", "A", "P", "R", "d1"}
    if set(obj) != need:
        raise SchemaError(f"MDP keys must be exactly {sorted(need)}; got {sorted(obj)}")
    try:
        P = np.array(obj["P"], dtype=float)
        R = [[[pk.from_json(o) for o in r] for r in l] for l in obj["R"]]
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed MDP: {exc}") from None
    M = TabularMdp(P, R, obj["d1"])
    if (M.H, M.S, M.A) != (obj["H"], obj["S"], obj["A"]):
        raise SchemaError("declared H,S,A do not match array shapes")
    return M


# ---------------------------------------------------------------- planning


@dataclass
class PlanResult:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H+1, S)
    policy: np.ndarray  # deterministic (H, S, A)
    f: float


def value_iteration(M: TabularMdp) -> PlanResult:
    H, S, A = M.H, M.S, M.A
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    pol = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = M.rmean[h] + M.P[h] @ V[h + 1]
        best = np.argmax(Q[h], axis=1)  # least index on ties
        pol[h, np.arange(S), best] = 1.0
        V[h] = Q[h, np.arange(S), best]
    return PlanResult(Q, V, pol, float(M.d1 @ V[0]))


def occupancy(M: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """d_h(s, a) = P(s_h = s, a_h = a); supports a leading batch axis on pi."""
    pi = np.asarray(pi, dtype=float)
    batch = pi.ndim == 4
    pis = pi if batch else pi[None]
    K, H = pis.shape[0], M.H
    d = np.zeros((K, H, M.S, M.A))
    state = np.broadcast_to(M.d1, (K, M.S))
    for h in range(H):
        d[:, h] = state[:, :, None] * pis[:, h]
        if h + 1 < H:
            state = np.einsum("ksa,sat->kt", d[:, h], M.P[h])
    return d if batch else d[0]


def policy_value(M: TabularMdp, pi: np.ndarray) -> np.ndarray | float:
    d = occupancy(M, pi)
    v = np.sum(d * M.rmean, axis=(-3, -2, -1))
    return v if np.ndim(v) else float(v)


def policy_from_occupancy(d: np.ndarray) -> np.ndarray:
    d = np.clip(np.asarray(d, dtype=float), 0.0, None)
    mass = d.sum(-1, keepdims=True)
    A = d.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > 1e-300, d / mass, 1.0 / A)
    return pi


def simulate(M: TabularMdp, pi: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    traj = []
    s = _draw(M.d1, rng)
    for h in range(M.H):
        a = _draw(pi[h, s], rng)
        r, _ = M.R[h][s][a].sample(rng)
        traj.append((s, a, r))
        if h + 1 < M.H:
            s = _draw(M.P[h, s, a], rng)
    return traj


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    k = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(k, len(p) - 1)


def deterministic_policy(actions: np.ndarray, A: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    H, S = actions.shape
    pi = np.zeros((H, S, A))
    pi[np.arange(H)[:, None], np.arange(S)[None, :], actions] = 1.0
    return pi


def random_policies(H: int, S: int, A: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(A), size=(n, H, S))


# ---------------------------------------------------------------- divergences between MDPs


def reward_divergence(kind, M: TabularMdp, ref: TabularMdp) -> np.ndarray:
    return np.array([[[pk.divergence(kind, M.R[h][s][a], ref.R[h][s][a]) for a in range(M.A)]
                      for s in range(M.S)] for h in range(M.H)])


def trajectory_hellinger(M: TabularMdp, ref: TabularMdp, pi: np.ndarray) -> np.ndarray | float:
    """Exact D_H^2 between trajectory laws of pi under M and ref.

    Runs the forward recursion of the Bhattacharyya coefficient; pi may carry
    a leading batch axis.
    """
    bc_r = 1.0 - reward_divergence("hellinger", M, ref) / 2.0
    root_p = np.sqrt(M.P * ref.P)
    pi = np.asarray(pi, dtype=float)
    pis = pi if pi.ndim == 4 else pi[None]
    alpha = np.broadcast_to(np.sqrt(M.d1 * ref.d1), (pis.shape[0], M.S))
    for h in range(M.H):
        w = alpha[:, :, None] * pis[:, h] * bc_r[h]
        if h + 1 < M.H:
            alpha = np.einsum("ksa,sat->kt", w, root_p[h])
    bc = w.sum(axis=(1, 2))
    out = np.clip(2.0 * (1.0 - bc), 0.0, 2.0)
    return out if pi.ndim == 4 else float(out[0])


def simulation_gap(M: TabularMdp, ref: TabularMdp, pi: np.ndarray) -> tuple[float, float]:
    """(|f_M(pi) - f_ref(pi)|, occupancy-weighted TV sum under ref)."""
    lhs = abs(policy_value(M, pi) - policy_value(ref, pi))
    d = occupancy(ref, pi)
    tv_p = 0.5 * np.abs(M.P - ref.P).sum(-1)
    tv_p[-1] = 0.0  # no transition after the last layer
    tv_r = reward_divergence("tv", M, ref)
    rhs = float(np.sum(d * (tv_p + tv_r)) + 0.5 * np.abs(M.d1 - ref.d1).sum())
    return float(lhs), rhs


# ---------------------------------------------------------------- random instances


def random_mdp(H: int, S: int, A: int, rng: np.random.Generator, concentration: float = 1.0) -> TabularMdp:
    """Dirichlet kernels; rewards on {0, 1/H} so every return lies in [0, 1]."""
    P = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    d1 = rng.dirichlet(np.full(S, concentration))
    q = rng.random((H, S, A))
    return TabularMdp(P, _reward_table(q, H), d1)


def _reward_table(q: np.ndarray, H: int):
    support = ((0.0, None), (1.0 / H, None))
    return [[[pk.Categorical(support, (1 - x, x)) for x in row] for row in layer] for layer in q]


def perturb_mdp(ref: TabularMdp, scale: float, rng: np.random.Generator) -> TabularMdp:
    """Random local perturbation of a reference with {0,1/H} categorical rewards."""
    H = ref.H
    P = np.clip(ref.P + scale * rng.normal(size=ref.P.shape), 1e-12, None)
    P /= P.sum(-1, keepdims=True)
    q = np.clip(ref.rmean * H + scale * rng.normal(size=ref.rmean.shape), 0.0, 1.0)
    return TabularMdp(P, _reward_table(q, H), ref.d1)


def floored(M: TabularMdp, delta: float = FLOOR_DELTA) -> TabularMdp:
    """Mix kernels and the initial law with uniform at weight delta."""
    P = (1 - delta) * M.P + delta / M.S
    P /= P.sum(-1, keepdims=True)
    d1 = (1 - delta) * M.d1 + delta / M.S
    return TabularMdp(P, M.R, d1 / d1.sum())


# ---------------------------------------------------------------- PC-IGW


def _lfp_constraints(ref: TabularMdp, eta: float, f_star: float):
    H, S, A = ref.H, ref.S, ref.A
    n = H * S * A
    idx = lambda h, s, a: (h * S + s) * A + a  # noqa: E731
    rows, rhs = [], []
    # normalization: (2HSA + eta f*) t - eta <w, r> = 1
    row = np.zeros(n + 1)
    row[:n] = -eta * ref.rmean.ravel()
    row[n] = 2 * H * S * A + eta * f_star
    rows.append(row)
    rhs.append(1.0)
    for s in range(S):
        row = np.zeros(n + 1)
        row[[idx(0, s, a) for a in range(A)]] = 1.0
        row[n] = -ref.d1[s]
        rows.append(row)
        rhs.append(0.0)
    for h in range(H - 1):
        for s2 in range(S):
            row = np.zeros(n + 1)
            row[h * S * A:(h + 1) * S * A] = ref.P[h, :, :, s2].ravel()
            row[[idx(h + 1, s2, a) for a in range(A)]] -= 1.0
            rows.append(row)
            rhs.append(0.0)
    return np.array(rows), np.array(rhs), idx


def lfp_policy(ref: TabularMdp, target: tuple[int, int, int], eta: float, f_star: float | None = None):
    """Maximize d_h(s,a) / (2HSA + eta * gap(pi)) over policies via its LP form.

    The Charnes-Cooper variables are w = t * d and t; the box constraints
    w, t <= 1 are implied by the normalization row and omitted.
    Returns (policy, ratio).
    """
    if f_star is None:
        f_star = value_iteration(ref).f
    A_eq, b_eq, idx = _lfp_constraints(ref, eta, f_star)
    n = A_eq.shape[1] - 1
    c = np.zeros(n + 1)
    c[idx(*target)] = -1.0
    res = linprog(c, A_eq=A_eq, b_eq=b_eq)
    w, t = res.x[:n], res.x[n]
    d = (w / t).reshape(ref.H, ref.S, ref.A)
    return policy_from_occupancy(d), float(-res.fun)


def lfp_ratio(ref: TabularMdp, pi: np.ndarray, target, eta: float, f_star: float | None = None):
    """Direct evaluation of the fractional objective (batch over pi allowed)."""
    if f_star is None:
        f_star = value_iteration(ref).f
    d = occupancy(ref, pi)
    gap = f_star - policy_value(ref, pi)
    h, s, a = target
    return d[..., h, s, a] / (2 * ref.H * ref.S * ref.A + eta * gap)


@dataclass
class PcigwResult:
    policies: list
    weights: np.ndarray
    lam: float
    gaps: np.ndarray
    ratios: dict

    def to_json(self) -> dict:
        return {"lambda": float(self.lam), "policies": [p.tolist() for p in self.policies],
                "weights": [float(w) for w in self.weights]}


def _same_policy(a: np.ndarray, b: np.ndarray) -> bool:
    return float(np.max(np.abs(a - b))) <= DEDUP_TOL


def pcigw(ref: TabularMdp, eta: float, floor: float | None = None) -> PcigwResult:
    """Inverse-gap-weighted policy cover for a tabular reference model."""
    if not eta > 0:
        raise SchemaError("eta must be positive")
    base = floored(ref, floor) if floor else ref
    plan = value_iteration(base)
    H, S, A = base.H, base.S, base.A
    cover = [plan.policy]
    ratios = {}
    for h in range(H):
        for s in range(S):
            for a in range(A):
                pol, ratio = lfp_policy(base, (h, s, a), eta, plan.f)
                ratios[(h, s, a)] = ratio
                if not any(_same_policy(pol, q) for q in cover):
                    cover.append(pol)
    gaps = np.clip(plan.f - policy_value(base, np.stack(cover)), 0.0, None)
    lam = bisect_normalizer(lambda l: float(np.sum(1.0 / (l + eta * gaps))), 1.0, 2.0 * H * S * A)
    w = 1.0 / (lam + eta * gaps)
    return PcigwResult(cover, w / w.sum(), lam, gaps, ratios)


def mdp_objective(models: Sequence[TabularMdp], ref: TabularMdp, policies: np.ndarray, gamma: float) -> np.ndarray:
    """C[M, pi] = f_M(pi_M) - f_M(pi) - gamma * D_H^2(M(pi) || ref(pi))."""
    policies = np.asarray(policies)
    out = np.zeros((len(models), policies.shape[0]))
    for i, M in enumerate(models):
        out[i] = value_iteration(M).f - policy_value(M, policies) - gamma * trajectory_hellinger(M, ref, policies)
    return out
