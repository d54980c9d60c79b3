"""Estimation-to-Decisions: per-round decision rules and the simulation loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import estimation as est
from . import probkit as pk
from .dec import dec_lp, dec_randomized, objective_matrix, _objective
from .errors import EmptyActiveSet, NumericFailure, SchemaError, UnknownContext
from .models import Model, ModelClass, divergence_matrix, mixture

OPTIONS = ("I", "II", "Bayes", "Generalized", "Contextual")
PATH_TOL = 1e-9
TRACE_COLUMNS = ("t", "pi", "r", "inst_regret", "dec_value", "hell_inc", "cum_regret", "cum_est")


@dataclass
class ExperimentConfig:
    T: int
    gamma: float
    option: str = "I"
    divergence: str = "hellinger"
    seed: int = 0
    smoothing: float = 0.0
    radius2: Optional[float] = None
    prior: Optional[Sequence[float]] = None
    bayes_mode: str = "minimax"

    def __post_init__(self):
        if self.option not in OPTIONS:
            raise SchemaError(f"option must be one of {OPTIONS}, got {self.option!r}")
        if int(self.T) != self.T or self.T < 0:
            raise SchemaError("T must be a nonnegative integer")
        if not self.gamma > 0:
            raise SchemaError("gamma must be positive")
        if not 0 <= self.smoothing < 1:
            raise SchemaError("smoothing must lie in [0, 1)")
        if self.bayes_mode not in ("minimax", "expected"):
            raise SchemaError("bayes_mode must be 'minimax' or 'expected'")
        self.divergence = pk.DivergenceKind.parse(self.divergence)


@dataclass(frozen=True, eq=False)
class ContextualClass:
    """Contextual models: member i at context x is ``slices[x][i]``."""

    slices: tuple
    context_probs: np.ndarray
    truth_idx: Optional[int] = None

    def __post_init__(self):
        slices = tuple(self.slices)
        if not slices or len({len(s) for s in slices}) != 1:
            raise SchemaError("every context slice needs the same number of members")
        probs = np.asarray(self.context_probs, dtype=float)
        if probs.shape != (len(slices),) or abs(probs.sum() - 1) > 1e-9 or probs.min() < 0:
            raise SchemaError("context_probs must be a distribution over contexts")
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "context_probs", probs)

    def __len__(self):
        return len(self.slices[0])

    def project(self, x: int) -> ModelClass:
        if not (isinstance(x, (int, np.integer)) and 0 <= x < len(self.slices)):
            raise UnknownContext(f"context {x!r} not in the finite context set")
        s = self.slices[x]
        return ModelClass(s.models, self.truth_idx)


@dataclass
class StepPlan:
    """Everything a round needs: witness, certified value and the reference used."""

    p: np.ndarray
    dec_value: float
    refs: list
    ref_weights: np.ndarray
    active: Optional[list] = None


@dataclass
class BayesStep:
    p: np.ndarray
    value: float
    coarse_class: ModelClass
    coarse_weights: np.ndarray
    reference: Model
    groups: dict


# ---------------------------------------------------------------- single steps


def _plan_from(cls: ModelClass, cert, refs, weights, active=None) -> StepPlan:
    return StepPlan(cert.witness, cert.value, refs, np.asarray(weights, dtype=float), active)


def e2d_step(option: str, state: est.OracleState, cls: ModelClass, gamma: float, div,
             smoothing: float = 0.0, active: Optional[Sequence[int]] = None) -> tuple[np.ndarray, float]:
    """Witness p^t and its certified value for Options I, II and Generalized."""
    plan = plan_round(option, state, cls, gamma, div, smoothing, active)
    return plan.p, plan.dec_value


def plan_round(option, state, cls, gamma, div, smoothing=0.0, active=None) -> StepPlan:
    if option == "I":
        Mhat = est.predict(state, cls, smoothing)
        return _plan_from(cls, dec_lp(cls, Mhat, gamma, div), [Mhat], [1.0])
    if option == "II":
        active = list(range(len(cls))) if active is None else list(active)
        if not active:
            raise EmptyActiveSet("confidence set is empty")
        Mhat = est.predict_restricted(state, cls, active)
        return _plan_from(cls, dec_lp(cls.subset(active), Mhat, gamma, div), [Mhat], [1.0], active)
    if option == "Generalized":
        refs, w = est.predict_randomized(state, cls)
        return _plan_from(cls, dec_randomized(cls, refs, w, gamma, div), refs, w)
    raise SchemaError(f"e2d_step does not handle option {option!r}")


def e2d_bayes_step(cls: ModelClass, mu, gamma: float, div="hellinger", mode: str = "minimax") -> BayesStep:
    """Coarsened-posterior step.

    Members are grouped by their optimal decision; each group collapses to
    its posterior mixture.  ``mode='minimax'`` solves the DEC LP over the
    coarsened class; ``mode='expected'`` minimizes the posterior-expected
    objective, which is linear in p and hence attained at a single decision.
    """
    mu = np.clip(np.asarray(mu, dtype=float), 0.0, None)
    mu = mu / mu.sum()
    reference = mixture(cls, mu)
    groups: dict = {}
    for i, m in enumerate(cls):
        if mu[i] > 0:
            groups.setdefault(int(np.argmax(m.fvec)), []).append(i)
    coarse, cw = [], []
    for pi_star in sorted(groups):
        idx = groups[pi_star]
        w = mu[idx] / mu[idx].sum()
        coarse.append(mixture(cls.subset(idx), w))
        cw.append(mu[idx].sum())
    coarse_cls = ModelClass(tuple(coarse))
    cw = np.array(cw)
    if mode == "minimax":
        cert = dec_lp(coarse_cls, reference, gamma, div)
        p, value = cert.witness, cert.value
    elif mode == "expected":
        score = cw @ objective_matrix(coarse_cls, reference, gamma, div)
        p = np.zeros(cls.n_decisions)
        p[int(np.argmin(score))] = 1.0
        value = float(score.min())
    else:
        raise SchemaError(f"unknown Bayes mode {mode!r}")
    return BayesStep(p, value, coarse_cls, cw, reference, groups)


def contextual_e2d_step(x: int, ccls: ContextualClass, state: est.OracleState, gamma: float, div,
                        smoothing: float = 0.0) -> tuple[np.ndarray, float]:
    """Option I on the slice of every contextual model at context x."""
    return e2d_step("I", state, ccls.project(x), gamma, div, smoothing)


def _worst_case(cls: ModelClass, gamma, div, refs, weights, p) -> float:
    D = sum(w * divergence_matrix(div, cls.models, R) for w, R in zip(weights, refs))
    return float(np.max(_objective(cls, gamma, D) @ p))


# ---------------------------------------------------------------- experiment loop


@dataclass
class RegretTrace:
    t: np.ndarray
    pi: np.ndarray
    r: np.ndarray
    inst_regret: np.ndarray
    dec_value: np.ndarray
    hell_inc: np.ndarray
    cum_regret: np.ndarray
    cum_est: np.ndarray
    truth_in_set: np.ndarray
    summary: dict = field(default_factory=dict)

    def rows(self):
        for k in range(self.t.size):
            yield tuple(getattr(self, c)[k] for c in TRACE_COLUMNS)

    def pathwise_ok(self, tol: float = PATH_TOL) -> bool:
        lhs = self.inst_regret
        rhs = self.dec_value + self.summary.get("gamma", 0.0) * self.hell_inc + tol
        return bool(np.all((lhs <= rhs) | ~self.truth_in_set))


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(k, p.size - 1)


def run_experiment(cls, truth_idx: int, cfg: ExperimentConfig, check: bool = True) -> RegretTrace:
    """Simulate T rounds against member ``truth_idx`` of ``cls``.

    ``hell_inc`` is E_{pi~p}[D(M*(pi) || ref(pi))] for the configured
    divergence D (squared Hellinger by default), and ``dec_value`` is the
    witness's worst case over the class it was optimized against, so that
    inst_regret <= dec_value + gamma * hell_inc holds every round.  The
    summary's ``est_h`` always uses squared Hellinger.
    """
    contextual = isinstance(cls, ContextualClass)
    if contextual != (cfg.option == "Contextual"):
        raise SchemaError("option 'Contextual' requires a ContextualClass and vice versa")
    n = len(cls)
    if not 0 <= truth_idx < n:
        raise SchemaError(f"truth index {truth_idx} out of range")
    T, gamma, div = int(cfg.T), float(cfg.gamma), cfg.divergence
    state = est.init_state(cls if not contextual else cls.project(0), cfg.prior)
    radius2 = cfg.radius2 if cfg.radius2 is not None else est.default_radius(n)
    active = list(range(n))
    cs_err = np.zeros(n)

    cols = {c: np.zeros(T) for c in TRACE_COLUMNS}
    cols["pi"] = np.zeros(T, dtype=int)
    cols["t"] = np.arange(1, T + 1)
    in_set = np.ones(T, dtype=bool)
    est_h = 0.0
    emp_regret = 0.0

    for k in range(T):
        rng = pk.round_stream(cfg.seed, k + 1)
        if contextual:
            # contexts get their own stream so a single-context run replays Option I exactly
            x = _sample_index(cls.context_probs, pk.round_stream(cfg.seed, k + 1, 1))
            view = cls.project(x)
        else:
            view = cls
        truth = view[truth_idx]

        if cfg.option == "Bayes":
            step = e2d_bayes_step(view, state.weights, gamma, div, cfg.bayes_mode)
            p, refs, rw = step.p, [step.reference], np.ones(1)
            dec_value = _worst_case(view, gamma, div, refs, rw, p)
        elif cfg.option == "II":
            plan = plan_round("II", state, view, gamma, div, cfg.smoothing, active)
            p, refs, rw, dec_value = plan.p, plan.refs, plan.ref_weights, plan.dec_value
            in_set[k] = truth_idx in active
        else:
            plan = plan_round("I" if contextual else cfg.option, state, view, gamma, div, cfg.smoothing)
            p, refs, rw, dec_value = plan.p, plan.refs, plan.ref_weights, plan.dec_value

        pi = _sample_index(p, rng)
        r, o = truth.outcomes[pi].sample(rng)

        opt = truth.fvec.max()
        inst = float(opt - p @ truth.fvec)
        div_inc = float(sum(w * (divergence_matrix(div, [truth], R)[0] @ p) for w, R in zip(rw, refs)))
        if div is pk.DivergenceKind.HELLINGER:
            h_inc = div_inc
        else:
            h_inc = float(sum(w * est.hellinger_increment(p, R, truth) for w, R in zip(rw, refs)))
        est_h += h_inc
        emp_regret += opt - r

        if cfg.option == "II":
            cs_err += est.hellinger_errors(view, p, refs[0])
            nxt = [i for i in active if cs_err[i] <= radius2]
            active = nxt if nxt else active  # keep the last nonempty set
        state = est.aggregate_update(state, view, (pi, r, o))

        cols["pi"][k] = pi
        cols["r"][k] = r
        cols["inst_regret"][k] = inst
        cols["dec_value"][k] = dec_value
        cols["hell_inc"][k] = div_inc
        if check and in_set[k] and inst > dec_value + gamma * div_inc + PATH_TOL:
            raise NumericFailure(f"pathwise bound violated at round {k + 1}: {inst} > {dec_value} + {gamma}*{div_inc}")

    cols["cum_regret"] = np.cumsum(cols["inst_regret"])
    cols["cum_est"] = np.cumsum(cols["hell_inc"])
    summary = {
        "cum_regret": float(cols["cum_regret"][-1]) if T else 0.0,
        "est_h": float(est_h),
        "reg_kl": state.reg_kl(truth_idx),
        "bound_rhs": float(cols["dec_value"].sum() + gamma * (cols["cum_est"][-1] if T else 0.0)),
        "empirical_regret": float(emp_regret),
        "gamma": gamma,
        "truth_in_set": bool(in_set.all()),
    }
    return RegretTrace(**cols, truth_in_set=in_set, summary=summary)
