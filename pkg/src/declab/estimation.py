"""Online estimation over finite classes: exponential weights under log loss.

With learning rate one the aggregating algorithm is exactly the Bayes
posterior, so the same state serves E2D (as the estimator) and E2D.Bayes
(as the posterior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import probkit as pk
from .errors import AllZeroLikelihood, EmptyActiveSet
from .models import Model, ModelClass, divergence_matrix, mix_outcomes, mixture

DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class OracleState:
    log_weights: np.ndarray
    cum_logloss: np.ndarray
    learner_logloss: float = 0.0
    ledger: float = 0.0
    round: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def reg_kl(self, comparator: Optional[int] = None) -> float:
        """Log-loss regret against the best member, or against ``comparator``."""
        best = self.cum_logloss.min() if comparator is None else self.cum_logloss[comparator]
        return float(self.learner_logloss - best)


def init_state(cls: ModelClass, prior=None) -> OracleState:
    n = len(cls)
    w = np.full(n, 1.0 / n) if prior is None else np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(w / w.sum())
    return OracleState(lw, np.zeros(n))


def log_likelihoods(cls: ModelClass, pi: int, reward: float, obs=None) -> np.ndarray:
    return np.array([m.outcomes[pi].log_density(reward, obs) for m in cls])


def aggregate_update(state: OracleState, cls: ModelClass, observed) -> OracleState:
    """One exponential-weights step on the observation (pi, r, o)."""
    pi, reward, obs = observed
    ll = log_likelihoods(cls, pi, reward, obs)
    joint = state.log_weights + ll
    norm = logsumexp(joint) if np.any(np.isfinite(joint)) else -math.inf
    if not np.isfinite(norm):
        raise AllZeroLikelihood(f"no model explains reward {reward} at decision {pi}")
    with np.errstate(invalid="ignore"):
        lw = joint - norm
    lw[~np.isfinite(lw)] = -np.inf
    return replace(
        state,
        log_weights=lw,
        cum_logloss=state.cum_logloss - ll,
        learner_logloss=state.learner_logloss - float(norm),
        round=state.round + 1,
    )


def predict(state: OracleState, cls: ModelClass, smoothing: float = 0.0) -> Model:
    """Posterior mixture, optionally mixed with the uniform law on its support."""
    M = mixture(cls, _clean(state.weights))
    if smoothing == 0:
        return M
    return Model(tuple(pk.smooth(o, smoothing) for o in M.outcomes), "smoothed")


def predict_randomized(state: OracleState, cls: ModelClass) -> tuple[list, np.ndarray]:
    """The posterior itself as a randomized estimator (used for Gaussian classes)."""
    w = _clean(state.weights)
    idx = np.nonzero(w > 0)[0]
    return [cls[i] for i in idx], w[idx]


def predict_restricted(state: OracleState, cls: ModelClass, active: Sequence[int]) -> Model:
    """Sleeping-experts prediction: posterior restricted to ``active`` and renormalized."""
    active = list(active)
    if not active:
        raise EmptyActiveSet("restricted prediction needs a nonempty active set")
    w = state.weights[active]
    if w.sum() <= 0:
        w = np.ones(len(active))
    w = w / w.sum()
    return Model(tuple(mix_outcomes([cls[i].outcomes[a] for i in active], w) for a in range(cls.n_decisions)), "mixture")


def restricted_weights(state: OracleState, active: Sequence[int]) -> np.ndarray:
    w = state.weights[list(active)]
    return w / w.sum() if w.sum() > 0 else np.full(len(active), 1.0 / len(active))


def _clean(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def default_radius(n_models: int, delta: float = DEFAULT_DELTA) -> float:
    return math.log(n_models) + 2.0 * math.log(1.0 / delta)


def hellinger_errors(cls: ModelClass, p, Mhat: Model) -> np.ndarray:
    """E_{pi~p}[D_H^2(M(pi) || Mhat(pi))] for every member M."""
    return divergence_matrix(pk.DivergenceKind.HELLINGER, cls.models, Mhat) @ np.asarray(p, dtype=float)


def confidence_set(history, cls: ModelClass, radius2: float, prev: Optional[Sequence[int]] = None) -> list[int]:
    """Members whose cumulative error against past estimates is at most radius2."""
    err = np.zeros(len(cls))
    for p, Mhat in history:
        err += hellinger_errors(cls, p, Mhat)
    keep = [i for i in range(len(cls)) if err[i] <= radius2]
    if prev is not None:
        prev = set(prev)
        keep = [i for i in keep if i in prev]
    return keep


def hellinger_increment(p, Mhat: Model, truth: Model) -> float:
    D = divergence_matrix(pk.DivergenceKind.HELLINGER, [truth], Mhat)[0]
    return float(D @ np.asarray(p, dtype=float))


def ledger_add(state: OracleState, p, Mhat: Model, truth: Model) -> OracleState:
    return replace(state, ledger=state.ledger + hellinger_increment(p, Mhat, truth))
