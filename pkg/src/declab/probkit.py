"""Parametric outcome distributions with exact means, sampling and divergences.

An outcome is a pair (reward, observation label).  Bernoulli, Rademacher,
Gaussian and point-mass distributions carry no observation (label ``None``);
a categorical distribution lists its atoms explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import SchemaError, UnsupportedDivergence, UnsupportedPair

Label = Optional[Hashable]

_PROB_TOL = 1e-12


class DivergenceKind(str, Enum):
    HELLINGER = "hellinger"
    KL = "kl"
    TV = "tv"
    SQUARED = "squared"
    BILINEAR = "bilinear"

    @classmethod
    def parse(cls, value) -> "DivergenceKind":
        if isinstance(value, cls):
            return value
        aliases = {"hellingersq": "hellinger", "squaredmean": "squared", "sq": "squared"}
        key = str(value).lower()
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise SchemaError(f"unknown divergence kind {value!r}") from None


class OutcomeDist:
    """Base class; concrete kinds are frozen dataclasses below."""

    kind: str = ""

    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> tuple[float, Label]:
        raise NotImplementedError

    def log_density(self, reward: float, obs: Label = None) -> float:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Bernoulli(OutcomeDist):
    mu: float
    kind = "bernoulli"

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0) or math.isnan(self.mu):
            raise SchemaError(f"Bernoulli mean {self.mu} outside [0,1]")

    def mean(self):
        return float(self.mu)

    def sample(self, rng):
        return (1.0 if rng.random() < self.mu else 0.0), None

    def log_density(self, reward, obs=None):
        if reward == 1.0:
            return _log(self.mu)
        if reward == 0.0:
            return _log(1.0 - self.mu)
        return -math.inf

    def to_json(self):
        return {"kind": self.kind, "mu": float(self.mu)}


@dataclass(frozen=True)
class Rademacher(OutcomeDist):
    """Reward in {-1, +1} with mean ``mu``."""

    mu: float
    kind = "rademacher"

    def __post_init__(self):
        if not (-1.0 <= self.mu <= 1.0) or math.isnan(self.mu):
            raise SchemaError(f"Rademacher mean {self.mu} outside [-1,1]")

    @property
    def p_plus(self) -> float:
        return (1.0 + self.mu) / 2.0

    def mean(self):
        return float(self.mu)

    def sample(self, rng):
        return (1.0 if rng.random() < self.p_plus else -1.0), None

    def log_density(self, reward, obs=None):
        if reward == 1.0:
            return _log(self.p_plus)
        if reward == -1.0:
            return _log(1.0 - self.p_plus)
        return -math.inf

    def to_json(self):
        return {"kind": self.kind, "mu": float(self.mu)}


@dataclass(frozen=True)
class Gaussian(OutcomeDist):
    mu: float
    var: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.var > 0:
            raise SchemaError(f"Gaussian variance must be positive, got {self.var}")

    def mean(self):
        return float(self.mu)

    def sample(self, rng):
        return float(rng.normal(self.mu, math.sqrt(self.var))), None

    def log_density(self, reward, obs=None):
        # Lebesgue density of the reward; the observation is ignored.
        z = reward - self.mu
        return -0.5 * math.log(2 * math.pi * self.var) - z * z / (2 * self.var)

    def to_json(self):
        return {"kind": self.kind, "mu": float(self.mu), "var": float(self.var)}


@dataclass(frozen=True)
class Categorical(OutcomeDist):
    """Finite distribution over atoms ``support[i] = (reward, label)``."""

    support: tuple
    probs: tuple
    kind = "categorical"

    def __post_init__(self):
        sup = tuple((float(r), lab) for r, lab in self.support)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", probs)
        if len(sup) != len(probs) or not sup:
            raise SchemaError("categorical support and probs must be nonempty and aligned")
        if min(probs) < -_PROB_TOL or abs(sum(probs) - 1.0) > 1e-9:
            raise SchemaError("categorical probs must lie on the simplex")

    def mean(self):
        return float(sum(r * p for (r, _), p in zip(self.support, self.probs)))

    def sample(self, rng):
        u = rng.random()
        acc = 0.0
        for atom, p in zip(self.support, self.probs):
            acc += p
            if u < acc:
                return atom
        return self.support[-1]

    def log_density(self, reward, obs=None):
        mass = sum(p for (r, lab), p in zip(self.support, self.probs) if r == reward and lab == obs)
        return _log(mass)

    def to_json(self):
        return {
            "kind": self.kind,
            "support": [[r, lab] for r, lab in self.support],
            "probs": list(self.probs),
        }


@dataclass(frozen=True)
class PointMass(OutcomeDist):
    reward: float
    kind = "point"

    def mean(self):
        return float(self.reward)

    def sample(self, rng):
        return float(self.reward), None

    def log_density(self, reward, obs=None):
        return 0.0 if (reward == self.reward and obs is None) else -math.inf

    def to_json(self):
        return {"kind": self.kind, "reward": float(self.reward)}


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def mean(P: OutcomeDist) -> float:
    return P.mean()


def sample(P: OutcomeDist, rng: np.random.Generator) -> tuple[float, Label]:
    return P.sample(rng)


def log_density(P: OutcomeDist, reward: float, obs: Label = None) -> float:
    return P.log_density(reward, obs)


def round_stream(seed: int, *counters: int) -> np.random.Generator:
    """Independent counter-based stream for a (seed, round, ...) tuple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, counters)])))


# ---------------------------------------------------------------- divergences


def atoms(P: OutcomeDist) -> list[tuple[tuple[float, Label], float]]:
    """Atom list ((reward, label), mass) of a discrete distribution."""
    if isinstance(P, Bernoulli):
        return [((0.0, None), 1.0 - P.mu), ((1.0, None), P.mu)]
    if isinstance(P, Rademacher):
        return [((-1.0, None), 1.0 - P.p_plus), ((1.0, None), P.p_plus)]
    if isinstance(P, PointMass):
        return [((float(P.reward), None), 1.0)]
    if isinstance(P, Categorical):
        return list(zip(P.support, P.probs))
    raise UnsupportedPair(f"{P.kind} has no atom representation")


def _aligned_masses(P: OutcomeDist, Q: OutcomeDist) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(P, Categorical) and isinstance(Q, Categorical) and P.support == Q.support:
        return np.asarray(P.probs), np.asarray(Q.probs)
    merged: dict = {}
    for col, dist in enumerate((P, Q)):
        for key, mass in atoms(dist):
            merged.setdefault(key, [0.0, 0.0])[col] += mass
    arr = np.array(list(merged.values()))
    return arr[:, 0], arr[:, 1]


def _discrete(kind: DivergenceKind, p: np.ndarray, q: np.ndarray) -> float:
    p = np.clip(p, 0.0, None)
    q = np.clip(q, 0.0, None)
    if kind is DivergenceKind.HELLINGER:
        return float(np.clip(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2), 0.0, 2.0))
    if kind is DivergenceKind.TV:
        return float(np.clip(0.5 * np.sum(np.abs(p - q)), 0.0, 1.0))
    if kind is DivergenceKind.KL:
        pos = p > 0
        if np.any(q[pos] <= 0):
            return math.inf
        return float(max(np.sum(p[pos] * np.log(p[pos] / q[pos])), 0.0))
    raise UnsupportedDivergence(kind.value)


def _gaussian(kind: DivergenceKind, P: Gaussian, Q: Gaussian) -> float:
    m1, v1, m2, v2 = P.mu, P.var, Q.mu, Q.var
    if kind is DivergenceKind.HELLINGER:
        # unnormalized squared Hellinger: 2(1 - Bhattacharyya coefficient)
        bc = math.sqrt(2 * math.sqrt(v1 * v2) / (v1 + v2)) * math.exp(-((m1 - m2) ** 2) / (4 * (v1 + v2)))
        return float(min(max(2.0 * (1.0 - bc), 0.0), 2.0))
    if kind is DivergenceKind.KL:
        return float(0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0))
    if kind is DivergenceKind.TV:
        s1, s2 = math.sqrt(v1), math.sqrt(v2)
        if abs(v1 - v2) <= 1e-15 * max(v1, v2):
            return float(2 * ndtr(abs(m1 - m2) / (2 * s1)) - 1)
        # densities cross where a x^2 + b x + c = 0; TV = P(A) - Q(A) on {p > q}
        a = 1 / (2 * v2) - 1 / (2 * v1)
        b = m1 / v1 - m2 / v2
        c = m2**2 / (2 * v2) - m1**2 / (2 * v1) + math.log(s2 / s1)
        disc = b * b - 4 * a * c
        if disc <= 0:
            return 0.0
        r = sorted(((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)))

        def mass(m, s):
            return ndtr((r[1] - m) / s) - ndtr((r[0] - m) / s)

        # a < 0 (v1 < v2): log p - log q is positive between the roots
        inner = mass(m1, s1) - mass(m2, s2)
        return float(min(max(inner if a < 0 else -inner, 0.0), 1.0))
    raise UnsupportedDivergence(kind.value)


def divergence(kind, P: OutcomeDist, Q: OutcomeDist) -> float:
    """Closed-form divergence between two outcome distributions.

    Squared Hellinger is unnormalized (range [0, 2]).  Discrete kinds of
    different type are compared on the union of their atoms.
    """
    kind = DivergenceKind.parse(kind)
    if kind is DivergenceKind.SQUARED:
        return (P.mean() - Q.mean()) ** 2
    if kind is DivergenceKind.BILINEAR:
        raise UnsupportedDivergence("bilinear divergence needs an embedding (see declab.bilinear)")
    if isinstance(P, Gaussian) or isinstance(Q, Gaussian):
        if not (isinstance(P, Gaussian) and isinstance(Q, Gaussian)):
            raise UnsupportedPair(f"{P.kind} vs {Q.kind}")
        return _gaussian(kind, P, Q)
    if isinstance(P, Bernoulli) and isinstance(Q, Bernoulli):
        return bernoulli_divergence(kind, P.mu, Q.mu)
    if isinstance(P, Rademacher) and isinstance(Q, Rademacher):
        return bernoulli_divergence(kind, P.p_plus, Q.p_plus)
    p, q = _aligned_masses(P, Q)
    return _discrete(kind, p, q)


def bernoulli_divergence(kind, p, q):
    """Vectorized divergence between Ber(p) and Ber(q); scalars in, float out."""
    kind = DivergenceKind.parse(kind)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if kind is DivergenceKind.HELLINGER:
        out = (np.sqrt(p) - np.sqrt(q)) ** 2 + (np.sqrt(1 - p) - np.sqrt(1 - q)) ** 2
    elif kind is DivergenceKind.TV:
        out = np.abs(p - q)
    elif kind is DivergenceKind.SQUARED:
        out = (p - q) ** 2
    elif kind is DivergenceKind.KL:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(p > 0, p * np.log(p / q), 0.0)
            t0 = np.where(p < 1, (1 - p) * np.log((1 - p) / (1 - q)), 0.0)
        out = np.maximum(np.nan_to_num(t1 + t0, nan=np.inf, posinf=np.inf), 0.0)
    else:
        raise UnsupportedDivergence(kind.value)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- smoothing


def smooth(P: OutcomeDist, alpha: float) -> OutcomeDist:
    """(1-alpha) P + alpha * uniform over P's own support."""
    if alpha == 0:
        return P
    if isinstance(P, Bernoulli):
        return Bernoulli((1 - alpha) * P.mu + alpha / 2)
    if isinstance(P, Rademacher):
        return Rademacher((1 - alpha) * P.mu)
    if isinstance(P, Categorical):
        n = len(P.probs)
        return Categorical(P.support, tuple((1 - alpha) * p + alpha / n for p in P.probs))
    if isinstance(P, PointMass):
        return P
    raise UnsupportedPair(f"cannot smooth {P.kind}")


# ---------------------------------------------------------------- JSON codec


def from_json(obj: dict) -> OutcomeDist:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise SchemaError(f"outcome must be an object with a 'kind': {obj!r}")
    kind = str(obj["kind"]).lower()
    fields = {
        "bernoulli": {"kind", "mu"},
        "rademacher": {"kind", "mu"},
        "gaussian": {"kind", "mu", "var"},
        "categorical": {"kind", "support", "probs"},
        "point": {"kind", "reward"},
    }
    if kind not in fields:
        raise SchemaError(f"unknown outcome kind {kind!r}")
    extra = set(obj) - fields[kind]
    if extra:
        raise SchemaError(f"unknown keys for {kind}: {sorted(extra)}")
    try:
        if kind == "bernoulli":
            return Bernoulli(float(obj["mu"]))
        if kind == "rademacher":
            return Rademacher(float(obj["mu"]))
        if kind == "gaussian":
            return Gaussian(float(obj["mu"]), float(obj.get("var", 1.0)))
        if kind == "categorical":
            support = tuple((float(r), _hashable(lab)) for r, lab in obj["support"])
            return Categorical(support, tuple(float(p) for p in obj["probs"]))
        return PointMass(float(obj["reward"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {kind} outcome: {exc}") from None


def _hashable(lab):
    return tuple(lab) if isinstance(lab, list) else lab


def to_json(P: OutcomeDist) -> dict:
    return P.to_json()


def all_bernoulli(dists: Sequence[OutcomeDist]) -> bool:
    return all(isinstance(d, Bernoulli) for d in dists)
