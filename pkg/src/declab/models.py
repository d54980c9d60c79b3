"""Models over a finite decision space, finite model classes, localization and mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import probkit as pk
from .errors import MixtureUnsupported, SchemaError, WeightDimError

_SET_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Model:
    """A map decision -> OutcomeDist, with cached mean rewards."""

    outcomes: tuple
    name: str = ""
    fvec: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        if not outcomes:
            raise SchemaError("a model needs at least one decision")
        object.__setattr__(self, "outcomes", outcomes)
        fvec = np.array([o.mean() for o in outcomes], dtype=float)
        fvec.setflags(write=False)
        object.__setattr__(self, "fvec", fvec)

    @classmethod
    def bernoulli(cls, means, name: str = "") -> "Model":
        return cls(tuple(pk.Bernoulli(float(m)) for m in means), name)

    @classmethod
    def rademacher(cls, means, name: str = "") -> "Model":
        return cls(tuple(pk.Rademacher(float(m)) for m in means), name)

    @property
    def n_decisions(self) -> int:
        return len(self.outcomes)

    @property
    def opt(self) -> tuple[int, float]:
        return best_decision(self)

    def __getitem__(self, pi: int) -> pk.OutcomeDist:
        return self.outcomes[pi]

    def to_json(self) -> dict:
        return {"outcomes": [o.to_json() for o in self.outcomes]}


@dataclass(frozen=True, eq=False)
class ModelClass:
    models: tuple
    truth_idx: Optional[int] = None
    density_ratio_bound: Optional[float] = None

    def __post_init__(self):
        models = tuple(self.models)
        n = models[0].n_decisions if models else 0
        if any(m.n_decisions != n for m in models):
            raise SchemaError("all models must share the decision space")
        if self.truth_idx is not None and not (0 <= self.truth_idx < len(models)):
            raise SchemaError(f"truth index {self.truth_idx} out of range")
        object.__setattr__(self, "models", models)

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i: int) -> Model:
        return self.models[i]

    def __iter__(self):
        return iter(self.models)

    @property
    def n_decisions(self) -> int:
        return self.models[0].n_decisions if self.models else 0

    @property
    def fmat(self) -> np.ndarray:
        """(N, A) matrix of mean rewards."""
        if not self.models:
            return np.zeros((0, 0))
        return np.stack([m.fvec for m in self.models])

    @property
    def truth(self) -> Optional[Model]:
        return None if self.truth_idx is None else self.models[self.truth_idx]

    def subset(self, idx: Sequence[int]) -> "ModelClass":
        idx = list(idx)
        truth = idx.index(self.truth_idx) if self.truth_idx in idx else None
        return ModelClass(tuple(self.models[i] for i in idx), truth, self.density_ratio_bound)

    def to_json(self) -> dict:
        out = {"decisions": self.n_decisions, "models": [m.to_json() for m in self.models]}
        if self.truth_idx is not None:
            out["truth"] = self.truth_idx
        return out


def best_decision(M: Model) -> tuple[int, float]:
    """Least-index maximizer of the mean reward."""
    i = int(np.argmax(M.fvec))
    return i, float(M.fvec[i])


def opt_values(cls: ModelClass) -> np.ndarray:
    return cls.fmat.max(axis=1)


def gap_matrix(cls: ModelClass) -> np.ndarray:
    """g_M(pi) = f_M(pi_M) - f_M(pi) for every member."""
    F = cls.fmat
    return F.max(axis=1, keepdims=True) - F


def localize(cls: ModelClass, ref: Model, eps: float) -> ModelClass:
    """Members whose optimal value is at most eps above the reference's."""
    keep = [i for i, m in enumerate(cls) if best_decision(ref)[1] >= best_decision(m)[1] - eps - _SET_TOL]
    return cls.subset(keep)


def localize_linf(cls: ModelClass, ref: Model, eps: float) -> ModelClass:
    """Members whose gap profile is uniformly eps-close to the reference's."""
    g_ref = ref.fvec.max() - ref.fvec
    G = gap_matrix(cls)
    keep = [i for i in range(len(cls)) if np.max(np.abs(G[i] - g_ref)) <= eps + _SET_TOL]
    return cls.subset(keep)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    base: ModelClass
    weights: np.ndarray

    def __post_init__(self):
        w = _check_weights(self.weights, len(self.base))
        object.__setattr__(self, "weights", w)

    def model(self) -> Model:
        return mixture(self.base, self.weights)


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise WeightDimError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < -_SET_TOL) or abs(w.sum() - 1.0) > 1e-9:
        raise WeightDimError("mixture weights must lie on the simplex")
    return np.clip(w, 0.0, None)


def mix_outcomes(dists: Sequence[pk.OutcomeDist], w: np.ndarray) -> pk.OutcomeDist:
    """Weighted mixture of outcome distributions at one decision."""
    active = [(d, wi) for d, wi in zip(dists, w) if wi > 0]
    if len(active) == 1:
        return active[0][0]
    if any(isinstance(d, pk.Gaussian) for d, _ in active):
        raise MixtureUnsupported("Gaussian mixtures have no closed form; use a randomized estimator")
    tot = sum(wi for _, wi in active)
    if all(isinstance(d, pk.Bernoulli) for d, _ in active):
        return pk.Bernoulli(min(max(sum(wi * d.mu for d, wi in active) / tot, 0.0), 1.0))
    if all(isinstance(d, pk.Rademacher) for d, _ in active):
        return pk.Rademacher(min(max(sum(wi * d.mu for d, wi in active) / tot, -1.0), 1.0))
    merged: dict = {}
    for d, wi in active:
        for key, mass in pk.atoms(d):
            merged[key] = merged.get(key, 0.0) + wi * mass / tot
    if len(merged) == 1:
        ((r, lab),) = merged
        if lab is None:
            return pk.PointMass(r)
    probs = np.array(list(merged.values()))
    return pk.Categorical(tuple(merged), tuple(probs / probs.sum()))


def mixture(cls: ModelClass, weights) -> Model:
    """Per-decision mixture sum_i w_i M_i(pi), an element of co(class)."""
    w = _check_weights(weights, len(cls))
    return Model(tuple(mix_outcomes([m.outcomes[a] for m in cls], w) for a in range(cls.n_decisions)), "mixture")


def divergence_matrix(kind, models: Sequence[Model], ref: Model) -> np.ndarray:
    """(N, A) matrix of D(M(pi) || ref(pi))."""
    kind = pk.DivergenceKind.parse(kind)
    means = np.stack([m.fvec for m in models])
    if kind is pk.DivergenceKind.SQUARED:
        return (means - ref.fvec[None, :]) ** 2
    if all(pk.all_bernoulli(m.outcomes) for m in models) and pk.all_bernoulli(ref.outcomes):
        return np.atleast_2d(pk.bernoulli_divergence(kind, means, np.broadcast_to(ref.fvec, means.shape)))
    return np.array([[pk.divergence(kind, m.outcomes[a], ref.outcomes[a]) for a in range(ref.n_decisions)] for m in models])


# ---------------------------------------------------------------- JSON


def class_from_json(obj: dict) -> ModelClass:
    if not isinstance(obj, dict):
        raise SchemaError("model-class file must be a JSON object")
    extra = set(obj) - {"decisions", "models", "truth", "density_ratio_bound"}
    if extra:
        raise SchemaError(f"unknown model-class keys: {sorted(extra)}")
    if "models" not in obj or not isinstance(obj["models"], list):
        raise SchemaError("model-class file needs a 'models' list")
    models = []
    for k, m in enumerate(obj["models"]):
        if not isinstance(m, dict) or set(m) - {"outcomes", "name"} or "outcomes" not in m:
            raise SchemaError(f"model {k} must be {{'outcomes': [...]}}")
        models.append(Model(tuple(pk.from_json(o) for o in m["outcomes"]), m.get("name", "")))
    A = obj.get("decisions")
    if A is not None and any(m.n_decisions != A for m in models):
        raise SchemaError(f"every model must have {A} outcomes")
    truth = obj.get("truth")
    if truth is not None and not isinstance(truth, int):
        raise SchemaError("truth must be an integer index")
    return ModelClass(tuple(models), truth, obj.get("density_ratio_bound"))


def class_to_json(cls: ModelClass) -> dict:
    return cls.to_json()
