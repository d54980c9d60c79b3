import numpy as np
import pytest

from declab.models import Model, ModelClass


def random_bernoulli_class(rng, n_models=None, n_decisions=None, lo=0.05, hi=0.95):
    n = n_models or int(rng.integers(1, 7))
    A = n_decisions or int(rng.integers(1, 7))
    return ModelClass(tuple(Model.bernoulli(rng.uniform(lo, hi, A)) for _ in range(n)))


def two_model_class():
    return ModelClass((Model.bernoulli([0.6, 0.5], "M1"), Model.bernoulli([0.5, 0.6], "M2")))


def mab_class(A=5, gap=0.2):
    return ModelClass(tuple(Model.bernoulli(0.5 + gap * (np.arange(A) == i)) for i in range(A)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
