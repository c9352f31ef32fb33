import numpy as np
import pytest

from mdqueue import GameInstance, ModelParams, TimeGrid, linear_cost


def make_reference_1d() -> GameInstance:
    """Single class, unit rates and variances, h(x) = x, g = 0, x0 = 0."""
    params = ModelParams(
        lam=np.array([1.0]),
        mu=np.array([1.0]),
        sigma2_ia=np.array([1.0]),
        sigma2_st=np.array([1.0]),
        lam_tilde=np.zeros(1),
        mu_tilde=np.zeros(1),
        x0=np.zeros(1),
    )
    cost = linear_cost(params, [1.0], [0.0])
    return GameInstance(params, cost, TimeGrid(1.0, 32))


def make_two_class() -> GameInstance:
    """Two classes ordered by c mu, nonzero start and terminal cost."""
    params = ModelParams(
        lam=np.array([1.0, 0.5]),
        mu=np.array([2.0, 1.0]),
        sigma2_ia=np.ones(2),
        sigma2_st=np.ones(2),
        lam_tilde=np.zeros(2),
        mu_tilde=np.zeros(2),
        x0=np.array([0.5, 0.5]),
    )
    cost = linear_cost(params, [2.0, 1.0], [0.5, 0.4])
    return GameInstance(params, cost, TimeGrid(1.0, 32))


@pytest.fixture
def reference_1d() -> GameInstance:
    return make_reference_1d()


@pytest.fixture
def two_class() -> GameInstance:
    return make_two_class()
