import warnings

import numpy as np
import pytest

from gpmnet.energy import EnergyModel, FeatureBasis, build_basis
from gpmnet.types import Dataset, Schema, VariableSpec


@pytest.fixture
def mixed_ds():
    rng = np.random.default_rng(3)
    n = 40
    schema = Schema((
        VariableSpec.continuous("A"),
        VariableSpec.discrete("B", 3),
        VariableSpec.continuous("C"),
        VariableSpec.discrete("D", 2),
    ))
    X = np.column_stack([rng.normal(size=n), rng.integers(0, 3, n), rng.normal(size=n), rng.integers(0, 2, n)])
    return Dataset(schema, X)


@pytest.fixture
def mixed_model(mixed_ds):
    basis = build_basis(mixed_ds, K=12, seed=1)
    th = np.random.default_rng(5).normal(size=basis.K)
    return EnergyModel(mixed_ds.schema, basis, th)


def quadratic_model(schema, alpha, K=1):
    """theta = 0 model: only the anchor -alpha * |x_c|^2 is active."""
    d = schema.d
    basis = FeatureBasis(np.zeros((K, d)), np.ones(d), tuple(
        np.linspace(0, 1, schema.cardinality(j)) if schema.is_discrete(j) else None for j in range(d)
    ), alpha)
    return EnergyModel(schema, basis, np.zeros(K))


@pytest.fixture(autouse=True)
def _quiet_descent_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "smoothed training loss", RuntimeWarning)
        yield
