import numpy as np
import pytest

from conftest import quadratic_model
from gpmnet.energy import EnergyModel, FeatureBasis, ModelError, build_basis
from gpmnet.oracle import TabularDistribution, TableModel, exact_discrete_objective_constant
from gpmnet.penalty import PenaltyConfig
from gpmnet.scorematch import (
    LossEngine, continuous_term, discrete_term, loss_theta_gradient, mixed_loss, row_loss, smoothed_rows,
)
from gpmnet.train import BasisConfig, TrainConfig, fit
from gpmnet.types import Dataset, Schema, VariableSpec

ONE_C = Schema.all_continuous(1)


@pytest.mark.parametrize("x, expected", [(0.0, -1.0), (1.0, -0.5)])
def test_continuous_term_quadratic(x, expected):
    assert continuous_term(quadratic_model(ONE_C, 0.5), [x], 0) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("m, expected", [(3, -4.5), (2, -2.0)])
def test_discrete_term_uniform(m, expected):
    schema = Schema((VariableSpec.discrete("a", m),))
    model = quadratic_model(schema, 0.5)
    for v in range(m):
        assert discrete_term(model, [v], 0) == pytest.approx(expected, abs=1e-14)


def test_term_kind_errors(mixed_model):
    with pytest.raises(ModelError):
        continuous_term(mixed_model, [0, 0, 0, 0], 1)
    with pytest.raises(ModelError):
        discrete_term(mixed_model, [0, 0, 0, 0], 0)


def test_mixed_row_total():
    schema = Schema((VariableSpec.continuous("c"), VariableSpec.discrete("b", 2)))
    model = quadratic_model(schema, 0.5)
    for v in (0, 1):
        ds = Dataset(schema, [[0.0, v]])
        rep = mixed_loss(model, ds)
        assert rep.total == pytest.approx(-3.0, abs=1e-14)
        np.testing.assert_allclose(rep.per_variable, [-1.0, -2.0], atol=1e-14)


def test_lemma2_enumeration_two_binaries():
    rng = np.random.default_rng(0)
    td = TabularDistribution.discrete(rng.dirichlet(np.ones(4)).reshape(2, 2))
    rows, mass = td.states()
    ds = Dataset(td.schema, rows)
    basis = build_basis(ds, K=4, scope_size=None)
    data = TableModel(td)
    const = sum(m * sum(np.sum(np.exp(data.substitute_discrete(x, i) - data.substitute_discrete(x, i)[int(x[i])])) ** 2
                        for i in range(2)) for x, m in zip(rows, mass))
    for _ in range(10):
        model = EnergyModel(td.schema, basis, rng.normal(size=4))
        eq12, eq14, c = exact_discrete_objective_constant(td, model)
        lhs = sum(m * 2 * sum(discrete_term(model, x, i) for i in range(2)) for x, m in zip(rows, mass))
        assert lhs == pytest.approx(eq12 - const, abs=1e-10)
        assert c == pytest.approx(const, abs=1e-10)


def test_mixed_loss_matches_row_definitions(mixed_ds, mixed_model):
    rep = mixed_loss(mixed_model, mixed_ds)
    ref = np.mean([row_loss(mixed_model, x) for x in mixed_ds.values])
    assert rep.total == pytest.approx(ref, rel=1e-12)
    assert rep.total == pytest.approx(rep.per_variable.sum(), rel=1e-14)


@pytest.mark.parametrize("kind", ["continuous", "discrete"])
def test_pure_specializations(kind):
    rng = np.random.default_rng(1)
    if kind == "continuous":
        ds = Dataset(Schema.all_continuous(3), rng.normal(size=(30, 3)))
        term = continuous_term
    else:
        schema = Schema(tuple(VariableSpec.discrete(f"v{j}", 3) for j in range(3)))
        ds = Dataset(schema, rng.integers(0, 3, size=(30, 3)))
        term = discrete_term
    model = EnergyModel(ds.schema, build_basis(ds, K=10), rng.normal(size=10))
    ref = np.mean([sum(term(model, x, i) for i in range(3)) for x in ds.values])
    assert mixed_loss(model, ds).total == pytest.approx(ref, rel=1e-12)


def test_schema_mismatch(mixed_model):
    ds = Dataset(Schema.all_continuous(4), np.zeros((2, 4)))
    with pytest.raises(ModelError, match="schema"):
        mixed_loss(mixed_model, ds)


def test_row_order_invariance(mixed_ds, mixed_model):
    perm = np.random.default_rng(0).permutation(mixed_ds.n)
    a = mixed_loss(mixed_model, mixed_ds).total
    b = mixed_loss(mixed_model, mixed_ds.take(perm)).total
    assert a == pytest.approx(b, rel=1e-13)


def test_mirror_features_get_equal_gradients():
    # data symmetric under x -> -x, features centered at +c and -c
    ds = Dataset(ONE_C, [[-1.3], [1.3], [-0.4], [0.4]])
    basis = FeatureBasis(np.array([[0.7], [-0.7]]), np.ones(1), (None,), 0.05)
    g = loss_theta_gradient(EnergyModel(ONE_C, basis, np.zeros(2)), ds)
    assert abs(g[0] - g[1]) <= 1e-12


def _fd_grad(engine, th, h=1e-5):
    fd = np.empty(len(th))
    for k in range(len(th)):
        e = np.zeros(len(th))
        e[k] = h
        fd[k] = (engine.evaluate(th + e, with_grad=False)[0].total - engine.evaluate(th - e, with_grad=False)[0].total) / (2 * h)
    return fd


@pytest.mark.parametrize("smoothing", [0.0, 0.05])
@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(mixed_ds, smoothing, seed):
    basis = build_basis(mixed_ds, K=12, seed=seed)
    th = np.random.default_rng(seed).normal(size=12)
    eng = LossEngine(basis, mixed_ds.schema, mixed_ds.values, smoothing=smoothing)
    _, g = eng.evaluate(th)
    fd = _fd_grad(eng, th)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-5


def test_single_row_gradient(mixed_ds, mixed_model):
    one = mixed_ds.take([4])
    eng = LossEngine(mixed_model.basis, mixed_ds.schema, mixed_ds.values)
    _, sub = eng.evaluate(mixed_model.theta, rows=[4])
    np.testing.assert_allclose(loss_theta_gradient(mixed_model, one), sub, rtol=1e-12, atol=1e-14)


def test_smoothed_rows_weights(mixed_ds):
    aug, w = smoothed_rows(mixed_ds.schema, mixed_ds.values, 0.1)
    # B has 2 alternatives, D has 1
    assert aug.shape[0] == mixed_ds.n * 4
    np.testing.assert_allclose(w[mixed_ds.n:], 0.1)
    assert np.all(aug[mixed_ds.n:2 * mixed_ds.n, 1] != mixed_ds.values[:, 1])


def _score_error(n, seed=0):
    x = np.random.default_rng(seed).standard_normal(n)
    ds = Dataset(ONE_C, x[:, None])
    res = fit(ds, BasisConfig(K=20, seed=seed), PenaltyConfig(lam=0.0),
              TrainConfig(max_iters=3000, lr=0.02, standardize=False))
    grid = np.linspace(-2, 2, 41)
    s = np.array([res.model.derivatives([g], ("grad",)).grad[0] for g in grid])
    return float(np.mean((s + grid) ** 2))


def test_gaussian_score_recovered():
    assert _score_error(2000) < 0.05


def test_score_error_shrinks_with_n():
    errs = [np.mean([_score_error(n, s) for s in range(2)]) for n in (200, 1000, 5000)]
    assert errs[0] > errs[1] > errs[2]
