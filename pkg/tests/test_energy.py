import numpy as np
import pytest

from conftest import quadratic_model
from gpmnet.energy import (
    EnergyModel, FeatureBasis, ModelError, StaleTapeError, build_basis, default_codebook, load_model, save_model,
    theta_gradient,
)
from gpmnet.types import Dataset, Schema, VariableSpec


@pytest.mark.parametrize("m, codes", [(2, [0, 1]), (3, [0, 0.5, 1]), (5, [0, 0.25, 0.5, 0.75, 1])])
def test_codebook(m, codes):
    np.testing.assert_allclose(default_codebook(m), codes)


def test_constant_coordinate_hits_bandwidth_floor():
    X = np.column_stack([np.full(20, 2.0), np.arange(20.0)])
    b = build_basis(Dataset(Schema.all_continuous(2), X), K=5)
    assert b.bandwidth[0] == 1e-3
    assert b.bandwidth[1] > 1


def test_build_basis_deterministic_and_distinct(mixed_ds):
    a, b = build_basis(mixed_ds, K=10, seed=4), build_basis(mixed_ds, K=10, seed=4)
    assert np.array_equal(a.centers, b.centers) and np.array_equal(a.scopes, b.scopes)
    full = build_basis(mixed_ds, K=10, seed=4, scope_size=None)
    assert len(np.unique(full.centers, axis=0)) == 10


def test_k_exceeds_n(mixed_ds):
    with pytest.raises(ModelError, match="exceeds"):
        build_basis(mixed_ds, K=mixed_ds.n + 1)


def test_log_density_closed_forms():
    s = Schema.all_continuous(1)
    assert quadratic_model(s, 0.0).log_density([1.7]) == 0.0
    assert quadratic_model(s, 1.0).log_density([2.0]) == -4.0
    basis = FeatureBasis(np.array([[0.3]]), np.ones(1), (None,), 0.0)
    assert EnergyModel(s, basis, [3.0]).log_density([0.3]) == 3.0


def test_quadratic_derivatives():
    m = quadratic_model(Schema.all_continuous(3), 1.0)
    x = np.array([0.5, -1.0, 2.0])
    b = m.derivatives(x)
    np.testing.assert_allclose(b.grad, -2 * x)
    np.testing.assert_allclose(b.hess_diag, -2.0)
    off = b.cross - np.diag(np.diag(b.cross))
    assert np.all(off == 0)


def test_nonfinite_row_rejected(mixed_model):
    with pytest.raises(ModelError, match="non-finite"):
        mixed_model.log_density([np.nan, 0, 0, 0])


def test_derivative_wrt_discrete_rejected(mixed_model):
    with pytest.raises(ModelError, match="discrete"):
        mixed_model.derivatives([0.1, 0, 0.2, 1], ("grad",), [1])


def _fd_rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_grad_and_cross_match_finite_differences(mixed_ds, seed):
    basis = build_basis(mixed_ds, K=12, seed=seed, scope_size=None)
    rng = np.random.default_rng(seed)
    m = EnergyModel(mixed_ds.schema, basis, rng.normal(size=12))
    x = mixed_ds.values[seed].copy()
    b = m.derivatives(x)
    cont = mixed_ds.schema.continuous_indices
    h = 1e-4
    fd = []
    fdg = []
    for c in cont:
        e = np.zeros(4)
        e[c] = h
        fd.append((m.log_density(x + e) - m.log_density(x - e)) / (2 * h))
        fdg.append((m.derivatives(x + e).grad - m.derivatives(x - e).grad) / (2 * h))
    assert _fd_rel(b.grad, np.array(fd)) <= 1e-5
    fdg = np.array(fdg)
    np.testing.assert_allclose(np.diag(fdg), b.hess_diag, rtol=1e-4, atol=1e-8)
    assert _fd_rel(b.cross, fdg) <= 1e-4
    assert np.array_equal(b.cross, b.cross.T)


def test_substitute_discrete(mixed_model):
    x = np.array([0.2, 2, -0.4, 1])
    L = mixed_model.substitute_discrete(x, 3)
    assert L[1] == mixed_model.log_density(x)
    for v in range(3):
        y = x.copy()
        y[1] = v
        assert mixed_model.substitute_discrete(x, 1)[v] == pytest.approx(mixed_model.log_density(y), abs=1e-14)
    with pytest.raises(ModelError):
        mixed_model.substitute_discrete(x, 0)


def test_substitute_constant_cases(mixed_ds):
    schema = mixed_ds.schema
    zero = quadratic_model(schema, 0.0)
    assert np.all(zero.substitute_discrete([0.1, 1, 0.3, 0], 1) == 0)
    # features that never read coordinate 1
    basis = build_basis(mixed_ds, K=6, seed=0)
    scopes = np.where(basis.scopes == 1, -1, basis.scopes)
    keep = (scopes >= 0).any(axis=1)
    blind = FeatureBasis(basis.centers[keep], basis.bandwidth, basis.codebooks, basis.alpha, scopes[keep])
    m = EnergyModel(schema, blind, np.random.default_rng(0).normal(size=blind.K))
    L = m.substitute_discrete([0.1, 1, 0.3, 0], 1)
    assert np.ptp(L) == 0


def test_theta_linearity(mixed_ds, mixed_model):
    x = mixed_ds.values[0]
    t1, t2 = np.random.default_rng(1).normal(size=(2, mixed_model.K))
    d1 = mixed_model.with_theta(t1).derivatives(x)
    d2 = mixed_model.with_theta(t2).derivatives(x)
    d12 = mixed_model.with_theta(t1 + t2).derivatives(x)
    d0 = mixed_model.with_theta(np.zeros(mixed_model.K)).derivatives(x)
    for f in ("value", "grad", "hess_diag", "cross"):
        np.testing.assert_allclose(getattr(d12, f), getattr(d1, f) + getattr(d2, f) - getattr(d0, f), atol=1e-12)


def test_log_density_decreases_far_out(mixed_model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        u = rng.normal(size=2)
        vals = [mixed_model.log_density([t * u[0], 1, t * u[1], 0]) for t in (20, 40, 80)]
        assert vals[0] > vals[1] > vals[2]


def test_theta_gradient_primitives(mixed_ds, mixed_model):
    x = mixed_ds.values[2]
    g = theta_gradient(mixed_model, lambda t: t.log_density(x))
    np.testing.assert_allclose(g, mixed_model.features(x))
    gs = theta_gradient(mixed_model, lambda t: t.score(x, 0) ** 2)
    b = mixed_model.derivatives(x, ("grad", "theta"), [0])
    np.testing.assert_allclose(gs, 2 * b.grad[0] * b.grad_theta[0])


def test_theta_gradient_random_functional_fd(mixed_ds, mixed_model):
    x, y = mixed_ds.values[3], mixed_ds.values[7]

    def f(t):
        L = t.substitute(x, 1)
        r = sum(((v - L[int(x[1])]).exp() for v in L), t.constant(0.0))
        return r.log() * t.cross(y, 0, 2) + t.hess_diag(x, 2) / (1 + t.score(y, 0) ** 2)

    g = theta_gradient(mixed_model, f)
    h = 1e-5
    fd = np.empty(mixed_model.K)
    for k in range(mixed_model.K):
        e = np.zeros(mixed_model.K)
        e[k] = h
        up = f(__import__("gpmnet.energy", fromlist=["Tape"]).Tape(mixed_model.with_theta(mixed_model.theta + e))).value
        dn = f(__import__("gpmnet.energy", fromlist=["Tape"]).Tape(mixed_model.with_theta(mixed_model.theta - e))).value
        fd[k] = (up - dn) / (2 * h)
    assert _fd_rel(g, fd) <= 1e-5


def test_stale_tape(mixed_ds, mixed_model):
    from gpmnet.energy import Tape

    old = Tape(mixed_model).log_density(mixed_ds.values[0])
    with pytest.raises(StaleTapeError):
        theta_gradient(mixed_model.with_theta(mixed_model.theta + 1), old)
    other = Tape(mixed_model).log_density(mixed_ds.values[1])
    with pytest.raises(StaleTapeError):
        old + other


def test_checkpoint_round_trip(tmp_path, mixed_model, mixed_ds):
    p = tmp_path / "m.json"
    save_model(mixed_model, p)
    back = load_model(p)
    assert np.array_equal(back.theta, mixed_model.theta)
    x = mixed_ds.values[5]
    assert back.log_density(x) == mixed_model.log_density(x)


def test_bit_identical_evaluations(mixed_model, mixed_ds):
    a = [mixed_model.derivatives(x).cross.tobytes() for x in mixed_ds.values[:5]]
    b = [mixed_model.derivatives(x).cross.tobytes() for x in mixed_ds.values[:5]]
    assert a == b
