import numpy as np
import pytest

from gpmnet.energy import EnergyModel, build_basis
from gpmnet.gpm import GpmMatrix, PairStatistics, compute_gpm, kind_matrix
from gpmnet.penalty import (
    PenaltyConfig, PenaltyError, PenaltyKind, adaptive_weights_from_pilot, penalty_theta_gradient, penalty_value, rho,
    rho_prime,
)
from gpmnet.types import Schema

KINDS = ["l1", "scad", "mcp"]


def gpm_of(vals, d=3):
    om = np.zeros((d, d))
    om[np.triu_indices(d, 1)] = vals
    return GpmMatrix(om + om.T, kind_matrix(Schema.all_continuous(d)))


@pytest.mark.parametrize("kind", KINDS)
def test_zero_matrix(kind):
    assert penalty_value(PenaltyConfig(kind, 0.3), gpm_of([0, 0, 0])) == 0.0


def test_l1_value():
    assert penalty_value(PenaltyConfig("l1", 0.5), gpm_of([0.8, 0, 0])) == pytest.approx(0.4)


def test_scad_plateau():
    assert penalty_value(PenaltyConfig("scad", 0.5), gpm_of([3.0, 0, 0])) == pytest.approx(0.5875)


def test_adaptive_value():
    w = np.array([[0, 2, 1], [2, 0, 3], [1, 3, 0.0]])
    cfg = PenaltyConfig("adaptive-l1", 0.5, adaptive_weights=w)
    assert penalty_value(cfg, gpm_of([1.0, 1.0, 1.0])) == pytest.approx(0.5 * 6)
    with pytest.raises(PenaltyError):
        penalty_value(PenaltyConfig("adaptive-l1", 0.5), gpm_of([1, 1, 1]))


@pytest.mark.parametrize("bad", [dict(lam=1.5), dict(lam=-0.1), dict(scad_a=2.0), dict(mcp_gamma=1.0), dict(kind="l2")])
def test_config_validation(bad):
    with pytest.raises(PenaltyError):
        PenaltyConfig(**bad)


def test_kind_aliases():
    assert PenaltyKind.parse("Adaptive_L1") is PenaltyKind.ADAPTIVE_L1
    assert PenaltyKind.parse("SCAD") is PenaltyKind.SCAD


@pytest.mark.parametrize("kind", KINDS)
def test_rho_shape_properties(kind):
    cfg = PenaltyConfig(kind, 0.4)
    t = np.linspace(0, 5, 2001)
    r = rho(cfg, t)
    assert r[0] == 0
    assert np.all(np.diff(r) >= -1e-15)
    assert np.all(cfg.lam * t >= r - 1e-15)
    if kind != "l1":
        start = cfg.scad_a * cfg.lam if kind == "scad" else cfg.mcp_gamma * cfg.lam
        tail = r[t > start]
        assert np.ptp(tail) == 0


@pytest.mark.parametrize("kind", KINDS)
def test_rho_prime_left_derivative(kind):
    cfg = PenaltyConfig(kind, 0.3)
    t = np.array([0.05, 0.3, 0.7, 1.11, 2.0])
    h = 1e-7
    left = (rho(cfg, t) - rho(cfg, t - h)) / h
    np.testing.assert_allclose(rho_prime(cfg, t), left, atol=1e-6)


def test_negative_entry_rejected():
    om = np.array([[0, -1.0], [-1.0, 0]])
    with pytest.raises(Exception):
        penalty_value(PenaltyConfig(), GpmMatrix(om, kind_matrix(Schema.all_continuous(2))))


def test_theta_gradient_zero_cases(mixed_ds, mixed_model):
    g = compute_gpm(mixed_model, mixed_ds)
    assert np.all(penalty_theta_gradient(PenaltyConfig("scad", 0.0), g) == 0)
    tiny = PenaltyConfig("scad", 1e-6)
    assert np.all(g.omega[np.triu_indices(4, 1)] > tiny.scad_a * tiny.lam)
    assert np.all(penalty_theta_gradient(tiny, g) == 0)


def test_theta_gradient_errors(mixed_ds, mixed_model):
    g = compute_gpm(mixed_model, mixed_ds)
    with pytest.raises(PenaltyError, match="squared"):
        penalty_theta_gradient(PenaltyConfig(), g.rooted())
    with pytest.raises(PenaltyError, match="tape"):
        penalty_theta_gradient(PenaltyConfig(), gpm_of([1, 1, 1]))


@pytest.mark.parametrize("kind", KINDS)
def test_theta_gradient_fd(mixed_ds, kind):
    basis = build_basis(mixed_ds, K=12, seed=2)
    th = 0.3 * np.random.default_rng(2).normal(size=12)
    model = EnergyModel(mixed_ds.schema, basis, th)
    eng = PairStatistics(basis, mixed_ds.schema, mixed_ds.values)
    g = compute_gpm(model, mixed_ds, engine=eng)
    iu = np.triu_indices(4, 1)
    lam = float(np.median(g.omega[iu]))
    cfg = PenaltyConfig(kind, min(lam, 1.0))

    def val(t):
        return penalty_value(cfg, GpmMatrix(eng.omega(t), g.kinds))

    h = 1e-6
    fd = np.array([(val(th + h * e) - val(th - h * e)) / (2 * h) for e in np.eye(12)])
    an = penalty_theta_gradient(cfg, g)
    assert np.max(np.abs(an - fd)) / np.max(np.abs(fd)) <= 1e-4


@pytest.mark.parametrize("pilot, expected", [(0.0, 1e6), (1 - 1e-6, 1.0)])
def test_adaptive_weights(pilot, expected):
    w = adaptive_weights_from_pilot(gpm_of([pilot, pilot, pilot]))
    assert w[0, 1] == pytest.approx(expected)
    assert np.all(np.diag(w) == 0)


def test_uniform_pilot_uniform_weights():
    w = adaptive_weights_from_pilot(gpm_of([0.3, 0.3, 0.3]))
    off = w[~np.eye(3, dtype=bool)]
    assert np.ptp(off) == 0
