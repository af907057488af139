"""Exact verification engines on small enumerable distributions.

Everything here works from exact probabilities (or quadrature on a 1-D
grid), never from a fitted model, so the learned pipeline can be checked
against ground truth.  Pair statistics are evaluated through the public
functions of :mod:`gpmnet.gpm` so that the oracle battery also exercises
them.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import gpm as _gpm
from . import scorematch as _sm
from .energy import EnergyModel, build_basis
from .types import Dataset, Schema, VariableSpec


class OracleError(ValueError):
    pass


MAX_STATES = 10_000
CI_PROB_TOL = 1e-12
CI_OMEGA_TOL = 1e-9
MD_OMEGA_TOL = 1e-8


@dataclass(frozen=True)
class TabularDistribution:
    """Joint table of an all-discrete distribution, or of a mixed one on a 1-D grid.

    ``prob`` has one axis per variable.  Discrete axes index categories; the
    optional continuous axis (``c_axis``) indexes ``nodes`` and holds density
    values, integrated with the trapezoid ``weights``.  ``dlog`` may supply the
    exact derivative d/dx_c log p(x) as ``dlog(x_c, discrete_index_tuple)``.
    """

    schema: Schema
    prob: np.ndarray = field(repr=False)
    c_axis: int | None = None
    nodes: np.ndarray | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    dlog: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        p = np.array(self.prob, float, copy=True)
        if p.ndim != self.schema.d:
            raise OracleError("table needs one axis per variable")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise OracleError("every cell must be strictly positive")
        for j in range(self.schema.d):
            if j == self.c_axis:
                if self.nodes is None or self.weights is None or len(self.nodes) != p.shape[j]:
                    raise OracleError("the continuous axis needs grid nodes and quadrature weights")
                if self.schema.is_discrete(j):
                    raise OracleError("c_axis must be a continuous variable")
            elif not self.schema.is_discrete(j) or p.shape[j] != self.schema.cardinality(j):
                raise OracleError(f"axis {j} must be discrete with {self.schema.cardinality(j)} cells")
        if self.c_axis is None and self.schema.continuous_indices:
            raise OracleError("continuous variables need a grid axis")
        mass = float(np.sum(p * self._qshape()))
        if abs(mass - 1.0) > 1e-12:
            raise OracleError(f"table mass {mass!r} is not 1")
        p.setflags(write=False)
        object.__setattr__(self, "prob", p)

    def _qshape(self) -> np.ndarray | float:
        if self.c_axis is None:
            return 1.0
        shape = [1] * self.schema.d
        shape[self.c_axis] = len(self.weights)
        return np.asarray(self.weights, float).reshape(shape)

    @classmethod
    def discrete(cls, table) -> TabularDistribution:
        t = np.asarray(table, float)
        schema = Schema(tuple(VariableSpec.discrete(f"X{j + 1}", m) for j, m in enumerate(t.shape)))
        return cls(schema, t / t.sum())

    @classmethod
    def mixed(cls, density, c_axis: int, nodes, cards: dict | None = None, dlog=None) -> TabularDistribution:
        """Normalize nonnegative grid values with trapezoid weights; every other axis is discrete."""
        dens = np.asarray(density, float)
        nodes = np.asarray(nodes, float)
        w = trapezoid_weights(nodes)
        specs = []
        for j, m in enumerate(dens.shape):
            specs.append(VariableSpec.continuous(f"X{j + 1}") if j == c_axis else VariableSpec.discrete(f"X{j + 1}", m))
        shape = [1] * dens.ndim
        shape[c_axis] = len(w)
        mass = float(np.sum(dens * w.reshape(shape)))
        return cls(Schema(tuple(specs)), dens / mass, c_axis, nodes, w, dlog)

    @property
    def n_states(self) -> int:
        return int(self.prob.size)

    def states(self):
        """(rows in data units, probability mass of each row)."""
        if self.n_states > MAX_STATES:
            raise OracleError(f"state space of {self.n_states} exceeds {MAX_STATES}")
        idx = np.array(list(itertools.product(*[range(m) for m in self.prob.shape])), dtype=float)
        mass = (self.prob * self._qshape()).reshape(-1)
        rows = idx.copy()
        if self.c_axis is not None:
            rows[:, self.c_axis] = self.nodes[idx[:, self.c_axis].astype(int)]
        return rows, mass


def trapezoid_weights(nodes) -> np.ndarray:
    x = np.asarray(nodes, float)
    w = np.zeros_like(x)
    h = np.diff(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


class TableModel:
    """Lookup-table model exposing the pair-statistic protocol."""

    def __init__(self, td: TabularDistribution):
        self.td = td
        self.schema = td.schema
        self.logp = np.log(td.prob)
        self._h = None
        if td.c_axis is not None:
            h = np.diff(td.nodes)
            if not np.allclose(h, h[0], rtol=1e-9, atol=0):
                raise OracleError("grid must be uniform")
            self._h = float(h[0])

    def _index(self, x) -> tuple[int, ...]:
        x = np.asarray(x, float)
        idx = []
        for j in range(self.schema.d):
            if j == self.td.c_axis:
                g = int(np.argmin(np.abs(self.td.nodes - x[j])))
                if abs(self.td.nodes[g] - x[j]) > 1e-9 * max(1.0, abs(x[j])):
                    raise OracleError(f"{x[j]} is not a grid node")
                idx.append(g)
            else:
                idx.append(int(x[j]))
        return tuple(idx)

    def log_density(self, x) -> float:
        return float(self.logp[self._index(x)])

    def substitute_discrete(self, x, i: int) -> np.ndarray:
        idx = list(self._index(x))
        out = []
        for v in range(self.schema.cardinality(i)):
            idx[i] = v
            out.append(self.logp[tuple(idx)])
        return np.array(out)

    def score(self, x, c: int) -> float:
        if c != self.td.c_axis:
            raise OracleError("scores exist only along the continuous grid axis")
        idx = self._index(x)
        if self.td.dlog is not None:
            disc = tuple(v for j, v in enumerate(idx) if j != c)
            return float(self.td.dlog(float(self.td.nodes[idx[c]]), disc))
        line = self.logp[tuple(slice(None) if j == c else v for j, v in enumerate(idx))]
        return float(fd4(line, self._h, idx[c]))

    def cross(self, x, i: int, j: int) -> float:
        raise OracleError("tables carry at most one continuous axis")


def fd4(f: np.ndarray, h: float, g: int) -> float:
    """Fourth-order finite-difference derivative of grid values ``f`` at node ``g``."""
    G = len(f)
    if G < 5:
        raise OracleError("need at least 5 nodes")
    if 2 <= g <= G - 3:
        return (-f[g + 2] + 8 * f[g + 1] - 8 * f[g - 1] + f[g - 2]) / (12 * h)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    if g < 2:
        # one-sided, shifted for g = 1
        if g == 0:
            return float(c @ f[0:5])
        return float(np.array([-3, -10, 18, -6, 1]) @ f[0:5] / (12 * h))
    if g == G - 1:
        return float(-(c @ f[::-1][0:5]))
    return float(-(np.array([-3, -10, 18, -6, 1]) @ f[::-1][0:5] / (12 * h)))


# -- conditional independence -----------------------------------------------------


def exact_ci(td: TabularDistribution, i: int, j: int) -> bool:
    """X_i independent of X_j given all other variables, by direct factorization."""
    if td.c_axis is not None:
        raise OracleError("continuous axis present; use exact_ci_mixed")
    p = np.moveaxis(td.prob, (i, j), (0, 1))
    mi, mj = p.shape[0], p.shape[1]
    p = p.reshape(mi, mj, -1)
    pz = p.sum(axis=(0, 1))
    cond = p / pz
    pi = cond.sum(axis=1, keepdims=True)
    pj = cond.sum(axis=0, keepdims=True)
    return bool(np.max(np.abs(cond - pi * pj)) <= CI_PROB_TOL)


def exact_ci_mixed(td: TabularDistribution, dvar: int) -> bool:
    """Conditionals of the grid variable given dvar coincide across dvar's categories for every z."""
    c = td.c_axis
    if c is None:
        raise OracleError("no continuous axis")
    p = np.moveaxis(td.prob, (c, dvar), (0, 1))
    G, M = p.shape[0], p.shape[1]
    p = p.reshape(G, M, -1)
    w = td.weights[:, None, None]
    cond = p / np.sum(p * w, axis=0, keepdims=True)  # density of x_c given (dvar, z)
    ref = cond[:, :1, :]
    return bool(np.max(np.abs(cond - ref)) <= 1e-10 * np.max(np.abs(ref)))


def exact_dd_omega(td: TabularDistribution, i: int, j: int) -> float:
    if td.c_axis is not None:
        raise OracleError("exact_dd_omega needs an all-discrete table")
    model = TableModel(td)
    rows, mass = td.states()
    acc = 0.0
    for x, m in zip(rows, mass):
        acc += m * sum(
            _gpm.dd_stat(model, x, i, j, k, l) ** 2
            for k in range(1, td.schema.cardinality(i))
            for l in range(1, td.schema.cardinality(j))
        )
    return acc


def exact_md_omega(td: TabularDistribution, c: int, dvar: int) -> float:
    if td.c_axis != c:
        raise OracleError(f"variable {c} is not the grid axis")
    if len(td.nodes) < 9:
        raise OracleError("grid too coarse: need at least 9 nodes")
    model = TableModel(td)
    rows, mass = td.states()
    acc = 0.0
    for x, m in zip(rows, mass):
        acc += m * sum(_gpm.cd_stat(model, x, c, dvar, k) ** 2 for k in range(1, td.schema.cardinality(dvar)))
    return acc


# -- objective equivalences -----------------------------------------------------------


def exact_discrete_objective_constant(td: TabularDistribution, model) -> tuple[float, float, float]:
    """(ratio-distance form, half-convention data-free form, their difference eq12 - 2 * eq14).

    ``model`` needs ``substitute_discrete(x, i)`` and must share the table's schema.
    """
    if td.c_axis is not None:
        raise OracleError("needs an all-discrete table")
    rows, mass = td.states()
    data = TableModel(td)
    eq12 = eq14 = 0.0
    for x, m in zip(rows, mass):
        for i in range(td.schema.d):
            Lm = model.substitute_discrete(x, i)
            Ld = data.substitute_discrete(x, i)
            xi = int(x[i])
            r_model = np.sum(np.exp(Lm - Lm[xi]))
            r_data = np.sum(np.exp(Ld - Ld[xi]))
            eq12 += m * (r_model - r_data) ** 2
            eq14 += m * _sm.discrete_term(model, x, i)
    return eq12, eq14, eq12 - 2 * eq14


def gaussian_score_grid(nodes, mean: float = 0.0, sd: float = 1.0):
    x = np.asarray(nodes, float)
    dens = np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    return dens, -(x - mean) / sd**2


def lemma1_quadrature(model: EnergyModel, lo: float = -10.0, hi: float = 10.0, nodes: int = 2001,
                      mean: float = 0.0, sd: float = 1.0) -> tuple[float, float]:
    """(Fisher divergence to the data score, data-free score-matching objective) by trapezoid quadrature.

    ``model`` must have a single continuous variable; the data density is N(mean, sd^2).
    """
    if model.schema.d != 1 or model.schema.is_discrete(0):
        raise OracleError("needs a one-dimensional continuous model")
    x = np.linspace(lo, hi, nodes)
    w = trapezoid_weights(x)
    dens, data_score = gaussian_score_grid(x, mean, sd)
    eng = _sm.LossEngine(model.basis, model.schema, x[:, None])
    th = model.theta
    score = -2 * model.basis.alpha * x
    hess = np.full(nodes, -2 * model.basis.alpha)
    for Gt, Ht, Pt in zip(eng.G, eng.H, eng.P):
        score = score + (Gt @ (th[:, None] * Pt))[:, 0]
        hess = hess + (Ht @ (th[:, None] * Pt))[:, 0]
    eq8 = float(np.sum(w * dens * 0.5 * (score - data_score) ** 2))
    eq9 = float(np.sum(w * dens * (0.5 * score**2 + hess)))
    return eq8, eq9


# -- closed-form reference models ----------------------------------------------------------


class GaussianModel:
    """log p = -0.5 (x - mu)' Theta (x - mu) for a known precision matrix Theta."""

    def __init__(self, precision, mean=None):
        self.precision = np.asarray(precision, float)
        d = self.precision.shape[0]
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, float)
        self.schema = Schema.all_continuous(d)

    def log_density(self, x) -> float:
        y = np.asarray(x, float) - self.mean
        return float(-0.5 * y @ self.precision @ y)

    def score(self, x, i: int) -> float:
        return float(-(self.precision[i] @ (np.asarray(x, float) - self.mean)))

    def cross(self, x, i: int, j: int) -> float:
        return float(-self.precision[i, j])


class ConditionalGaussianModel:
    """X_d uniform on M categories, X_c | X_d = v ~ N(means[v], 1); variables ordered (X_c, X_d)."""

    def __init__(self, means):
        self.means = np.asarray(means, float)
        self.schema = Schema((VariableSpec.continuous("Xc"), VariableSpec.discrete("Xd", len(self.means))))

    def log_density(self, x) -> float:
        return float(-0.5 * (x[0] - self.means[int(x[1])]) ** 2)

    def score(self, x, i: int) -> float:
        if i != 0:
            raise OracleError("only the continuous coordinate has a score")
        return float(-(x[0] - self.means[int(x[1])]))

    def cross(self, x, i: int, j: int) -> float:
        raise OracleError("one continuous variable only")


class ButterflyModel:
    """Exact continuous butterfly density: pairs (P, Q) with Q | P ~ N(0, P^2)."""

    def __init__(self, r: int):
        self.r = r
        self.schema = Schema.all_continuous(2 * r)

    def log_density(self, x) -> float:
        x = np.asarray(x, float)
        p, q = x[0::2], x[1::2]
        return float(np.sum(-0.5 * p**2 - 0.5 * q**2 / p**2 - np.log(np.abs(p))))

    def score(self, x, i: int) -> float:
        p, q = x[2 * (i // 2)], x[2 * (i // 2) + 1]
        if i % 2 == 0:
            return float(-p + q**2 / p**3 - 1 / p)
        return float(-q / p**2)

    def cross(self, x, i: int, j: int) -> float:
        if i // 2 != j // 2:
            return 0.0
        p, q = x[2 * (i // 2)], x[2 * (i // 2) + 1]
        return float(2 * q / p**3)


# -- random constructions ---------------------------------------------------------------------


def random_ci_table(rng, cards) -> TabularDistribution:
    """m(x1 | x3) m(x2 | x3) m(x3): X1 independent of X2 given X3."""
    m1, m2, m3 = cards
    p3 = rng.dirichlet(np.ones(m3))
    p1 = rng.dirichlet(np.ones(m1), size=m3)  # (m3, m1)
    p2 = rng.dirichlet(np.ones(m2), size=m3)
    t = np.einsum("k,ki,kj->ijk", p3, p1, p2)
    return TabularDistribution.discrete(t)


def random_generic_table(rng, cards) -> TabularDistribution:
    return TabularDistribution.discrete(rng.dirichlet(np.ones(int(np.prod(cards)))).reshape(cards))


def _mixture_logpdf(x, w, mu, sd):
    comps = np.log(w) - 0.5 * ((x[..., None] - mu) / sd) ** 2 - np.log(sd)
    top = comps.max(axis=-1, keepdims=True)
    return (top + np.log(np.exp(comps - top).sum(axis=-1, keepdims=True)))[..., 0]


def _mixture_dlog(x, w, mu, sd):
    comps = np.log(w) - 0.5 * ((x - mu) / sd) ** 2 - np.log(sd)
    r = np.exp(comps - comps.max())
    r /= r.sum()
    return float(np.sum(r * (-(x - mu) / sd**2)))


def random_mixed_construction(rng, ci: bool, nodes=None, components: int = 2):
    """X_c on a grid (axis 0), X_d (axis 1), z (axis 2); X_c | (X_d, z) is a Gaussian mixture.

    With ``ci`` the mixture depends on z only, so X_c is independent of X_d given z.
    """
    if nodes is None:
        nodes = np.linspace(-10, 10, 121)
    md, mz = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    pdz = rng.dirichlet(np.ones(md * mz)).reshape(md, mz)
    params = {}
    for z in range(mz):
        base = (rng.dirichlet(np.ones(components)), rng.uniform(-2, 2, components), rng.uniform(0.7, 1.5, components))
        for dv in range(md):
            if ci or dv == 0:
                params[dv, z] = base
            else:
                params[dv, z] = (rng.dirichlet(np.ones(components)), rng.uniform(-2, 2, components),
                                 rng.uniform(0.7, 1.5, components))
    dens = np.empty((len(nodes), md, mz))
    for (dv, z), (w, mu, sd) in params.items():
        dens[:, dv, z] = pdz[dv, z] * np.exp(_mixture_logpdf(nodes, w, mu, sd)) / np.sqrt(2 * np.pi)

    def dlog(xc, disc):
        w, mu, sd = params[disc[0], disc[1]]
        return _mixture_dlog(xc, w, mu, sd)

    return TabularDistribution.mixed(dens, 0, nodes, dlog=dlog)


# -- battery -----------------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "seconds": round(self.seconds, 3)}


def check_thm1(trials: int = 200, seed=0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    agree = 0
    for t in range(trials):
        cards = tuple(int(c) for c in rng.integers(2, 4, size=3))
        td = random_ci_table(rng, cards) if t % 2 == 0 else random_generic_table(rng, cards)
        ok = all(
            (exact_dd_omega(td, i, j) <= CI_OMEGA_TOL) == exact_ci(td, i, j)
            for i, j in ((0, 1), (0, 2), (1, 2))
        )
        agree += ok
    return CheckResult("thm1-iff", agree == trials, f"{agree}/{trials} tables agree", time.perf_counter() - t0)


def check_thm2(trials: int = 100, seed=0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    agree = 0
    for t in range(trials):
        td = random_mixed_construction(rng, ci=(t % 2 == 0))
        agree += (exact_md_omega(td, 0, 1) <= MD_OMEGA_TOL) == exact_ci_mixed(td, 1)
    return CheckResult("thm2-iff", bool(agree == trials), f"{agree}/{trials} constructions agree", time.perf_counter() - t0)


def lemma2_spaces():
    return [(2, 2), (3, 2), (2, 3, 2)]


def check_lemma2(draws: int = 10, seed=0, tol: float = 1e-10) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    spreads = []
    for cards in lemma2_spaces():
        td = random_generic_table(rng, cards)
        rows, _ = td.states()
        ds = Dataset(td.schema, rows)
        basis = build_basis(ds, K=len(rows), seed=0, scope_size=None)
        consts = []
        for _ in range(draws):
            model = EnergyModel(td.schema, basis, rng.normal(size=basis.K))
            consts.append(exact_discrete_objective_constant(td, model)[2])
        spreads.append(max(consts) - min(consts))
    worst = max(spreads)
    return CheckResult("lemma2", bool(worst <= tol), f"max constant spread {worst:.3e}", time.perf_counter() - t0)


def check_lemma1(draws: int = 10, seed=0, rtol: float = 1e-4) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(200)
    ds = Dataset(Schema.all_continuous(1), x[:, None])
    basis = build_basis(ds, K=20, seed=0)
    diffs = []
    for _ in range(draws):
        model = EnergyModel(ds.schema, basis, rng.normal(size=basis.K))
        eq8, eq9 = lemma1_quadrature(model)
        diffs.append(eq8 - eq9)
    diffs = np.array(diffs)
    spread = float((diffs.max() - diffs.min()) / abs(diffs.mean()))
    return CheckResult("lemma1", bool(spread <= rtol), f"relative spread {spread:.3e}", time.perf_counter() - t0)


def check_gaussian(seed=0) -> CheckResult:
    """Closed-form d=3 Gaussian with a structural zero at (0, 2)."""
    t0 = time.perf_counter()
    theta = np.array([[2.0, -0.8, 0.0], [-0.8, 2.0, 0.6], [0.0, 0.6, 1.5]])
    model = GaussianModel(theta)
    rows = np.random.default_rng(seed).normal(size=(50, 3))
    f02 = max(abs(_gpm.cc_stat(model, x, 0, 2)) for x in rows)
    f01 = max(abs(_gpm.cc_stat(model, x, 0, 1) + theta[0, 1]) for x in rows)
    ok = f02 == 0.0 and f01 <= 1e-12
    return CheckResult("gaussian-crosscheck", bool(ok), f"|f02| max {f02:.1e}, f01 error {f01:.1e}", time.perf_counter() - t0)


def run_battery(trials: int = 200, seed=0) -> list[CheckResult]:
    return [
        check_thm1(trials, seed),
        check_thm2(max(2, trials // 2), seed),
        check_lemma1(seed=seed),
        check_lemma2(seed=seed),
        check_gaussian(seed),
    ]
