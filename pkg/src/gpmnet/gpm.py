"""Generalized precision matrix and graph extraction.

Pair statistics at a row x (reference category 0):

    cc:  d^2 log pi / dx_i dx_j
    dd:  (L(0,0) - L(k,0)) - (L(0,l) - L(k,l)),  L(a, b) = log pi(x[i -> a, j -> b])
    cd:  d_c log pi(x[dvar -> 0]) - d_c log pi(x[dvar -> k])

Omega is the row mean of the squared statistic, summed over category
indices.  Any object with ``schema``, ``log_density(x)``, ``score(x, i)`` and
``cross(x, i, j)`` can be analysed through the generic path; energy models
use a vectorized engine that also yields exact theta vector-Jacobian
products for the penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import gpm as _self
from .energy import EnergyModel, FeatureBasis, FeatureBlock, ModelError
from .graphs import UndirectedGraph
from .types import Dataset, Schema

CONVENTIONS = ("squared", "rooted")


class GpmError(ValueError):
    pass


def _row(x) -> np.ndarray:
    return np.asarray(x, float).reshape(-1).copy()


def cc_stat(model, x, i: int, j: int) -> float:
    sch = model.schema
    if i == j or sch.is_discrete(i) or sch.is_discrete(j):
        raise GpmError(f"cc statistic needs two distinct continuous variables, got ({i}, {j})")
    return float(model.cross(_row(x), i, j))


def dd_stat(model, x, i: int, j: int, k: int, l: int) -> float:
    sch = model.schema
    if i == j or not (sch.is_discrete(i) and sch.is_discrete(j)):
        raise GpmError(f"dd statistic needs two distinct discrete variables, got ({i}, {j})")
    if not (1 <= k < sch.cardinality(i) and 1 <= l < sch.cardinality(j)):
        raise GpmError(f"category pair ({k}, {l}) out of range; 0 is the reference")
    y = _row(x)

    def L(a, b):
        y[i], y[j] = a, b
        return model.log_density(y)

    return (L(0, 0) - L(k, 0)) - (L(0, l) - L(k, l))


def cd_stat(model, x, c: int, dvar: int, k: int) -> float:
    sch = model.schema
    if sch.is_discrete(c) or not sch.is_discrete(dvar):
        raise GpmError(f"cd statistic needs (continuous, discrete), got ({c}, {dvar})")
    if not 1 <= k < sch.cardinality(dvar):
        raise GpmError(f"category {k} out of range; 0 is the reference")
    y = _row(x)
    y[dvar] = 0
    s0 = model.score(y, c)
    y[dvar] = k
    return float(s0 - model.score(y, c))


def pair_kind(schema: Schema, i: int, j: int) -> str:
    di, dj = schema.is_discrete(i), schema.is_discrete(j)
    if di and dj:
        return "dd"
    if di or dj:
        return "cd"
    return "cc"


def kind_matrix(schema: Schema) -> np.ndarray:
    d = schema.d
    out = np.full((d, d), "", dtype=object)
    for i in range(d):
        for j in range(d):
            if i != j:
                out[i, j] = pair_kind(schema, i, j)
    return out


@dataclass(frozen=True)
class GpmMatrix:
    omega: np.ndarray = field(repr=False)
    kinds: np.ndarray = field(repr=False)
    convention: str = "squared"
    tape: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        om = np.array(self.omega, float, copy=True)
        if om.ndim != 2 or om.shape[0] != om.shape[1]:
            raise GpmError("omega must be square")
        if self.convention not in CONVENTIONS:
            raise GpmError(f"unknown convention {self.convention!r}")
        if not np.array_equal(om, om.T):
            raise GpmError("omega must be symmetric")
        if np.any(np.diag(om) != 0):
            raise GpmError("omega diagonal must be zero")
        if np.any(om < 0):
            raise GpmError("omega entries must be nonnegative")
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)

    @property
    def d(self) -> int:
        return self.omega.shape[0]

    def rooted(self) -> GpmMatrix:
        if self.convention == "rooted":
            return self
        om = self.omega.copy()
        cc = self.kinds == "cc"
        om[cc] = np.sqrt(om[cc])
        return GpmMatrix(om, self.kinds, "rooted")

    def to_csv(self) -> str:
        return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in self.omega)


def omega_from_csv(text: str) -> np.ndarray:
    return np.array([[float(c) for c in line.split(",")] for line in text.strip().splitlines()])


def _finish(omega: np.ndarray, schema: Schema, convention: str, tape=None) -> GpmMatrix:
    omega = np.triu(omega, 1)
    omega = omega + omega.T
    g = GpmMatrix(omega, kind_matrix(schema), "squared", tape)
    if convention == "rooted":
        return g.rooted()
    if convention != "squared":
        raise GpmError(f"unknown convention {convention!r}")
    return g


def compute_gpm_generic(model, rows: np.ndarray, weights=None, convention: str = "squared") -> GpmMatrix:
    """Row-by-row evaluation through the module-level pair statistics."""
    sch = model.schema
    rows = np.atleast_2d(np.asarray(rows, float))
    n, d = rows.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
    om = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            kind = pair_kind(sch, i, j)
            acc = 0.0
            for x, wx in zip(rows, w):
                if wx == 0:
                    continue
                if kind == "cc":
                    q = _self.cc_stat(model, x, i, j) ** 2
                elif kind == "dd":
                    q = sum(
                        _self.dd_stat(model, x, i, j, k, l) ** 2
                        for k in range(1, sch.cardinality(i))
                        for l in range(1, sch.cardinality(j))
                    )
                else:
                    c, dv = (i, j) if sch.is_discrete(j) else (j, i)
                    q = sum(_self.cd_stat(model, x, c, dv, k) ** 2 for k in range(1, sch.cardinality(dv)))
                acc += wx * q
            om[i, j] = acc
    return _finish(om, sch, convention)


class PairStatistics:
    """Vectorized pair statistics of an energy model on a fixed dataset.

    Every statistic is linear in theta, f[n, col] = sum_c coef[n, c] theta[feat[c]],
    so the theta-independent coefficients are built once.  A column is one
    (pair, category-index) combination; only pairs covered by some feature
    scope get columns, all others have omega exactly zero.
    """

    def __init__(self, basis: FeatureBasis, schema: Schema, values: np.ndarray, weights=None):
        self.basis = basis
        self.schema = schema
        blk = FeatureBlock(basis, schema, values)
        n = blk.n
        self.weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
        d = schema.d
        S = basis.scopes
        act = basis.active
        s = S.shape[1]
        card = np.array([schema.cardinality(j) or 1 for j in range(d)])
        disc = schema.discrete_mask
        codes = basis.codebooks
        centers, bw = basis.centers, basis.bandwidth

        coefs, feats, keys = [], [], []
        pair_base = np.zeros((d, d), dtype=np.int64)  # global key offset of each pair
        off = 0
        for i in range(d):
            for j in range(i + 1, d):
                pair_base[i, j] = off
                off += (card[i] - 1 if disc[i] else 1) * (card[j] - 1 if disc[j] else 1)

        def gdiff(fs, coords):
            # g(0) - g(k) for k >= 1 with g(v) = exp(-0.5 ((code_v - c) / w)^2): (F, M - 1)
            cb = np.stack([codes[c] for c in coords])
            g = np.exp(-0.5 * ((cb - centers[fs, coords][:, None]) / bw[coords][:, None]) ** 2)
            return g[:, :1] - g[:, 1:]

        for p in range(s):
            for q in range(p + 1, s):
                ci, cj = S[:, p], S[:, q]
                lo = np.minimum(ci, cj)
                # canonical orientation: slot a holds the lower coordinate
                swap = ci > cj
                sa = np.where(swap, q, p)
                sb = np.where(swap, p, q)
                hi = np.maximum(ci, cj)
                sig = np.stack([lo, hi], axis=1)
                groups = {}
                for k in np.nonzero(act[:, p] & act[:, q])[0]:
                    ti, tj = sig[k]
                    groups.setdefault((bool(disc[ti]), int(card[ti]), bool(disc[tj]), int(card[tj])), []).append(k)
                for (da, ma, db, mb), fl in groups.items():
                    fs = np.array(fl)
                    A, B = lo[fs], hi[fs]
                    pa, pb = sa[fs], sb[fs]
                    base = pair_base[A, B]
                    sq_a = blk.sq[:, fs, pa]
                    sq_b = blk.sq[:, fs, pb]
                    if not da and not db:
                        c = blk.phi[:, fs] * blk.a[:, fs, pa] * blk.a[:, fs, pb]
                        coefs.append(c)
                        feats.append(fs)
                        keys.append(base)
                    elif da and db:
                        rest = np.exp(-0.5 * (blk.tot[:, fs] - sq_a - sq_b))
                        ga, gb = gdiff(fs, A), gdiff(fs, B)
                        for kk in range(ma - 1):
                            for ll in range(mb - 1):
                                coefs.append(rest * (ga[:, kk] * gb[:, ll])[None, :])
                                feats.append(fs)
                                keys.append(base + kk * (mb - 1) + ll)
                    else:
                        # one continuous slot (c) and one discrete slot (dv)
                        if da:
                            pc, pd, dcoord, m = pb, pa, A, ma
                        else:
                            pc, pd, dcoord, m = pa, pb, B, mb
                        rest = np.exp(-0.5 * (blk.tot[:, fs] - blk.sq[:, fs, pd]))
                        ac = blk.a[:, fs, pc]
                        gd = gdiff(fs, dcoord)
                        for kk in range(m - 1):
                            coefs.append(rest * ac * gd[None, :, kk])
                            feats.append(fs)
                            keys.append(base + kk)
        if coefs:
            self.coef = np.concatenate(coefs, axis=1)
            self.feat = np.concatenate(feats)
            key = np.concatenate(keys)
        else:
            self.coef = np.zeros((n, 0))
            self.feat = np.zeros(0, dtype=np.intp)
            key = np.zeros(0, dtype=np.int64)
        ukeys, self.col = np.unique(key, return_inverse=True)
        self.col = self.col.reshape(-1)
        n_contrib, n_cols = len(key), len(ukeys)
        self.agg = sparse.csr_matrix((np.ones(n_contrib), (np.arange(n_contrib), self.col)), shape=(n_contrib, n_cols))
        # column -> pair
        iu, ju = np.triu_indices(d, 1)
        bases = pair_base[iu, ju]
        pidx = np.searchsorted(bases, ukeys, side="right") - 1
        self.col_i = iu[pidx]
        self.col_j = ju[pidx]

    def _rows(self, rows):
        if rows is None:
            return self.coef, self.weights
        rows = np.asarray(rows, dtype=np.intp)
        w = self.weights[rows]
        return self.coef[rows], w / w.sum()

    @staticmethod
    def _columns(coef, feat, agg, theta) -> np.ndarray:
        if coef.shape[1] == 0:
            return np.zeros((coef.shape[0], 0))
        return np.asarray((coef * np.asarray(theta, float)[feat]) @ agg)

    def omega(self, theta, rows=None) -> np.ndarray:
        coef, w = self._rows(rows)
        d = self.schema.d
        om = np.zeros((d, d))
        F = self._columns(coef, self.feat, self.agg, theta)
        np.add.at(om, (self.col_i, self.col_j), w @ F**2)
        return om + om.T

    def vjp(self, theta, G: np.ndarray, rows=None) -> np.ndarray:
        """sum_{i<j} G[i, j] * d omega[i, j] / d theta."""
        coef, w = self._rows(rows)
        F = self._columns(coef, self.feat, self.agg, theta)
        gcol = np.asarray(G, float)[self.col_i, self.col_j]
        per_contrib = 2.0 * (w @ (F[:, self.col] * coef)) * gcol[self.col]
        return np.bincount(self.feat, weights=per_contrib, minlength=self.basis.K)


@dataclass(frozen=True)
class GpmTape:
    model: EnergyModel
    engine: PairStatistics

    def vjp(self, G: np.ndarray) -> np.ndarray:
        return self.engine.vjp(self.model.theta, G)


def compute_gpm(model, ds, convention: str = "squared", weights=None, engine: PairStatistics | None = None) -> GpmMatrix:
    """Omega of ``model`` with the expectation taken over the rows of ``ds``.

    ``ds`` may be a Dataset or a raw row array.
    """
    if convention not in CONVENTIONS:
        raise GpmError(f"unknown convention {convention!r}")
    rows = ds.values if isinstance(ds, Dataset) else np.atleast_2d(np.asarray(ds, float))
    if isinstance(ds, Dataset) and ds.schema != model.schema:
        raise ModelError("dataset schema does not match the model schema")
    if isinstance(model, EnergyModel):
        if engine is None:
            engine = PairStatistics(model.basis, model.schema, rows, weights)
        om = engine.omega(model.theta)
        return _finish(om, model.schema, convention, GpmTape(model, engine) if convention == "squared" else None)
    return compute_gpm_generic(model, rows, weights, convention)


def gap_threshold(omega: np.ndarray, ratio: float = 10.0, floor: float = 1e-3) -> float:
    """Threshold at the largest gap of the sorted positive log-entries.

    Entries below ``floor * max`` count as numerical zeros and take no part
    in the gap search, so one near-zero outlier cannot claim the widest gap.
    Returns 0 when the positive entries span less than a factor ``ratio``
    (every positive entry is then an edge) and +inf when there are none.
    """
    om = np.asarray(omega, float)
    vals = om[np.triu_indices(om.shape[0], 1)]
    vals = np.sort(vals[vals > 0])
    if len(vals) == 0:
        return float("inf")
    if vals[-1] / vals[0] < ratio:
        return 0.0
    small, vals = vals[vals < vals[-1] * floor], vals[vals >= vals[-1] * floor]
    if vals[-1] / vals[0] < ratio:
        return float(np.sqrt(small[-1] * vals[0])) if len(small) else 0.0
    logs = np.log(vals)
    k = int(np.argmax(np.diff(logs)))
    return float(np.exp(0.5 * (logs[k] + logs[k + 1])))


def extract_graph(gpm: GpmMatrix, policy: str = "gap", tau: float | None = None) -> UndirectedGraph:
    if policy == "gap":
        t = gap_threshold(gpm.omega)
    elif policy == "absolute":
        if tau is None:
            raise GpmError("absolute policy needs tau")
        t = float(tau)
    else:
        raise GpmError(f"unknown threshold policy {policy!r}")
    adj = gpm.omega > t
    np.fill_diagonal(adj, False)
    return UndirectedGraph(gpm.d, adj)
