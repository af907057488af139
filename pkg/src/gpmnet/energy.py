"""Feature-linear unnormalized energy model.

The log-density is

    log pi(x; theta) = sum_k theta_k * phi_k(emb(x)) - alpha * ||x_c||^2

with Gaussian radial-basis features

    phi_k(u) = exp(-0.5 * sum_{m in S_k} ((u_m - c_km) / w_m)^2)

centred on training rows.  ``S_k`` is the coordinate scope of feature k:
either every coordinate, or a small subset (pairs by default).  Discrete
variables are embedded through a fixed real codebook so that the same
features serve every data type; discrete coordinates are only ever
substituted, never differentiated.

Everything the objectives and the GPM need is linear in theta apart from
the fixed anchor term, so all derivatives and theta-gradients are closed
form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .types import DataError, Dataset, Schema


class ModelError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    """A recorded functional was evaluated against a different model."""


@dataclass(frozen=True)
class FeatureBasis:
    centers: np.ndarray = field(repr=False)  # (K, d) embedded rows
    bandwidth: np.ndarray = field(repr=False)  # (d,)
    codebooks: tuple = field(repr=False)  # per variable: code array or None
    alpha: float = 0.05
    scopes: np.ndarray = field(default=None, repr=False)  # (K, s) coordinate indices

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, float))
        bw = np.asarray(self.bandwidth, float)
        K, d = centers.shape
        if K < 1:
            raise ModelError("basis needs K >= 1 centers")
        if bw.shape != (d,) or not np.all(bw > 0):
            raise ModelError("bandwidths must be positive, one per coordinate")
        if self.alpha < 0:
            raise ModelError("alpha must be nonnegative")
        books = []
        for j, cb in enumerate(self.codebooks):
            if cb is None:
                books.append(None)
                continue
            cb = np.asarray(cb, float)
            if len(np.unique(cb)) != len(cb):
                raise ModelError(f"codebook of variable {j} has repeated codes")
            cb.setflags(write=False)
            books.append(cb)
        if len(books) != d:
            raise ModelError("need one codebook entry per coordinate")
        scopes = self.scopes
        if scopes is None:
            scopes = np.tile(np.arange(d), (K, 1))
        scopes = np.atleast_2d(np.asarray(scopes, dtype=np.intp))
        if scopes.shape[0] != K or scopes.min() < -1 or scopes.max() >= d:
            raise ModelError("scopes must list valid coordinates (or -1 padding) for every center")
        for row in scopes:
            used = row[row >= 0]
            if len(used) == 0 or len(set(used.tolist())) != len(used):
                raise ModelError("every scope needs at least one coordinate and no repeats")
        for arr in (centers, bw, scopes):
            arr.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", bw)
        object.__setattr__(self, "codebooks", tuple(books))
        object.__setattr__(self, "scopes", scopes)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def active(self) -> np.ndarray:
        """(K, s) mask of scope slots in use; unused slots hold -1."""
        return self.scopes >= 0

    @property
    def safe_scopes(self) -> np.ndarray:
        """Scopes with padding replaced by coordinate 0, for gathers masked by ``active``."""
        return np.where(self.scopes >= 0, self.scopes, 0)

    def features_with(self, *coords: int) -> tuple[np.ndarray, list[np.ndarray]]:
        """Features whose scope holds every coordinate in ``coords``, and the slot of each."""
        hit = np.ones(self.K, bool)
        for c in coords:
            hit &= (self.scopes == c).any(axis=1)
        feats = np.nonzero(hit)[0]
        slots = [np.argmax(self.scopes[feats] == c, axis=1) for c in coords]
        return feats, slots

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "bandwidth": self.bandwidth.tolist(),
            "codebooks": [None if cb is None else cb.tolist() for cb in self.codebooks],
            "alpha": self.alpha,
            "scopes": self.scopes.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> FeatureBasis:
        return cls(
            np.asarray(obj["centers"], float),
            np.asarray(obj["bandwidth"], float),
            tuple(None if cb is None else np.asarray(cb, float) for cb in obj["codebooks"]),
            obj["alpha"],
            np.asarray(obj["scopes"], dtype=np.intp),
        )


def default_codebook(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


def scope_list(d: int, scope_size: int | None = 2, unary: bool = True) -> list[tuple[int, ...]]:
    """Coordinate subsets that features may read: optional singletons, then all subsets of the given size."""
    if scope_size is None or scope_size >= d:
        return [tuple(range(d))]
    if scope_size < 1:
        raise ModelError("scope_size must be >= 1")
    out = [(i,) for i in range(d)] if unary and scope_size > 1 else []
    return out + list(combinations(range(d), scope_size))


def default_num_centers(n: int, d: int, scope_size: int | None = 2, unary: bool = True) -> int:
    """Ten centers per coordinate scope, at least 100, never more than n."""
    return min(n, max(100, 10 * len(scope_list(d, scope_size, unary))))


def embed_values(schema: Schema, codebooks, values: np.ndarray) -> np.ndarray:
    """Map rows of raw values (discrete cells as indices) into the embedding space."""
    X = np.atleast_2d(np.asarray(values, float))
    E = X.copy()
    for j in schema.discrete_indices:
        E[:, j] = codebooks[j][X[:, j].astype(int)]
    return E


def _median_abs_diff(col: np.ndarray) -> float:
    iu = np.triu_indices(len(col), 1)
    if len(iu[0]) == 0:
        return 0.0
    return float(np.median(np.abs(col[:, None] - col[None, :])[iu]))


def build_basis(
    ds: Dataset,
    K: int | None = None,
    seed=0,
    *,
    alpha: float = 0.05,
    scope_size: int | None = 2,
    unary: bool = True,
    bandwidth_scale: float = 1.0,
    bandwidth_floor: float = 1e-3,
    max_subsample: int = 500,
) -> FeatureBasis:
    """Pick K distinct training rows as centers and set median-heuristic bandwidths.

    ``scope_size=None`` gives every feature the full coordinate set.  With a
    finite scope size, features read single coordinates (if ``unary``) or
    coordinate subsets of that size; subsets are dealt round-robin when K
    covers them all, else K distinct subsets are sampled.
    """
    n, d = ds.n, ds.d
    if K is None:
        K = default_num_centers(n, d, scope_size, unary)
    if K < 1:
        raise ModelError("K must be >= 1")
    if K > n:
        raise ModelError(f"K={K} exceeds the number of rows n={n}")
    rng = np.random.default_rng(seed)
    codebooks = tuple(
        default_codebook(ds.schema.cardinality(j)) if ds.schema.is_discrete(j) else None
        for j in range(d)
    )
    E = embed_values(ds.schema, codebooks, ds.values)
    rows = np.sort(rng.choice(n, size=K, replace=False))
    centers = E[rows]
    sub = rng.choice(n, size=min(n, max_subsample), replace=False)
    bw = np.array([_median_abs_diff(E[sub, m]) for m in range(d)]) * bandwidth_scale
    bw = np.maximum(bw, bandwidth_floor)

    subsets = scope_list(d, scope_size, unary)
    if K < len(subsets):
        subsets = [subsets[k] for k in np.sort(rng.choice(len(subsets), size=K, replace=False))]
    width = max(len(t) for t in subsets)
    scopes = np.full((K, width), -1, dtype=np.intp)
    for k in range(K):
        t = subsets[k % len(subsets)]
        scopes[k, : len(t)] = t
    return FeatureBasis(centers, bw, codebooks, alpha, scopes)


# -- cached per-row feature quantities ----------------------------------------


class FeatureBlock:
    """theta-independent feature quantities for a fixed block of rows.

    Attributes (n rows, K features, s scope slots):
      E     (n, d)     embedded rows
      delta (n, K, s)  standardized offsets (u - c) / w on each scope slot
      sq    (n, K, s)  delta ** 2
      phi   (n, K)     feature values
      a     (n, K, s)  d log(phi) / d u on each slot
    """

    def __init__(self, basis: FeatureBasis, schema: Schema, values: np.ndarray):
        self.basis = basis
        self.schema = schema
        self.values = np.atleast_2d(np.asarray(values, float))
        S = basis.safe_scopes
        act = basis.active
        self.E = embed_values(schema, basis.codebooks, self.values)
        self.w = np.where(act, basis.bandwidth[S], 1.0)  # (K, s)
        cs = np.take_along_axis(basis.centers, S, axis=1)
        self.delta = np.where(act, (self.E[:, S] - cs) / self.w, 0.0)
        self.sq = self.delta**2
        self.tot = self.sq.sum(axis=-1)
        self.phi = np.exp(-0.5 * self.tot)
        self.a = -self.delta / self.w

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def rest(self, exclude_slots: list[np.ndarray], feats: np.ndarray) -> np.ndarray:
        """Feature values over ``feats`` with the given slots' factors removed."""
        t = self.tot[:, feats].copy()
        for sl in exclude_slots:
            t -= self.sq[:, feats, sl]
        return np.exp(-0.5 * t)

    def slot_factor(self, feats: np.ndarray, slot: np.ndarray, coord: int) -> np.ndarray:
        """exp(-0.5 ((code_v - c) / w)^2) for every category v of a discrete coordinate: (F, M)."""
        codes = self.basis.codebooks[coord]
        c = self.basis.centers[feats, coord]
        w = self.basis.bandwidth[coord]
        return np.exp(-0.5 * ((codes[None, :] - c[:, None]) / w) ** 2)


# -- the model ------------------------------------------------------------------


@dataclass(frozen=True)
class DerivBundle:
    index: tuple[int, ...]  # schema indices of the continuous coordinates reported
    value: float
    grad: np.ndarray | None = None  # (c,)
    hess_diag: np.ndarray | None = None  # (c,)
    cross: np.ndarray | None = None  # (c, c) full continuous Hessian
    value_theta: np.ndarray | None = None  # (K,)
    grad_theta: np.ndarray | None = None  # (c, K)
    hess_diag_theta: np.ndarray | None = None  # (c, K)
    cross_theta: np.ndarray | None = None  # (c, c, K)

    def pos(self, i: int) -> int:
        return self.index.index(i)


DERIV_FLAGS = frozenset({"value", "grad", "hess_diag", "cross", "theta"})


@dataclass(frozen=True)
class EnergyModel:
    schema: Schema
    basis: FeatureBasis
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        th = np.array(self.theta, dtype=float, copy=True).reshape(-1)
        if th.shape != (self.basis.K,):
            raise ModelError(f"theta must have length K={self.basis.K}")
        if self.schema.d != self.basis.d:
            raise ModelError("schema and basis disagree on the number of variables")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def zero(cls, schema: Schema, basis: FeatureBasis) -> EnergyModel:
        return cls(schema, basis, np.zeros(basis.K))

    def with_theta(self, theta) -> EnergyModel:
        return EnergyModel(self.schema, self.basis, theta)

    @property
    def K(self) -> int:
        return self.basis.K

    # row helpers
    def _check_row(self, x) -> np.ndarray:
        x = np.asarray(x, float).reshape(-1)
        if x.shape != (self.schema.d,):
            raise ModelError(f"row must have {self.schema.d} entries")
        if not np.all(np.isfinite(x)):
            raise ModelError("row contains non-finite values")
        for j in self.schema.discrete_indices:
            v = x[j]
            if v != int(v) or not 0 <= v < self.schema.cardinality(j):
                raise ModelError(f"category index {v} invalid for variable {j}")
        return x

    def block(self, rows) -> FeatureBlock:
        return FeatureBlock(self.basis, self.schema, rows)

    def anchor(self, x: np.ndarray) -> float:
        c = self.schema.continuous_indices
        return -self.basis.alpha * float(np.sum(x[c] ** 2))

    def features(self, x) -> np.ndarray:
        """phi(emb(x)), the theta-gradient of log_density."""
        return self.block(self._check_row(x)[None, :]).phi[0]

    def log_density(self, x) -> float:
        x = self._check_row(x)
        return float(self.features(x) @ self.theta) + self.anchor(x)

    def _slot_dense(self, blk: FeatureBlock, arr: np.ndarray) -> np.ndarray:
        """Scatter a (K, s) slot array into a (K, d) coordinate array."""
        out = np.zeros((self.K, self.schema.d))
        np.add.at(out, (np.arange(self.K)[:, None], self.basis.safe_scopes), np.where(self.basis.active, arr, 0.0))
        return out

    def _cont_check(self, indices) -> list[int]:
        if indices is None:
            return self.schema.continuous_indices
        idx = [int(i) for i in indices]
        for i in idx:
            if self.schema.is_discrete(i):
                raise ModelError(f"derivative requested w.r.t. discrete coordinate {i}")
        return idx

    def derivatives(self, x, want=("value", "grad", "hess_diag", "cross"), indices=None) -> DerivBundle:
        want = set(want)
        unknown = want - DERIV_FLAGS
        if unknown:
            raise ModelError(f"unknown derivative flags {sorted(unknown)}")
        x = self._check_row(x)
        idx = self._cont_check(indices)
        blk = self.block(x[None, :])
        phi = blk.phi[0]
        A = self._slot_dense(blk, blk.a[0])[:, idx]  # (K, c)
        inv_w2 = self._slot_dense(blk, 1.0 / blk.w**2)[:, idx]  # 1/w^2 where in scope
        alpha = self.basis.alpha
        th = self.theta
        out: dict = {"index": tuple(idx), "value": float(phi @ th) + self.anchor(x)}
        if "theta" in want:
            out["value_theta"] = phi.copy()
        if "grad" in want:
            g_th = (phi[:, None] * A).T  # (c, K)
            out["grad"] = g_th @ th - 2 * alpha * x[idx]
            if "theta" in want:
                out["grad_theta"] = g_th
        if "hess_diag" in want or "cross" in want:
            h_th = (phi[:, None] * (A**2 - inv_w2)).T  # (c, K)
            hd = h_th @ th - 2 * alpha
            if "hess_diag" in want:
                out["hess_diag"] = hd
                if "theta" in want:
                    out["hess_diag_theta"] = h_th
            if "cross" in want:
                c_th = np.einsum("k,ki,kj->ijk", phi, A, A)
                ii = np.arange(len(idx))
                c_th[ii, ii, :] = h_th
                cross = c_th @ th
                cross = np.triu(cross) + np.triu(cross, 1).T  # exact symmetry
                cross[ii, ii] = hd
                out["cross"] = cross
                if "theta" in want:
                    out["cross_theta"] = c_th
        return DerivBundle(**out)

    # scalar conveniences used by the pair statistics
    def score(self, x, i: int) -> float:
        return float(self.derivatives(x, ("grad",), [i]).grad[0])

    def cross(self, x, i: int, j: int) -> float:
        b = self.derivatives(x, ("cross",), [i, j])
        return float(b.cross[0, 1])

    def substitute_discrete(self, x, i: int) -> np.ndarray:
        x = self._check_row(x)
        if not self.schema.is_discrete(i):
            raise ModelError(f"variable {i} is not discrete")
        out = np.empty(self.schema.cardinality(i))
        for v in range(len(out)):
            y = x.copy()
            y[i] = v
            out[v] = self.log_density(y)
        return out

    def substitute_features(self, x, i: int) -> np.ndarray:
        """(M_i, K) feature vectors at x with coordinate i set to each category."""
        x = self._check_row(x)
        m = self.schema.cardinality(i)
        rows = np.repeat(x[None, :], m, axis=0)
        rows[:, i] = np.arange(m)
        return self.block(rows).phi

    # serialization
    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_list(),
            "basis": self.basis.to_dict(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> EnergyModel:
        return cls(Schema.from_list(obj["schema"]), FeatureBasis.from_dict(obj["basis"]), np.asarray(obj["theta"], float))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def log_density(model: EnergyModel, x) -> float:
    return model.log_density(x)


def derivatives(model: EnergyModel, x, want=("value", "grad", "hess_diag", "cross"), indices=None) -> DerivBundle:
    return model.derivatives(x, want, indices)


def substitute_discrete(model: EnergyModel, x, i: int) -> np.ndarray:
    return model.substitute_discrete(x, i)


def save_model(model: EnergyModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.dumps())


def load_model(path) -> EnergyModel:
    with open(path, encoding="utf-8") as fh:
        try:
            return EnergyModel.from_dict(json.load(fh))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed model checkpoint: {exc}") from None


# -- forward-mode theta tape ----------------------------------------------------


class Dual:
    """A scalar together with its exact gradient with respect to theta."""

    __slots__ = ("value", "grad", "tape")

    def __init__(self, value: float, grad: np.ndarray, tape: Tape):
        self.value = float(value)
        self.grad = grad
        self.tape = tape

    def _lift(self, other) -> Dual:
        if isinstance(other, Dual):
            if other.tape is not self.tape:
                raise StaleTapeError("cannot combine values recorded on different tapes")
            return other
        return Dual(float(other), np.zeros_like(self.grad), self.tape)

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.value + o.value, self.grad + o.grad, self.tape)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.value - o.value, self.grad - o.grad, self.tape)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.grad, self.tape)

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(self.value * o.value, self.grad * o.value + o.grad * self.value, self.tape)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return Dual(self.value / o.value, (self.grad * o.value - o.grad * self.value) / o.value**2, self.tape)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p: float):
        return Dual(self.value**p, p * self.value ** (p - 1) * self.grad, self.tape)

    def exp(self) -> Dual:
        e = math.exp(self.value)
        return Dual(e, e * self.grad, self.tape)

    def log(self) -> Dual:
        return Dual(math.log(self.value), self.grad / self.value, self.tape)

    def __repr__(self):
        return f"Dual({self.value!r})"


class Tape:
    """Records primitive evaluations of one model so their theta-gradients compose."""

    def __init__(self, model: EnergyModel):
        self.model = model

    def constant(self, value: float) -> Dual:
        return Dual(value, np.zeros(self.model.K), self)

    def log_density(self, x) -> Dual:
        b = self.model.derivatives(x, ("value", "theta"), indices=[])
        return Dual(b.value, b.value_theta, self)

    def score(self, x, i: int) -> Dual:
        b = self.model.derivatives(x, ("grad", "theta"), [i])
        return Dual(b.grad[0], b.grad_theta[0], self)

    def hess_diag(self, x, i: int) -> Dual:
        b = self.model.derivatives(x, ("hess_diag", "theta"), [i])
        return Dual(b.hess_diag[0], b.hess_diag_theta[0], self)

    def cross(self, x, i: int, j: int) -> Dual:
        b = self.model.derivatives(x, ("cross", "theta"), [i, j])
        return Dual(b.cross[0, 1], b.cross_theta[0, 1], self)

    def substitute(self, x, i: int) -> list[Dual]:
        vals = self.model.substitute_discrete(x, i)
        feats = self.model.substitute_features(x, i)
        return [Dual(v, f, self) for v, f in zip(vals, feats)]


def theta_gradient(model: EnergyModel, functional) -> np.ndarray:
    """Exact theta-gradient of a scalar functional of the model's primitives.

    ``functional`` is either a callable taking a :class:`Tape` and returning a
    :class:`Dual`, or a :class:`Dual` already recorded on a tape of ``model``.
    """
    if isinstance(functional, Dual):
        out = functional
    else:
        out = functional(Tape(model))
        if not isinstance(out, Dual):
            raise ModelError("functional must return a Dual built from tape primitives")
    if out.tape.model is not model:
        raise StaleTapeError("the functional was recorded against a different model")
    return out.grad.copy()
