"""Score-matching objectives for continuous, discrete and mixed data.

Per row and variable the loss term is

    continuous i:  0.5 * (d_i log pi)^2 + d_i^2 log pi
    discrete i:    0.5 * r(x)^2 - sum_v r(x[i -> v]),   r(x) = sum_v pi(x[i -> v]) / pi(x)

and the objective is the (optionally weighted) mean over rows of the sum
over variables.  The per-row functions are the reference definitions; the
:class:`LossEngine` evaluates the same quantities for a whole dataset at once
and supplies exact theta-gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .energy import EnergyModel, FeatureBasis, FeatureBlock, ModelError
from .types import Dataset, Schema


@dataclass(frozen=True)
class LossReport:
    total: float
    per_variable: np.ndarray
    penalty: float = 0.0

    def to_dict(self) -> dict:
        return {"total": self.total, "penalty": self.penalty, "per_variable": self.per_variable.tolist()}


def continuous_term(model: EnergyModel, x, i: int) -> float:
    if model.schema.is_discrete(i):
        raise ModelError(f"variable {i} is discrete")
    b = model.derivatives(x, ("grad", "hess_diag"), [i])
    return 0.5 * float(b.grad[0]) ** 2 + float(b.hess_diag[0])


def discrete_term(model: EnergyModel, x, i: int) -> float:
    if not model.schema.is_discrete(i):
        raise ModelError(f"variable {i} is continuous")
    L = model.substitute_discrete(x, i)
    xi = int(np.asarray(x, float)[i])
    lse = logsumexp(L)
    r = np.exp(lse - L[xi])
    # r(x[i -> v]) = sum_v' exp(L_v' - L_v)
    return 0.5 * r**2 - float(np.sum(np.exp(lse - L)))


def _check_schema(model_schema: Schema, ds: Dataset) -> None:
    if ds.schema != model_schema:
        raise ModelError("dataset schema does not match the model schema")


def _normalized_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, float).reshape(-1)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ModelError("row weights must be nonnegative, one per row, not all zero")
    return w / w.sum()


class LossEngine:
    """Precomputed theta-independent pieces of the mixed objective for a fixed dataset.

    With ``smoothing > 0`` the discrete terms are averaged over the data plus
    the pseudo-rows of :func:`smoothed_rows`; continuous terms always use the
    data rows alone.
    """

    def __init__(self, basis: FeatureBasis, schema: Schema, values: np.ndarray, weights=None, smoothing: float = 0.0):
        self.basis = basis
        self.schema = schema
        blk = FeatureBlock(basis, schema, values)
        self.values = blk.values
        self.n = blk.n
        self.weights = _normalized_weights(self.n, weights)
        K, d = basis.K, schema.d
        S = basis.safe_scopes
        s = S.shape[1]
        cont = ~schema.discrete_mask
        slot_cont = cont[S] & basis.active  # (K, s)
        self.cont_idx = np.array(schema.continuous_indices, dtype=np.intp)
        self.S = S
        phi = blk.phi[:, :, None]
        G = np.where(slot_cont, phi * blk.a, 0.0)  # d phi / d x on each slot
        H = np.where(slot_cont, phi * (blk.a**2 - 1.0 / blk.w**2), 0.0)
        # per-slot (n, K) blocks and (K, d) slot -> coordinate maps
        self.G = [np.ascontiguousarray(G[:, :, t]) for t in range(s)]
        self.H = [np.ascontiguousarray(H[:, :, t]) for t in range(s)]
        self.P = []
        for t in range(s):
            Pt = np.zeros((K, d))
            Pt[np.arange(K), S[:, t]] = slot_cont[:, t]
            self.P.append(Pt)
        self.x_cont = self.values * cont
        self._hbar = None

        self.disc = []
        self.n_blocks = 1
        if schema.discrete_indices:
            aug, aw = smoothed_rows(schema, self.values, smoothing, self.weights)
            self.n_blocks = aug.shape[0] // self.n
            self.aug_weights = aw
            ablk = blk if self.n_blocks == 1 else FeatureBlock(basis, schema, aug)
            for i in schema.discrete_indices:
                feats, (slot,) = basis.features_with(i)
                rest = ablk.rest([slot], feats)  # (N, F)
                table = ablk.slot_factor(feats, slot, i)  # (F, M)
                sub = rest[:, None, :] * table.T[None, :, :]  # (N, M, F)
                self.disc.append((i, feats, sub, aug[:, i].astype(np.intp)))

    def _rows(self, rows):
        if rows is None:
            return slice(None), self.weights
        rows = np.asarray(rows, dtype=np.intp)
        w = self.weights[rows]
        return rows, w / w.sum()

    def _aug_rows(self, rows):
        if rows is None:
            return slice(None), self.aug_weights / self.aug_weights.sum()
        rows = np.asarray(rows, dtype=np.intp)
        sel = (rows[None, :] + self.n * np.arange(self.n_blocks)[:, None]).reshape(-1)
        w = self.aug_weights[sel]
        return sel, w / w.sum()

    def evaluate(self, theta, rows=None, with_grad: bool = True):
        """(LossReport, theta-gradient or None) for the full data or a subset of data rows."""
        th = np.asarray(theta, float)
        alpha = self.basis.alpha
        d, K = self.schema.d, self.basis.K
        per_var = np.zeros(d)
        grad = np.zeros(K) if with_grad else None
        if len(self.cont_idx):
            sel, w = self._rows(rows)
            cont = self.cont_idx
            score = -2 * alpha * self.x_cont[sel]
            for Gt, Pt in zip(self.G, self.P):
                score = score + Gt[sel] @ (th[:, None] * Pt)
            if rows is None:
                if self._hbar is None:
                    self._hbar = [w @ Ht for Ht in self.H]
                hbar = self._hbar
            else:
                hbar = [w @ Ht[sel] for Ht in self.H]  # row-mean of the slot Hessian blocks
            hess_mean = sum((hb * th) @ Pt for hb, Pt in zip(hbar, self.P)) - 2 * alpha
            per_var[cont] = 0.5 * (w @ score[:, cont] ** 2) + hess_mean[cont]
            if with_grad:
                for t, (Gt, hb) in enumerate(zip(self.G, hbar)):
                    grad += w @ (score[:, self.S[:, t]] * Gt[sel]) + hb
        if self.disc:
            sel, w = self._aug_rows(rows)
        for i, feats, sub_all, xi_all in self.disc:
            sub, xi = sub_all[sel], xi_all[sel]
            n, M, F = sub.shape
            D = sub @ th[feats]
            e = np.exp(D - D.max(axis=1, keepdims=True))
            tot = e.sum(axis=1)
            ex = e[np.arange(n), xi]
            inv = (1.0 / e).sum(axis=1)
            r = tot / ex
            # sum_v r(x[i -> v]) = sum_{v, v'} e_v' / e_v = tot * inv
            per_var[i] = w @ (0.5 * r**2 - tot * inv)
            if with_grad:
                c = (r / ex)[:, None] * e - e * inv[:, None] + tot[:, None] / e
                c[np.arange(n), xi] -= r**2
                grad[feats] += (w[:, None] * c).reshape(-1) @ sub.reshape(n * M, F)
        total = float(per_var.sum())
        return LossReport(total, per_var), grad


def smoothed_rows(schema: Schema, values: np.ndarray, eps: float, weights=None):
    """Append every single-coordinate substitution of each row along discrete variables.

    Each pseudo-row x[i -> v] (v != x_i) gets weight ``eps`` times its source
    row's weight.  The augmented empirical distribution then has positive
    mass on every state one substitution away from the data, which keeps the
    discrete objective bounded below when the data contain structural zeros.
    """
    X = np.atleast_2d(np.asarray(values, float))
    n = X.shape[0]
    w0 = np.ones(n) if weights is None else np.asarray(weights, float)
    if eps <= 0 or not schema.discrete_indices:
        return X, w0
    blocks, ws = [X], [w0]
    for i in schema.discrete_indices:
        m = schema.cardinality(i)
        for v in range(1, m):
            Y = X.copy()
            Y[:, i] = (Y[:, i] + v) % m
            blocks.append(Y)
            ws.append(eps * w0)
    return np.vstack(blocks), np.concatenate(ws)


def mixed_loss(model: EnergyModel, ds: Dataset, weights=None) -> LossReport:
    _check_schema(model.schema, ds)
    rep, _ = LossEngine(model.basis, model.schema, ds.values, weights).evaluate(model.theta, with_grad=False)
    return rep


def loss_theta_gradient(model: EnergyModel, ds: Dataset, weights=None) -> np.ndarray:
    _check_schema(model.schema, ds)
    _, g = LossEngine(model.basis, model.schema, ds.values, weights).evaluate(model.theta)
    return g


def row_loss(model: EnergyModel, x) -> float:
    """Sum of per-variable terms for one row, via the reference per-row definitions."""
    return sum(
        discrete_term(model, x, i) if model.schema.is_discrete(i) else continuous_term(model, x, i)
        for i in range(model.schema.d)
    )
