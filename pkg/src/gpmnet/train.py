"""Adam training of the penalized mixed score-matching objective."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import EnergyModel, build_basis
from .gpm import GpmMatrix, GpmTape, PairStatistics, extract_graph, kind_matrix
from .graphs import UndirectedGraph
from .penalty import (
    PenaltyConfig,
    PenaltyKind,
    adaptive_weights_from_pilot,
    penalty_omega_gradient,
    rho,
)
from .scorematch import LossEngine, LossReport
from .types import Dataset, Standardization, standardize


class TrainingError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BasisConfig:
    K: int | None = None
    alpha: float = 0.05
    scope_size: int | None = 2
    unary: bool = True
    bandwidth_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.scope_size is not None and self.scope_size < 1:
            raise ConfigError("scope_size must be >= 1")
        if not self.bandwidth_scale > 0:
            raise ConfigError("bandwidth_scale must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_iters: int = 2000
    tol: float = 1e-6
    window: int = 20
    batch: int | str = "full"
    seed: int = 0
    standardize: bool = True
    checkpoint_every: int = 500
    discrete_smoothing: float = 0.05

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.discrete_smoothing < 0:
            raise ConfigError("discrete_smoothing must be >= 0")
        if self.batch != "full" and (not isinstance(self.batch, int) or self.batch < 1):
            raise ConfigError("batch must be 'full' or a positive int")


@dataclass
class FitResult:
    model: EnergyModel
    history: list[LossReport]
    gpm: GpmMatrix
    graph: UndirectedGraph
    wall_time: float
    standardization: Standardization | None = None
    iterations: int = 0
    converged: bool = False
    descent_warning: bool = False
    pilot_gpm: GpmMatrix | None = field(default=None, repr=False)


def smoothed_descent_ok(totals, burn_in: int = 100, window: int = 50, rtol: float = 1e-9) -> bool:
    """True when the moving average of ``totals`` after burn-in never rises."""
    t = np.asarray(totals, float)[burn_in:]
    if len(t) <= window:
        return True
    sm = np.convolve(t, np.ones(window) / window, mode="valid")
    rise = np.diff(sm)
    return bool(np.all(rise <= rtol * np.maximum(np.abs(sm[:-1]), 1.0)))


class Adam:
    def __init__(self, size: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        return theta - c.lr * mhat / (np.sqrt(vhat) + c.eps_adam)


def _objective(engine, pairs, pen, theta, rows, with_grad=True):
    rep, g = engine.evaluate(theta, rows, with_grad)
    p = 0.0
    if pen is not None and pen.lam > 0 and pairs is not None:
        om = pairs.omega(theta, rows)
        w = pen._weights(om.shape[0])
        p = float(np.sum(np.triu(w * rho(pen, om), 1)))
        if with_grad:
            g = g + pairs.vjp(theta, penalty_omega_gradient(pen, om), rows)
    return LossReport(rep.total, rep.per_variable, p), g


def _bad_rows(engine, theta, rows) -> list[int]:
    idx = range(engine.n) if rows is None else rows
    return [int(r) for r in idx if not np.isfinite(engine.evaluate(theta, [r], with_grad=False)[0].total)]


def fit(
    ds: Dataset,
    basis_cfg: BasisConfig | None = None,
    penalty_cfg: PenaltyConfig | None = None,
    train_cfg: TrainConfig | None = None,
    *,
    log_path=None,
    checkpoint_dir=None,
    graph_policy: str = "gap",
    tau: float | None = None,
) -> FitResult:
    """Minimize the penalized objective from theta = 0 and read off the graph."""
    basis_cfg = basis_cfg or BasisConfig()
    penalty_cfg = penalty_cfg or PenaltyConfig()
    train_cfg = train_cfg or TrainConfig()
    start = time.perf_counter()

    if penalty_cfg.kind is PenaltyKind.ADAPTIVE_L1 and penalty_cfg.adaptive_weights is None:
        pilot = fit(ds, basis_cfg, PenaltyConfig(PenaltyKind.L1, 0.0), train_cfg, graph_policy=graph_policy, tau=tau)
        w = adaptive_weights_from_pilot(pilot.gpm, penalty_cfg.epsilon)
        res = fit(
            ds, basis_cfg, penalty_cfg.with_weights(w), train_cfg,
            log_path=log_path, checkpoint_dir=checkpoint_dir, graph_policy=graph_policy, tau=tau,
        )
        res.pilot_gpm = pilot.gpm
        res.wall_time = time.perf_counter() - start
        return res

    if train_cfg.standardize:
        work, stdz = standardize(ds)
    else:
        work, stdz = ds, None
    basis = build_basis(
        work, basis_cfg.K, basis_cfg.seed,
        alpha=basis_cfg.alpha, scope_size=basis_cfg.scope_size, unary=basis_cfg.unary,
        bandwidth_scale=basis_cfg.bandwidth_scale,
    )
    engine = LossEngine(basis, work.schema, work.values, smoothing=train_cfg.discrete_smoothing)
    pairs = PairStatistics(basis, work.schema, work.values)
    pen = penalty_cfg if penalty_cfg.lam > 0 else None

    theta = np.zeros(basis.K)
    opt = Adam(basis.K, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history: list[LossReport] = []
    objective: list[float] = []
    converged = False
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if checkpoint_dir:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    win = train_cfg.window
    it = 0
    try:
        for it in range(1, train_cfg.max_iters + 1):
            rows = None
            if train_cfg.batch != "full" and train_cfg.batch < work.n:
                rows = np.sort(rng.choice(work.n, size=train_cfg.batch, replace=False))
            rep, g = _objective(engine, pairs, pen, theta, rows)
            obj = rep.total + rep.penalty
            if not (np.isfinite(obj) and np.all(np.isfinite(g))):
                bad = _bad_rows(engine, theta, rows)
                raise TrainingError(f"non-finite loss at iteration {it}; offending rows {bad[:20]}")
            history.append(rep)
            objective.append(obj)
            if log:
                log.write(json.dumps({"iter": it, "total": rep.total, "penalty": rep.penalty,
                                      "per_variable": rep.per_variable.tolist()}) + "\n")
            theta = opt.step(theta, g)
            if checkpoint_dir and it % train_cfg.checkpoint_every == 0:
                m = EnergyModel(work.schema, basis, theta)
                (Path(checkpoint_dir) / f"checkpoint_{it:06d}.json").write_text(m.dumps(), encoding="utf-8")
            if len(objective) >= 2 * win:
                a = np.mean(objective[-win:])
                b = np.mean(objective[-2 * win:-win])
                if abs(a - b) <= train_cfg.tol * max(abs(b), 1e-12):
                    converged = True
                    break
    finally:
        if log:
            log.close()
    if train_cfg.max_iters == 0:
        it = 0

    model = EnergyModel(work.schema, basis, theta)
    om = pairs.omega(theta)
    gpm = GpmMatrix(om, kind_matrix(work.schema), "squared", GpmTape(model, pairs))
    graph = extract_graph(gpm, graph_policy, tau)
    ok = smoothed_descent_ok(objective)
    if not ok:
        warnings.warn("smoothed training loss increased after burn-in", RuntimeWarning, stacklevel=2)
    return FitResult(
        model, history, gpm, graph, time.perf_counter() - start, stdz,
        iterations=it, converged=converged, descent_warning=not ok,
    )


@dataclass(frozen=True)
class SelfCheckReport:
    max_rel_error: float
    per_draw: tuple[float, ...]


def total_objective(model: EnergyModel, ds: Dataset, penalty_cfg: PenaltyConfig | None = None):
    """(loss + penalty, theta-gradient) of ``model`` on ``ds``."""
    engine = LossEngine(model.basis, model.schema, ds.values)
    pairs = PairStatistics(model.basis, model.schema, ds.values)
    pen = penalty_cfg if penalty_cfg is not None and penalty_cfg.lam > 0 else None
    rep, g = _objective(engine, pairs, pen, model.theta, None)
    return rep.total + rep.penalty, g


def gradient_selfcheck(
    model: EnergyModel, ds: Dataset, penalty_cfg: PenaltyConfig | None = None,
    draws: int = 5, seed=0, step: float = 1e-5, scale: float = 1.0,
) -> SelfCheckReport:
    """Compare the analytic total gradient with central differences at random theta."""
    engine = LossEngine(model.basis, model.schema, ds.values)
    pairs = PairStatistics(model.basis, model.schema, ds.values)
    pen = penalty_cfg if penalty_cfg is not None and penalty_cfg.lam > 0 else None
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(draws):
        th = rng.normal(scale=scale, size=model.K)
        _, g = _objective(engine, pairs, pen, th, None)
        fd = np.empty(model.K)
        for k in range(model.K):
            e = np.zeros(model.K)
            e[k] = step
            up = _objective(engine, pairs, pen, th + e, None, False)[0]
            dn = _objective(engine, pairs, pen, th - e, None, False)[0]
            fd[k] = ((up.total + up.penalty) - (dn.total + dn.penalty)) / (2 * step)
        denom = max(np.max(np.abs(fd)), 1e-300)
        errs.append(float(np.max(np.abs(g - fd)) / denom))
    return SelfCheckReport(max(errs), tuple(errs))
