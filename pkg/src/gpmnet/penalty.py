"""Sparsity penalties on squared GPM entries."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .gpm import GpmMatrix


class PenaltyError(ValueError):
    pass


class PenaltyKind(enum.Enum):
    L1 = "l1"
    ADAPTIVE_L1 = "adaptive-l1"
    SCAD = "scad"
    MCP = "mcp"

    @classmethod
    def parse(cls, text) -> PenaltyKind:
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        aliases = {"adaptivel1": "adaptive-l1", "adaptive": "adaptive-l1", "alasso": "adaptive-l1"}
        key = aliases.get(key, key)
        for k in cls:
            if k.value == key:
                return k
        raise PenaltyError(f"unknown penalty kind {text!r}")


@dataclass(frozen=True)
class PenaltyConfig:
    kind: PenaltyKind = PenaltyKind.SCAD
    lam: float = 0.1
    scad_a: float = 3.7
    mcp_gamma: float = 3.0
    adaptive_weights: np.ndarray | None = field(default=None, repr=False)
    epsilon: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind))
        if not 0 <= self.lam <= 1:
            raise PenaltyError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.scad_a <= 2:
            raise PenaltyError("scad_a must exceed 2")
        if self.mcp_gamma <= 1:
            raise PenaltyError("mcp_gamma must exceed 1")
        if self.epsilon <= 0:
            raise PenaltyError("epsilon must be positive")
        if self.adaptive_weights is not None:
            w = np.array(self.adaptive_weights, float, copy=True)
            if w.ndim != 2 or w.shape[0] != w.shape[1] or np.any(w < 0):
                raise PenaltyError("adaptive weights must be a square nonnegative matrix")
            w.setflags(write=False)
            object.__setattr__(self, "adaptive_weights", w)

    def with_weights(self, w) -> PenaltyConfig:
        return PenaltyConfig(self.kind, self.lam, self.scad_a, self.mcp_gamma, w, self.epsilon)

    def _weights(self, d: int) -> np.ndarray:
        if self.kind is PenaltyKind.ADAPTIVE_L1:
            if self.adaptive_weights is None:
                raise PenaltyError("adaptive-l1 needs weights (run a pilot fit first)")
            if self.adaptive_weights.shape != (d, d):
                raise PenaltyError("adaptive weight matrix has the wrong shape")
            return self.adaptive_weights
        return np.ones((d, d))


def rho(cfg: PenaltyConfig, t) -> np.ndarray:
    """Elementwise penalty on nonnegative t (adaptive weights excluded)."""
    t = np.asarray(t, float)
    lam = cfg.lam
    if cfg.kind in (PenaltyKind.L1, PenaltyKind.ADAPTIVE_L1):
        return lam * t
    if cfg.kind is PenaltyKind.SCAD:
        a = cfg.scad_a
        mid = (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
        return np.where(t <= lam, lam * t, np.where(t <= a * lam, mid, (a + 1) * lam**2 / 2))
    g = cfg.mcp_gamma
    return np.where(t <= g * lam, lam * t - t**2 / (2 * g), g * lam**2 / 2)


def rho_prime(cfg: PenaltyConfig, t) -> np.ndarray:
    """Left derivative of rho."""
    t = np.asarray(t, float)
    lam = cfg.lam
    if cfg.kind in (PenaltyKind.L1, PenaltyKind.ADAPTIVE_L1):
        return np.full_like(t, lam)
    if cfg.kind is PenaltyKind.SCAD:
        a = cfg.scad_a
        return np.where(t <= lam, lam, np.where(t <= a * lam, (a * lam - t) / (a - 1), 0.0))
    g = cfg.mcp_gamma
    return np.where(t <= g * lam, lam - t / g, 0.0)


def _upper(gpm: GpmMatrix) -> np.ndarray:
    om = gpm.omega
    if np.any(om < 0):
        raise PenaltyError("negative omega entry")
    return np.triu(np.ones_like(om, dtype=bool), 1)


def penalty_value(cfg: PenaltyConfig, gpm: GpmMatrix) -> float:
    mask = _upper(gpm)
    w = cfg._weights(gpm.d)
    return float(np.sum((w * rho(cfg, gpm.omega))[mask]))


def penalty_omega_gradient(cfg: PenaltyConfig, omega: np.ndarray) -> np.ndarray:
    """d penalty / d omega[i, j] on the upper triangle (zeros elsewhere)."""
    om = np.asarray(omega, float)
    w = cfg._weights(om.shape[0])
    return np.triu(w * rho_prime(cfg, om), 1)


def penalty_theta_gradient(cfg: PenaltyConfig, gpm: GpmMatrix) -> np.ndarray:
    if gpm.convention != "squared":
        raise PenaltyError("penalty gradients need the squared convention")
    if gpm.tape is None:
        raise PenaltyError("GPM carries no theta tape; compute it from an energy model")
    _upper(gpm)
    return gpm.tape.vjp(penalty_omega_gradient(cfg, gpm.omega))


def adaptive_weights_from_pilot(pilot: GpmMatrix, epsilon: float = 1e-6) -> np.ndarray:
    w = 1.0 / (np.asarray(pilot.omega, float) + epsilon)
    np.fill_diagonal(w, 0.0)
    return w
