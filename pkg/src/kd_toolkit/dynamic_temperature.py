"""Per-sample temperatures from confusion weights.

Each sample gets a weight that grows with how confused the student is on it,
either from student/teacher logit agreement (``"flsw"``) or from the
student's top confidence (``"cwsm"``). Weights are L1-normalized over the
batch and mapped to a temperature::

    tau_x = tau0 + (mean(w) - w_x) * beta,   clamped below at tau_min

so confusing samples are softened less. The ``*_vjp`` helpers give the
vector-Jacobian products used by the loss gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .soft_targets import as_logits, softmax_tau

DEFAULT_TAU0 = 10.0
DEFAULT_BETA = 40.0
DEFAULT_TAU_MIN = 3.0
DEFAULT_GAMMA = 1.0


@dataclass(frozen=True)
class DtdConfig:
    scheme: str = "flsw"
    gamma: float = DEFAULT_GAMMA
    tau0: float = DEFAULT_TAU0
    beta: float = DEFAULT_BETA
    tau_min: float = DEFAULT_TAU_MIN

    def __post_init__(self):
        if self.scheme not in ("flsw", "cwsm"):
            raise ValueError(f"unknown weighting scheme {self.scheme!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.tau0 > self.tau_min > 0:
            raise ValueError(f"need tau0 > tau_min > 0, got tau0={self.tau0}, tau_min={self.tau_min}")

    def weights(self, v, t) -> np.ndarray:
        if self.scheme == "flsw":
            return weights_flsw(v, t, self.gamma)
        return weights_cwsm(v)

    def weights_vjp(self, v, t, g) -> np.ndarray:
        if self.scheme == "flsw":
            return weights_flsw_vjp(v, t, self.gamma, g)
        return weights_cwsm_vjp(v, g)


@dataclass
class TauVector:
    tau: np.ndarray
    raw: np.ndarray
    clamped: np.ndarray
    tau0: float
    beta: float
    tau_min: float

    @property
    def clamped_count(self) -> int:
        return int(self.clamped.sum())

    def stats(self) -> tuple[float, float, float, int]:
        return float(self.tau.min()), float(self.tau.mean()), float(self.tau.max()), self.clamped_count


def _unit_rows(x: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(x, axis=1)
    if np.any(norm == 0):
        raise ValueError(f"{name} has a zero-norm row; cosine agreement is undefined")
    return x / norm[:, None], norm


def _pair(v, t):
    v = as_logits(v, "student logits")
    t = as_logits(t, "teacher logits")
    if v.shape != t.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {t.shape}")
    return v, t


def cosine_agreement(v, t) -> np.ndarray:
    """Inner product of the L2-normalized logit rows, in [-1, 1]."""
    v, t = _pair(v, t)
    vh, _ = _unit_rows(v, "student logits")
    th, _ = _unit_rows(t, "teacher logits")
    return np.clip((vh * th).sum(axis=1), -1.0, 1.0)


def weights_flsw(v, t, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Focal-style weights ``(1 - v_hat . t_hat) ** gamma`` (unnormalized)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return (1.0 - cosine_agreement(v, t)) ** gamma


def weights_flsw_vjp(v, t, gamma: float, g) -> np.ndarray:
    """``sum_x g_x * d w_x / d v`` for the focal-style weights."""
    v, t = _pair(v, t)
    vh, vn = _unit_rows(v, "student logits")
    th, _ = _unit_rows(t, "teacher logits")
    c = np.clip((vh * th).sum(axis=1), -1.0, 1.0)
    base = 1.0 - c
    if gamma == 0:
        return np.zeros_like(v)
    # d/dc (1-c)^gamma; (1-c)^(gamma-1) blows up at c=1 when gamma<1, where
    # the cosine itself is stationary, so the product is taken as zero
    with np.errstate(divide="ignore", invalid="ignore"):
        dw_dc = np.where(base > 0, -gamma * base ** (gamma - 1.0), 0.0)
    dc_dv = (th - c[:, None] * vh) / vn[:, None]
    return (np.asarray(g, dtype=np.float64) * dw_dc)[:, None] * dc_dv


def weights_cwsm(v) -> np.ndarray:
    """Inverse of the student's top softmax probability; lies in [1, K]."""
    p = softmax_tau(v, 1.0)
    return 1.0 / p.max(axis=1)


def weights_cwsm_vjp(v, g) -> np.ndarray:
    p = softmax_tau(v, 1.0)
    n = p.shape[0]
    top = np.argmax(p, axis=1)
    vmax = p[np.arange(n), top]
    # d(1/m)/dv = -(onehot(top) - p) / m
    jac = p.copy()
    jac[np.arange(n), top] -= 1.0
    return (np.asarray(g, dtype=np.float64) / vmax)[:, None] * jac


def normalize_l1(w) -> np.ndarray:
    """Scale nonnegative weights to sum to one; all-zero input becomes uniform."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    s = w.sum()
    if s == 0:
        return np.full(w.size, 1.0 / w.size)
    return w / s


def normalize_l1_vjp(w, g_hat) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    s = w.sum()
    if s == 0:
        return np.zeros_like(w)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    w_hat = w / s
    return (g_hat - np.dot(g_hat, w_hat)) / s


def tau_per_sample(w_hat, tau0: float = DEFAULT_TAU0, beta: float = DEFAULT_BETA,
                   tau_min: float = DEFAULT_TAU_MIN) -> TauVector:
    """Map normalized weights to clamped per-sample temperatures.

    ``mean(w_hat)`` is taken as ``1/N``; the weights are L1-normalized so the
    two coincide, and the constant keeps the map exactly affine.
    """
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if tau_min <= 0:
        raise ValueError("tau_min must be positive")
    n = w_hat.size
    raw = tau0 + (1.0 / n - w_hat) * beta
    clamped = raw < tau_min
    tau = np.where(clamped, tau_min, raw)
    return TauVector(tau=tau, raw=raw, clamped=clamped, tau0=tau0, beta=beta, tau_min=tau_min)


def dynamic_tau(v, t, cfg: DtdConfig) -> tuple[TauVector, np.ndarray, np.ndarray]:
    """Weights, normalized weights and temperatures for one batch."""
    w = cfg.weights(v, t)
    w_hat = normalize_l1(w)
    return tau_per_sample(w_hat, cfg.tau0, cfg.beta, cfg.tau_min), w, w_hat


def dynamic_tau_vjp(v, t, cfg: DtdConfig, taus: TauVector, w, g_tau) -> np.ndarray:
    """Pull ``dL/dtau`` back to ``dL/dv`` through clamp, normalization and weights.

    Clamped samples contribute nothing (subgradient 0 at the floor).
    """
    g_tau = np.where(taus.clamped, 0.0, np.asarray(g_tau, dtype=np.float64))
    g_hat = -cfg.beta * g_tau
    g_w = normalize_l1_vjp(w, g_hat)
    return cfg.weights_vjp(v, t, g_w)
