"""Temperature-scaled softmax, divergences and the classical KD loss.

All functions take plain ``numpy`` arrays: logits are ``(N, K)`` float arrays,
labels are length-``N`` integer arrays. Everything is computed in float64.
"""
from __future__ import annotations

import numpy as np

# probabilities are floored at this value before taking logs
LOG_FLOOR = 1e-300


def as_logits(x, name: str = "logits") -> np.ndarray:
    """Validate and return ``x`` as a 2-D float64 array with K >= 2."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (N, K) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"{name} needs n >= 1 and k >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_labels(y, n: int, k: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim == 0:
        labels = labels[None]
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    return labels.astype(np.int64)


def _as_tau(tau, n: int) -> np.ndarray:
    t = np.asarray(tau, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(n, float(t))
    if t.shape != (n,):
        raise ValueError(f"tau must be a scalar or have shape ({n},), got {t.shape}")
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("temperature must be positive and finite")
    return t


def log_softmax_tau(logits, tau=1.0) -> np.ndarray:
    """Row-wise ``log softmax(logits / tau)``; ``tau`` is a scalar or per-row vector."""
    z = as_logits(logits)
    t = _as_tau(tau, z.shape[0])
    s = z / t[:, None]
    s = s - s.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax_tau(logits, tau=1.0) -> np.ndarray:
    """Temperature-scaled softmax, row-wise.

    Parameters
    ----------
    logits : array_like, shape (N, K)
        Raw scores. A single row of shape (K,) is promoted to (1, K).
    tau : float or array_like, shape (N,)
        Positive temperature, shared or per sample.

    Returns
    -------
    ndarray, shape (N, K)
        Row-stochastic matrix. ``argmax`` of each row equals ``argmax`` of the
        corresponding logits row.
    """
    z = as_logits(logits)
    t = _as_tau(tau, z.shape[0])
    s = z / t[:, None]
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_pair(target, pred):
    a = np.atleast_2d(np.asarray(target, dtype=np.float64))
    b = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def kl_divergence(target, pred) -> np.ndarray:
    """Per-row ``KL(target || pred) = sum target * ln(target / pred)``."""
    q, p = _check_pair(target, pred)
    lq = np.log(np.maximum(q, LOG_FLOOR))
    lp = np.log(np.maximum(p, LOG_FLOOR))
    terms = np.where(q > 0, q * (lq - lp), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def kl_from_logprobs(log_target, log_pred) -> np.ndarray:
    """KL divergence from log-probabilities; avoids flooring entirely."""
    lq, lp = _check_pair(log_target, log_pred)
    q = np.exp(lq)
    return np.maximum((q * (lq - lp)).sum(axis=1), 0.0)


def soft_cross_entropy(target, pred) -> np.ndarray:
    """Per-row ``H(target, pred) = -sum target * ln pred``."""
    q, p = _check_pair(target, pred)
    return -(q * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=1)


def cross_entropy(labels, pred) -> np.ndarray:
    """Per-row ``-ln pred[i, labels[i]]``."""
    p = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    y = as_labels(labels, p.shape[0], p.shape[1])
    return -np.log(np.maximum(p[np.arange(p.shape[0]), y], LOG_FLOOR))


def cross_entropy_logits(labels, logits) -> np.ndarray:
    """Hard-label cross entropy evaluated stably from logits at tau = 1."""
    lp = log_softmax_tau(logits, 1.0)
    y = as_labels(labels, lp.shape[0], lp.shape[1])
    return -lp[np.arange(lp.shape[0]), y]


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def kd_loss_per_sample(v, t, y, tau: float, alpha: float, form: str = "kl") -> np.ndarray:
    """Per-sample classical distillation loss.

    ``form="kl"`` uses ``alpha * tau^2 * KL(q_tau, p_tau)``; ``form="ce"`` uses
    the cross entropy ``H(q_tau, p_tau)`` instead. The two differ by the entropy
    of the teacher targets, which is constant in the student logits, so both
    forms have the same gradient.
    """
    alpha = _check_alpha(alpha)
    v = as_logits(v, "student logits")
    t = as_logits(t, "teacher logits")
    if v.shape != t.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {t.shape}")
    y = as_labels(y, *v.shape)
    lq = log_softmax_tau(t, tau)
    lp = log_softmax_tau(v, tau)
    if form == "kl":
        soft = kl_from_logprobs(lq, lp)
    elif form == "ce":
        soft = -(np.exp(lq) * lp).sum(axis=1)
    else:
        raise ValueError(f"unknown form {form!r}")
    hard = cross_entropy_logits(y, v)
    return alpha * tau * tau * soft + (1.0 - alpha) * hard


def kd_loss(v, t, y, tau: float, alpha: float = 0.7, form: str = "kl") -> float:
    """Batch distillation loss, reduced by sum."""
    return float(kd_loss_per_sample(v, t, y, tau, alpha, form).sum())


def argmax_rows(x) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(np.atleast_2d(np.asarray(x)), axis=1)
