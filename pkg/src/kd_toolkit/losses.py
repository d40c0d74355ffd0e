"""Batch distillation losses and their exact gradients w.r.t. student logits.

Five loss kinds share one entry point, :func:`evaluate`:

``ce``      hard-label cross entropy, no teacher
``kd``      ``alpha tau^2 KL(q_tau, p_tau) + (1 - alpha) H(y, p_1)``
``ka``      ``tau^2 KL(A(q_tau), p_tau)`` with adjusted teacher targets
``dtd``     ``alpha tau_x^2 KL(q_tau_x, p_tau_x) + (1 - alpha) H(y, p_1)``
``dtd-ka``  ``tau_x^2 KL(A(q_tau_x), p_tau_x)``

All losses are summed over the batch, never averaged. For the dynamic
temperature kinds the gradient includes the path through ``tau_x``, which
depends on the student logits via the confusion weights. The adjustment
(mask, swap positions, replacement rows) depends only on teacher logits and
labels and is held fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjustment import AdjustmentMode, AdjustmentReport, adjust_lsr, adjust_ps, find_misjudged, ps_positions
from .dynamic_temperature import DtdConfig, TauVector, dynamic_tau, dynamic_tau_vjp
from .soft_targets import as_labels, as_logits, log_softmax_tau

KINDS = ("ce", "kd", "ka", "dtd", "dtd-ka")


@dataclass(frozen=True)
class DistillSpec:
    """Which loss to train with, and its parameters.

    ``tau`` is used by ``kd``/``ka``; ``alpha`` by ``kd``/``dtd``; ``adjust``
    by ``ka``/``dtd-ka``; ``dtd`` by ``dtd``/``dtd-ka``.
    """

    kind: str = "kd"
    tau: float = 4.0
    alpha: float = 0.7
    adjust: AdjustmentMode = field(default_factory=AdjustmentMode)
    dtd: DtdConfig = field(default_factory=DtdConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.adjust.variant is not None and self.kind not in ("ka", "dtd-ka"):
            raise ValueError(f"adjustment {self.adjust} is only valid for ka and dtd-ka")

    @property
    def needs_teacher(self) -> bool:
        return self.kind != "ce"

    @property
    def dynamic(self) -> bool:
        return self.kind in ("dtd", "dtd-ka")


@dataclass
class LossBreakdown:
    total: float
    per_sample: np.ndarray
    kl_part: float
    ce_part: float
    tau_stats: tuple[float, float, float, int] | None = None
    adjustment: AdjustmentReport | None = None
    aux: float = 0.0

    def to_record(self) -> dict:
        """Flat dict suitable for one row of a metrics stream."""
        tmin, tmean, tmax, clamped = self.tau_stats or (float("nan"),) * 3 + (0,)
        return {
            "loss": self.total,
            "kl_part": self.kl_part,
            "ce_part": self.ce_part,
            "aux": self.aux,
            "tau_min": tmin,
            "tau_mean": tmean,
            "tau_max": tmax,
            "clamped_count": clamped,
            "misjudged_count": self.adjustment.misjudged_count if self.adjustment else 0,
        }


def _adjusted_kl(v, t, y, tau, mode: AdjustmentMode, mask):
    """Per-sample ``KL(A(q_tau), p_tau)`` with its pieces for differentiation.

    Returns ``kl``, the adjusted targets ``a`` and student probabilities ``p``,
    and ``dkl_scaled_dtau`` = d/dtau of ``tau^2 KL`` holding the adjustment fixed.
    """
    lq = log_softmax_tau(t, tau)
    lp = log_softmax_tau(v, tau)
    q, p = np.exp(lq), np.exp(lp)
    tau_c = tau[:, None]
    dq = -q * (t - (q * t).sum(axis=1, keepdims=True)) / tau_c**2

    a, la, da = q, lq, dq
    if mode.variant == "lsr" and mask.any():
        a = adjust_lsr(q, y, mask, mode.epsilon)
        la, da = lq.copy(), dq.copy()
        la[mask] = np.log(a[mask])
        da[mask] = 0.0
    elif mode.variant == "ps" and mask.any():
        a = adjust_ps(q, y, mask)
        rows, pred, true = ps_positions(q, y, mask)
        la, da = lq.copy(), dq.copy()
        la[rows, pred], la[rows, true] = lq[rows, true], lq[rows, pred]
        da[rows, pred], da[rows, true] = dq[rows, true], dq[rows, pred]

    diff = la - lp
    kl = np.maximum((a * diff).sum(axis=1), 0.0)
    dtau = (2.0 * tau * kl + tau**2 * (da * diff).sum(axis=1)
            + (a * v).sum(axis=1) - (p * v).sum(axis=1))
    return kl, a, p, dtau


def _ce_terms(v, y):
    lp1 = log_softmax_tau(v, 1.0)
    n = v.shape[0]
    ce = -lp1[np.arange(n), y]
    g = np.exp(lp1)
    g[np.arange(n), y] -= 1.0
    return ce, g


def evaluate(spec: DistillSpec, v, t=None, y=None, *, grad: bool = True, sample_ids=None,
             aux: tuple[float, np.ndarray] | None = None):
    """Loss breakdown and (optionally) ``dLoss/dv`` for one batch.

    Parameters
    ----------
    spec : DistillSpec
    v, t : array_like, shape (N, K)
        Student and teacher logits. ``t`` is ignored for ``ce``.
    y : array_like, shape (N,)
        Ground-truth labels.
    aux : (float, ndarray), optional
        An externally computed extra term and its gradient w.r.t. ``v``;
        added to the total as-is.

    Returns
    -------
    LossBreakdown, ndarray or None
    """
    v = as_logits(v, "student logits")
    n, k = v.shape
    y = as_labels(y, n, k)
    g = np.zeros_like(v) if grad else None
    kl_part = ce_part = 0.0
    per = np.zeros(n)
    tau_stats = None
    report = None

    if spec.kind == "ce":
        ce, gce = _ce_terms(v, y)
        per = ce
        ce_part = float(ce.sum())
        if grad:
            g = gce
    else:
        if t is None:
            raise ValueError(f"loss kind {spec.kind!r} needs teacher logits")
        t = as_logits(t, "teacher logits")
        if t.shape != v.shape:
            raise ValueError(f"shape mismatch: {v.shape} vs {t.shape}")

        if spec.kind in ("ka", "dtd-ka"):
            mode, alpha = spec.adjust, 1.0
            mask, report = find_misjudged(t, y, sample_ids, mode)
        else:
            mode, alpha = AdjustmentMode(), spec.alpha
            mask = np.zeros(n, dtype=bool)

        taus: TauVector | None = None
        if spec.dynamic:
            taus, w, _ = dynamic_tau(v, t, spec.dtd)
            tau = taus.tau
            tau_stats = taus.stats()
        else:
            tau = np.full(n, float(spec.tau))
            tau_stats = (float(spec.tau), float(spec.tau), float(spec.tau), 0)

        kl, a, p, dtau = _adjusted_kl(v, t, y, tau, mode, mask)
        soft = alpha * tau**2 * kl
        kl_part = float(soft.sum())
        per = soft
        if grad:
            g = (alpha * tau)[:, None] * (p - a)
            if taus is not None and spec.dtd.beta != 0:
                g = g + dynamic_tau_vjp(v, t, spec.dtd, taus, w, alpha * dtau)
        if alpha < 1.0:
            ce, gce = _ce_terms(v, y)
            per = per + (1.0 - alpha) * ce
            ce_part = float(((1.0 - alpha) * ce).sum())
            if grad:
                g = g + (1.0 - alpha) * gce

    aux_value = 0.0
    if aux is not None:
        aux_value = float(aux[0])
        if grad:
            g = g + np.asarray(aux[1], dtype=np.float64)
    total = float(per.sum()) + aux_value
    return LossBreakdown(total, per, kl_part, ce_part, tau_stats, report, aux_value), g


def loss_kd(v, t, y, tau: float = 4.0, alpha: float = 0.7) -> LossBreakdown:
    return evaluate(DistillSpec("kd", tau=tau, alpha=alpha), v, t, y, grad=False)[0]


def loss_ka(v, t, y, tau: float, adj: AdjustmentMode) -> LossBreakdown:
    return evaluate(DistillSpec("ka", tau=tau, adjust=adj), v, t, y, grad=False)[0]


def loss_dtd(v, t, y, cfg: DtdConfig, alpha: float = 0.7) -> LossBreakdown:
    return evaluate(DistillSpec("dtd", alpha=alpha, dtd=cfg), v, t, y, grad=False)[0]


def loss_total(v, t, y, cfg: DtdConfig, adj: AdjustmentMode) -> LossBreakdown:
    """Combined dynamic-temperature loss on adjusted targets."""
    return evaluate(DistillSpec("dtd-ka", adjust=adj, dtd=cfg), v, t, y, grad=False)[0]


def grad_student_logits(spec: DistillSpec, v, t, y) -> np.ndarray:
    """Exact gradient of the summed loss w.r.t. every student logit."""
    return evaluate(spec, v, t, y, grad=True)[1]
