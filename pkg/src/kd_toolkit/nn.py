"""Small dense networks, SGD with momentum, and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .losses import DistillSpec, evaluate
from .soft_targets import argmax_rows

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


class NumericalError(FloatingPointError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "relu"


@dataclass
class NetworkParams:
    layers: list[Layer]
    seed: int = 0
    arch_tag: str = ""

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].weights.shape[0]] + [l.weights.shape[1] for l in self.layers]

    def copy(self) -> "NetworkParams":
        return NetworkParams([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
                             self.seed, self.arch_tag)

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("network has no layers")
        for i, l in enumerate(self.layers):
            if l.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {l.activation!r}")
            if l.bias.shape != (l.weights.shape[1],):
                raise ValueError(f"layer {i}: bias shape {l.bias.shape} does not match weights {l.weights.shape}")
            if i and self.layers[i - 1].weights.shape[1] != l.weights.shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain with previous layer")
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must output raw logits (identity activation)")


def mlp_dims(d_in: int, hidden: Sequence[int], k: int) -> list[int]:
    return [int(d_in), *[int(h) for h in hidden], int(k)]


def _rng(*key: int) -> np.random.Generator:
    # counter-based generator keyed by the full tuple, e.g. (seed, epoch)
    return np.random.Generator(np.random.Philox(key=[int(x) & (2**64 - 1) for x in key]))


def init_params(dims: Sequence[int], seed: int, arch_tag: str = "") -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    dims = [int(x) for x in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"degenerate architecture {dims}")
    if dims[-1] < 2:
        raise ValueError("networks must output at least 2 logits")
    rng = _rng(seed, 0x1417)
    layers = []
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / math.sqrt(fi)
        w = rng.uniform(-bound, bound, size=(fi, fo))
        b = rng.uniform(-bound, bound, size=fo)
        layers.append(Layer(w, b, "identity" if i == len(dims) - 2 else "relu"))
    tag = arch_tag or "mlp-" + "x".join(map(str, dims))
    return NetworkParams(layers, int(seed), tag)


def forward(params: NetworkParams, x):
    """Logits for a batch and the cache needed by :func:`backward`."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.layers[0].weights.shape[0]:
        raise ValueError(f"input of shape {h.shape} does not match network input dim "
                         f"{params.layers[0].weights.shape[0]}")
    cache = []
    for layer in params.layers:
        z = h @ layer.weights + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def predict(params: NetworkParams, x, batch_size: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.dims[-1]))


def backward(params: NetworkParams, cache, grad_logits) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients ``[(dW, db), ...]`` of the loss given ``dLoss/dlogits``."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if len(cache) != len(params.layers):
        raise ValueError("cache does not come from this network")
    if g.shape != cache[-1][1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match logits {cache[-1][1].shape}")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        h_in, z = cache[i]
        if layer.activation == "relu":
            g = g * (z > 0)
        grads[i] = (h_in.T @ g, g.sum(axis=0))
        if i:
            g = g @ layer.weights.T
    return grads


def zero_velocity(params: NetworkParams) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.layers]


def sgd_step(params: NetworkParams, grads, velocity, lr: float, momentum: float = 0.9,
             weight_decay: float = 5e-4):
    """One SGD-with-momentum update; returns new ``(params, velocity)``.

    ``velocity = momentum * velocity + grad + weight_decay * weight`` and
    ``weight -= lr * velocity``. Weight decay is not applied to biases.
    """
    new_layers, new_vel = [], []
    for layer, (gw, gb), (vw, vb) in zip(params.layers, grads, velocity):
        vw = momentum * vw + gw + weight_decay * layer.weights
        vb = momentum * vb + gb
        new_layers.append(Layer(layer.weights - lr * vw, layer.bias - lr * vb, layer.activation))
        new_vel.append((vw, vb))
    return NetworkParams(new_layers, params.seed, params.arch_tag), new_vel


@dataclass(frozen=True)
class StepSchedule:
    lr0: float
    milestones: tuple[int, ...] = (60, 120, 160)
    factor: float = 0.1

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")


@dataclass(frozen=True)
class CosineSchedule:
    lr0: float
    total_epochs: int

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def lr_at(schedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if isinstance(schedule, StepSchedule):
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return schedule.lr0 * schedule.factor**passed
    if isinstance(schedule, CosineSchedule):
        return schedule.lr0 * 0.5 * (1.0 + math.cos(math.pi * min(epoch, schedule.total_epochs) / schedule.total_epochs))
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr0: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "step"
    milestones: tuple[int, ...] = (30, 45)
    factor: float = 0.1
    seed: int = 0
    loss_spec: DistillSpec = field(default_factory=lambda: DistillSpec("ce"))

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.make_schedule()

    def make_schedule(self):
        if self.schedule == "step":
            return StepSchedule(self.lr0, tuple(self.milestones), self.factor)
        if self.schedule == "cosine":
            return CosineSchedule(self.lr0, max(self.epochs, 1))
        raise ValueError(f"unknown schedule {self.schedule!r}")


METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_acc",
                  "tau_min", "tau_mean", "tau_max", "clamped_count", "misjudged_count")


@dataclass
class MetricsLog:
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
            w.writeheader()
            for rec in self.epochs:
                w.writerow({k: _fmt(rec[k]) for k in METRIC_COLUMNS})

    def steps_to_csv(self, path) -> None:
        if not self.steps:
            return
        cols = list(self.steps[0])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for rec in self.steps:
                w.writerow({k: _fmt(rec[k]) for k in cols})


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _teacher_logits_for(teacher, features, index):
    if teacher is None:
        return None
    if isinstance(teacher, NetworkParams):
        return forward(teacher, features)[0]
    return np.asarray(teacher, dtype=np.float64)[index]


def train(teacher, student: NetworkParams, dataset, cfg: TrainConfig, val=None):
    """Train ``student`` on ``dataset`` with ``cfg.loss_spec``.

    Parameters
    ----------
    teacher : NetworkParams, ndarray or None
        Frozen teacher network, or precomputed teacher logits aligned with the
        rows of ``dataset``. Ignored for plain cross entropy.
    student : NetworkParams
        Initial student parameters; not modified.
    dataset, val : Dataset
        Training and (optional) validation data.

    Returns
    -------
    NetworkParams, MetricsLog
    """
    from .data import batches

    spec = cfg.loss_spec
    if spec.needs_teacher and teacher is None:
        raise ValueError(f"loss {spec.kind!r} needs a teacher network or teacher logits")
    if not spec.needs_teacher:
        teacher = None
    elif not isinstance(teacher, NetworkParams):
        teacher = np.asarray(teacher, dtype=np.float64)
        if teacher.shape != (len(dataset.labels), dataset.k):
            raise ValueError(f"teacher logits of shape {teacher.shape} do not align with the dataset")

    params = student.copy()
    velocity = zero_velocity(params)
    schedule = cfg.make_schedule()
    metrics = MetricsLog()
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(schedule, epoch)
        loss_sum = correct = seen = clamped = misjudged = 0
        tmin, tmax, tsum = math.inf, -math.inf, 0.0
        for batch in batches(dataset, cfg.batch_size, cfg.seed, epoch):
            logits, cache = forward(params, batch.features)
            if not np.all(np.isfinite(logits)):
                raise NumericalError(step, f"non-finite logits at step {step}")
            t = _teacher_logits_for(teacher, batch.features, batch.index)
            bd, g = evaluate(spec, logits, t, batch.labels, sample_ids=batch.ids)
            if not math.isfinite(bd.total):
                raise NumericalError(step)
            grads = backward(params, cache, g)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)

            n = len(batch.labels)
            loss_sum += bd.total
            correct += int((argmax_rows(logits) == batch.labels).sum())
            seen += n
            if bd.tau_stats is not None:
                lo, mean, hi, c = bd.tau_stats
                tmin, tmax, tsum, clamped = min(tmin, lo), max(tmax, hi), tsum + mean * n, clamped + c
            if bd.adjustment is not None:
                misjudged += bd.adjustment.misjudged_count
            metrics.steps.append({"step": step, "epoch": epoch, **bd.to_record()})
            step += 1

        val_acc = float("nan")
        if val is not None and len(val.labels):
            val_acc = float((argmax_rows(predict(params, val.features)) == val.labels).mean())
        has_tau = math.isfinite(tmin)
        rec = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(loss_sum),
            "train_acc": correct / seen if seen else float("nan"),
            "val_acc": val_acc,
            "tau_min": tmin if has_tau else float("nan"),
            "tau_mean": tsum / seen if has_tau and seen else float("nan"),
            "tau_max": tmax if has_tau else float("nan"),
            "clamped_count": clamped,
            "misjudged_count": misjudged,
        }
        metrics.epochs.append(rec)
        log.info("epoch %d lr %.4g loss %.4f train_acc %.4f val_acc %.4f",
                 epoch, lr, rec["train_loss"], rec["train_acc"], val_acc)
    return params, metrics

