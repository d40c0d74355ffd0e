"""Multi-seed teacher/student comparison on synthetic blobs.

One seed generates data, trains a cross-entropy teacher, then trains one
student per loss spec on the teacher's training-set logits. Students are
scored on the validation split.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

from . import config as C
from .analysis import accuracy, genetic_errors
from .data import gen_synthetic
from .losses import DistillSpec
from .nn import init_params, mlp_dims, predict, train


@dataclass
class SeedResult:
    seed: int
    teacher_val_acc: float
    val_acc: dict[str, float] = field(default_factory=dict)
    genetic: dict[str, tuple[int, int, float]] = field(default_factory=dict)


def run_seed(cfg: dict, seed: int, specs: dict[str, DistillSpec]) -> SeedResult:
    splits = gen_synthetic(cfg["data.n_per_class"], cfg["data.k"], cfg["data.d"], cfg["data.spread"], seed)
    tr, va = splits["train"], splits["val"]

    t_dims = mlp_dims(tr.d, cfg["model.teacher_hidden"], tr.k)
    t_init = init_params(t_dims, C.derive_seed(seed, "teacher-init"))
    t_cfg = C.train_config(cfg, "teacher", DistillSpec("ce"), C.derive_seed(seed, "teacher-shuffle"))
    teacher, _ = train(None, t_init, tr, t_cfg)
    t_train, t_val = predict(teacher, tr.features), predict(teacher, va.features)
    res = SeedResult(seed, accuracy(t_val, va.labels))

    s_dims = mlp_dims(tr.d, cfg["model.student_hidden"], tr.k)
    for name, spec in specs.items():
        s_init = init_params(s_dims, C.derive_seed(seed, "student-init"))
        s_cfg = C.train_config(cfg, "train", spec, C.derive_seed(seed, "student-shuffle"))
        student, _ = train(t_train, s_init, tr, s_cfg)
        s_val = predict(student, va.features)
        res.val_acc[name] = accuracy(s_val, va.labels)
        res.genetic[name] = genetic_errors(s_val, t_val, va.labels)
    return res


def medians(results: list[SeedResult]) -> dict[str, dict[str, float]]:
    names = results[0].val_acc
    return {
        name: {
            "val_acc": statistics.median(r.val_acc[name] for r in results),
            "genetic_ratio": statistics.median(r.genetic[name][2] for r in results),
        }
        for name in names
    }


def format_table(results: list[SeedResult]) -> str:
    names = list(results[0].val_acc)
    head = ["seed", "teacher"] + [f"{n}_acc" for n in names] + [f"{n}_genetic" for n in names]
    lines = [" ".join(f"{h:>18}" for h in head)]
    for r in results:
        cells = [str(r.seed), f"{r.teacher_val_acc:.4f}"]
        cells += [f"{r.val_acc[n]:.4f}" for n in names]
        cells += [f"{g}/{t}={100 * p:.2f}%" for g, t, p in (r.genetic[n] for n in names)]
        lines.append(" ".join(f"{c:>18}" for c in cells))
    med = medians(results)
    cells = ["median", f"{statistics.median(r.teacher_val_acc for r in results):.4f}"]
    cells += [f"{med[n]['val_acc']:.4f}" for n in names]
    cells += [f"{100 * med[n]['genetic_ratio']:.2f}%" for n in names]
    lines.append(" ".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)
