"""Flat ``section.key = value`` run configuration.

Config files are plain text, one assignment per line; ``#`` starts a comment.
Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .adjustment import AdjustmentMode
from .dynamic_temperature import DtdConfig
from .losses import KINDS, DistillSpec
from .nn import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(int(x) for x in s)
    s = str(s).strip()
    return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_str(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none") else s


# key -> (parser, default)
SCHEMA = {
    "run.seed": (int, 1),
    "data.k": (int, 10),
    "data.n_per_class": (int, 500),
    "data.d": (int, 32),
    "data.spread": (float, 0.9),
    "data.csv": (_opt_str, None),
    "model.teacher_hidden": (_ints, (256, 256)),
    "model.student_hidden": (_ints, (32,)),
    "teacher.epochs": (int, 60),
    "teacher.batch_size": (int, 128),
    "teacher.lr0": (float, 0.001),
    "teacher.momentum": (float, 0.9),
    "teacher.weight_decay": (float, 0.5),
    "teacher.schedule": (str, "step"),
    "teacher.milestones": (_ints, (30, 45)),
    "teacher.factor": (float, 0.1),
    "train.epochs": (int, 60),
    "train.batch_size": (int, 128),
    "train.lr0": (float, 0.002),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 5e-4),
    "train.schedule": (str, "step"),
    "train.milestones": (_ints, (30, 45)),
    "train.factor": (float, 0.1),
    "loss.spec": (str, "kd"),
    "loss.tau": (float, 4.0),
    "loss.alpha": (float, 0.7),
    "loss.baseline2": (_bool, False),
    "ka.adjust": (_opt_str, None),
    "ka.epsilon": (float, 0.985),
    "dtd.weights": (str, "flsw"),
    "dtd.gamma": (float, 1.0),
    "dtd.tau0": (float, 10.0),
    "dtd.beta": (float, 40.0),
    "dtd.tau_min": (float, 3.0),
    "paths.data_dir": (str, "data"),
    "paths.teacher_dir": (str, "teacher"),
    "paths.out_dir": (str, "run"),
    "eval.split": (str, "val"),
    "eval.thresholds": (int, 20),
}


def defaults() -> dict:
    return {k: d for k, (_, d) in SCHEMA.items()}


def set_key(cfg: dict, key: str, value) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        cfg[key] = parser(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc


def parse_text(text: str, cfg: dict | None = None) -> dict:
    cfg = defaults() if cfg is None else cfg
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        set_key(cfg, key, value)
    return cfg


def load(path, cfg: dict | None = None) -> dict:
    return parse_text(Path(path).read_text(), cfg)


def dump(cfg: dict) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(map(str, v))
        if v is None:
            return "none"
        return str(v).lower() if isinstance(v, bool) else str(v)

    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in SCHEMA)


def derive_seed(seed: int, purpose: str) -> int:
    """Independent sub-seed for one use of the run seed."""
    h = hashlib.blake2b(f"{seed}:{purpose}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def distill_spec(cfg: dict) -> DistillSpec:
    kind = cfg["loss.spec"]
    if kind not in KINDS:
        raise ConfigError(f"loss.spec must be one of {KINDS}, got {kind!r}")
    try:
        adjust = AdjustmentMode.parse(cfg["ka.adjust"], cfg["ka.epsilon"]) if kind in ("ka", "dtd-ka") else AdjustmentMode()
        dtd = DtdConfig(cfg["dtd.weights"], cfg["dtd.gamma"], cfg["dtd.tau0"], cfg["dtd.beta"], cfg["dtd.tau_min"])
        return DistillSpec(kind, cfg["loss.tau"], cfg["loss.alpha"], adjust, dtd)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: dict, section: str, spec: DistillSpec, seed: int) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=cfg[f"{section}.epochs"],
            batch_size=cfg[f"{section}.batch_size"],
            lr0=cfg[f"{section}.lr0"],
            momentum=cfg[f"{section}.momentum"],
            weight_decay=cfg[f"{section}.weight_decay"],
            schedule=cfg[f"{section}.schedule"],
            milestones=cfg[f"{section}.milestones"],
            factor=cfg[f"{section}.factor"],
            seed=seed,
            loss_spec=spec,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
