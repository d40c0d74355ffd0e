"""``kd-toolkit`` command line.

Subcommands: ``gen-data``, ``train-teacher``, ``distill``, ``eval``.
Exit codes: 0 ok, 2 usage/config error, 3 I/O error, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .analysis import accuracy, evaluate_logits
from .data import SPLITS, filter_misjudged, gen_synthetic, load_csv_dataset
from .formats import (CorruptFileError, load_checkpoint, load_dataset, load_teacher_logits,
                      save_checkpoint, save_dataset, write_logits)
from .losses import DistillSpec
from .nn import NumericalError, init_params, mlp_dims, predict, train

log = logging.getLogger("kd_toolkit")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# flag dest -> config key
FLAG_KEYS = {
    "seed": "run.seed",
    "k": "data.k",
    "n_per_class": "data.n_per_class",
    "d": "data.d",
    "spread": "data.spread",
    "csv": "data.csv",
    "data": "paths.data_dir",
    "teacher": "paths.teacher_dir",
    "out": "paths.out_dir",
    "teacher_hidden": "model.teacher_hidden",
    "student_hidden": "model.student_hidden",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr0": "train.lr0",
    "schedule": "train.schedule",
    "spec": "loss.spec",
    "tau": "loss.tau",
    "alpha": "loss.alpha",
    "baseline2": "loss.baseline2",
    "adjust": "ka.adjust",
    "epsilon": "ka.epsilon",
    "weights": "dtd.weights",
    "gamma": "dtd.gamma",
    "tau0": "dtd.tau0",
    "beta": "dtd.beta",
    "tau_min": "dtd.tau_min",
    "split": "eval.split",
    "thresholds": "eval.thresholds",
}

# flags that only make sense for some loss kinds
FLAG_KINDS = {
    "tau": ("kd", "ka"),
    "alpha": ("kd", "dtd"),
    "adjust": ("ka", "dtd-ka"),
    "epsilon": ("ka", "dtd-ka"),
    "weights": ("dtd", "dtd-ka"),
    "gamma": ("dtd", "dtd-ka"),
    "tau0": ("dtd", "dtd-ka"),
    "beta": ("dtd", "dtd-ka"),
    "tau_min": ("dtd", "dtd-ka"),
}


def _setup_logging():
    level = os.environ.get("KD_TOOLKIT_LOG", "info").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"KD_TOOLKIT_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    # per-epoch training logs only at debug
    logging.getLogger("kd_toolkit.nn").setLevel(logging.DEBUG if level == "debug" else logging.WARNING)


def resolve_config(args) -> dict:
    cfg = C.defaults()
    if args.config:
        cfg = C.load(args.config, cfg)
    for item in args.set or []:
        if "=" not in item:
            raise C.ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        C.set_key(cfg, key.strip(), value.strip())
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            C.set_key(cfg, key, value)
    return cfg


def _ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_splits(data_dir) -> dict:
    return {s: load_dataset(data_dir, s) for s in SPLITS}


def cmd_gen_data(args, cfg) -> int:
    seed = cfg["run.seed"]
    if cfg["data.csv"]:
        full = load_csv_dataset(cfg["data.csv"])
        perm = np.random.Generator(np.random.Philox(key=[seed, 0xDA7A])).permutation(len(full))
        n_train, n_val = int(round(0.7 * len(full))), int(round(0.15 * len(full)))
        parts = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val], "test": perm[n_train + n_val:]}
        splits = {}
        for name, idx in parts.items():
            ds = full.subset(idx)
            ds.split_tag, ds.ids = name, np.arange(len(idx))
            splits[name] = ds
    else:
        try:
            splits = gen_synthetic(cfg["data.n_per_class"], cfg["data.k"], cfg["data.d"], cfg["data.spread"], seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    out = _ensure_dir(cfg["paths.out_dir"] if args.out is not None else cfg["paths.data_dir"])
    for name, ds in splits.items():
        save_dataset(ds, out, name)
        print(f"{name}: {len(ds)} samples, d={ds.d}, k={ds.k}")
    return 0


def cmd_train_teacher(args, cfg) -> int:
    seed = cfg["run.seed"]
    splits = _load_splits(cfg["paths.data_dir"])
    tr = splits["train"]
    dims = mlp_dims(tr.d, cfg["model.teacher_hidden"], tr.k)
    params = init_params(dims, C.derive_seed(seed, "teacher-init"), "teacher-" + "x".join(map(str, dims)))
    tcfg = C.train_config(cfg, "teacher", DistillSpec("ce"), C.derive_seed(seed, "teacher-shuffle"))
    teacher, metrics = train(None, params, tr, tcfg, splits["val"])
    out = _ensure_dir(cfg["paths.out_dir"] if args.out is not None else cfg["paths.teacher_dir"])
    save_checkpoint(teacher, out / "teacher.kdck")
    metrics.to_csv(out / "teacher_metrics.csv")
    for name, ds in splits.items():
        logits = predict(teacher, ds.features)
        write_logits(out / f"{name}.tlgt", logits)
        print(f"teacher {name} accuracy {accuracy(logits, ds.labels):.4f}")
    return 0


def _teacher_logits(teacher_dir, split: str, dataset):
    """Teacher logits for ``split``: from ``<split>.tlgt`` if present, else the checkpoint."""
    p = Path(teacher_dir)
    if p.is_file():
        return predict(load_checkpoint(p), dataset.features)
    tl = p / f"{split}.tlgt"
    if tl.exists():
        logits = load_teacher_logits(tl)
        if logits.shape != (len(dataset), dataset.k):
            raise CorruptFileError(f"{tl}: shape {logits.shape} does not match dataset ({len(dataset)}, {dataset.k})")
        return logits
    ck = p / "teacher.kdck"
    if ck.exists():
        return predict(load_checkpoint(ck), dataset.features)
    raise FileNotFoundError(f"no teacher logits or checkpoint under {p}")


def _check_flag_combos(args, spec: str):
    for dest, kinds in FLAG_KINDS.items():
        if getattr(args, dest, None) is not None and spec not in kinds:
            flag = "--" + dest.replace("_", "-")
            raise UsageError(f"{flag} is not valid with --spec {spec} (allowed for: {', '.join(kinds)})")
    if getattr(args, "epsilon", None) is not None and (args.adjust or "").lower() != "lsr":
        raise UsageError("--epsilon requires --adjust lsr")


def run_distill(cfg: dict, seed: int, out_dir) -> dict:
    """One distillation run; writes checkpoint and metrics into ``out_dir``."""
    spec = C.distill_spec(cfg)
    splits = _load_splits(cfg["paths.data_dir"])
    tr, va = splits["train"], splits["val"]
    teacher = None
    removed = 0
    if spec.needs_teacher or cfg["loss.baseline2"]:
        teacher = _teacher_logits(cfg["paths.teacher_dir"], "train", tr)
    if cfg["loss.baseline2"]:
        kept, removed = filter_misjudged(tr, teacher)
        teacher = teacher[np.searchsorted(tr.ids, kept.ids)]
        tr = kept
        log.info("baseline2: removed %d misjudged training samples", removed)
    if not spec.needs_teacher:
        teacher = None
    dims = mlp_dims(tr.d, cfg["model.student_hidden"], tr.k)
    params = init_params(dims, C.derive_seed(seed, "student-init"), "student-" + "x".join(map(str, dims)))
    tcfg = C.train_config(cfg, "train", spec, C.derive_seed(seed, "student-shuffle"))
    student, metrics = train(teacher, params, tr, tcfg, va)
    out = _ensure_dir(out_dir)
    save_checkpoint(student, out / "student.kdck")
    metrics.to_csv(out / "metrics.csv")
    metrics.steps_to_csv(out / "steps.csv")
    (out / "config.txt").write_text(C.dump({**cfg, "run.seed": seed}))
    last = metrics.epochs[-1] if metrics.epochs else {}
    return {"seed": seed, "val_acc": last.get("val_acc", float("nan")),
            "train_acc": last.get("train_acc", float("nan")), "removed": removed,
            "train_size": len(tr)}


def _run_distill_job(job):
    cfg, seed, out = job
    try:
        return run_distill(cfg, seed, out)
    except NumericalError as exc:
        return {"seed": seed, "error": "numeric", "step": exc.step}


def cmd_distill(args, cfg) -> int:
    _check_flag_combos(args, cfg["loss.spec"])
    C.distill_spec(cfg)
    seeds = list(C._ints(args.seeds)) if args.seeds else [cfg["run.seed"]]
    out = Path(cfg["paths.out_dir"])
    if len(seeds) == 1:
        res = run_distill(cfg, seeds[0], out)
        if cfg["loss.baseline2"]:
            print(f"baseline2: removed {res['removed']} misjudged samples, {res['train_size']} remain")
        print(f"student val accuracy {res['val_acc']:.4f}")
        return 0

    jobs = [(cfg, s, out / f"seed_{s}") for s in seeds]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_distill_job, jobs))
    else:
        results = [_run_distill_job(j) for j in jobs]
    for r in results:
        if "error" in r:
            raise NumericalError(r["step"], f"seed {r['seed']}: non-finite loss at step {r['step']}")
    print("seed,val_acc,train_acc")
    for r in results:
        print(f"{r['seed']},{r['val_acc']:.4f},{r['train_acc']:.4f}")
    print(f"median val accuracy {statistics.median(r['val_acc'] for r in results):.4f}")
    return 0


def cmd_eval(args, cfg) -> int:
    split = cfg["eval.split"]
    if split not in SPLITS:
        raise UsageError(f"--split must be one of {SPLITS}")
    if not args.student:
        raise UsageError("--student is required")
    ds = load_dataset(cfg["paths.data_dir"], split)
    student = load_checkpoint(args.student)
    s_logits = predict(student, ds.features)
    t_logits = _teacher_logits(cfg["paths.teacher_dir"], split, ds)
    n = cfg["eval.thresholds"]
    if n < 1:
        raise UsageError("--thresholds must be >= 1")
    thresholds = np.round(np.linspace(1.0 / n, 1.0, n), 10)
    report = evaluate_logits(s_logits, t_logits, ds.labels, thresholds)
    out = _ensure_dir(cfg["paths.out_dir"])
    report.to_csv(out / f"eval_{split}.csv")
    report.curve_to_csv(out / f"top2_{split}.csv")
    print(report.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kd-toolkit", description="Knowledge distillation with adjusted targets "
                                "and per-sample temperatures.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--print-config", action="store_true", help="echo the effective config and continue")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--out", help="output directory")

    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate synthetic blob splits")
    g.add_argument("--k", type=int)
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--spread", type=float)
    g.add_argument("--csv", help="import this CSV (d feature columns + 'label') instead of generating")

    t = sub.add_parser("train-teacher", parents=[common], help="train the teacher and export its logits")
    t.add_argument("--teacher-hidden", help="comma-separated hidden widths")

    d = sub.add_parser("distill", parents=[common], help="train a student")
    d.add_argument("--teacher", help="teacher directory (logit files) or checkpoint")
    d.add_argument("--spec", choices=["ce", "kd", "ka", "dtd", "dtd-ka"])
    d.add_argument("--adjust", choices=["none", "lsr", "ps"])
    d.add_argument("--weights", choices=["flsw", "cwsm"])
    d.add_argument("--gamma", type=float)
    d.add_argument("--tau0", type=float)
    d.add_argument("--beta", type=float)
    d.add_argument("--tau-min", type=float)
    d.add_argument("--alpha", type=float)
    d.add_argument("--tau", type=float)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--baseline2", action="store_const", const=True, default=None,
                   help="drop training samples the teacher misclassifies")
    d.add_argument("--student-hidden", help="comma-separated hidden widths")
    d.add_argument("--epochs", type=int)
    d.add_argument("--batch-size", type=int)
    d.add_argument("--lr0", type=float)
    d.add_argument("--schedule", choices=["step", "cosine"])
    d.add_argument("--seeds", help="comma-separated seeds for a multi-seed sweep")
    d.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")

    e = sub.add_parser("eval", parents=[common], help="genetic errors and top-2 gap curve")
    e.add_argument("--student", help="student checkpoint")
    e.add_argument("--teacher", help="teacher directory (logit files) or checkpoint")
    e.add_argument("--split", choices=list(SPLITS))
    e.add_argument("--thresholds", type=int, help="number of evenly spaced thresholds in (0, 1]")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train-teacher": cmd_train_teacher, "distill": cmd_distill, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        _setup_logging()
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(C.dump(cfg))
        return COMMANDS[args.command](args, cfg)
    except (C.ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: numerical failure: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CorruptFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
