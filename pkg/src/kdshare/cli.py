"""Config-driven experiment runner.

Subcommands: gen-data, train, shkd, analyze, ablate. Configs are JSON
files (see README for the schemas); ``--out`` and ``--seed`` override
the config. All emitted CSVs are byte-reproducible for a fixed config,
and checkpoints round-trip bit-exactly.

Exit codes: 0 success, 1 config/validation error, 2 runtime or numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .autodiff import Tensor
from .checkpoint import config_hash, load_bundle, save_bundle
from .data import SyntheticSpec, generate, load_csv, save_csv
from .metrics import EmbeddingSet, model_accuracy, msc_score, pairwise_angles
from .models import Architecture, adapted_embed, embed
from .pipelines import DistillConfig, capacity_ablation, shkd_pipeline, train_student


class ConfigError(ValueError):
    """One or more config violations; message lists all of them."""


def _fail(problems: list) -> None:
    if problems:
        raise ConfigError("\n".join(f"config error: {p}" for p in problems))


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config error: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config error: {path} is not valid JSON: {exc}") from None


def _dataset_spec(d: dict, problems: list):
    required = ("kind", "num_classes", "dim", "samples_per_class", "noise_std", "seed")
    missing = [k for k in required if k not in d]
    if missing:
        problems.append(f"dataset: missing fields {missing}")
        return None
    spec = SyntheticSpec(kind=d["kind"], num_classes=int(d["num_classes"]), dim=int(d["dim"]),
                         samples_per_class=int(d["samples_per_class"]),
                         noise_std=float(d["noise_std"]), seed=int(d["seed"]))
    try:
        spec.validate()
    except ValueError as exc:
        problems.append(str(exc))
        return None
    return spec


def _load_dataset(d: dict, problems: list):
    if not isinstance(d, dict):
        problems.append("dataset: must be an object")
        return None
    if "csv" in d:
        try:
            return load_csv(d["csv"], split_seed=int(d.get("split_seed", 0)))
        except (OSError, ValueError) as exc:
            problems.append(f"dataset: {exc}")
            return None
    spec = _dataset_spec(d, problems)
    return generate(spec) if spec is not None else None


def _arch(d: dict, name: str, problems: list):
    if not isinstance(d, dict):
        problems.append(f"{name}: must be an object")
        return None
    missing = [k for k in ("input_dim", "hidden", "embedding_dim", "num_classes") if k not in d]
    if missing:
        problems.append(f"{name}: missing fields {missing}")
        return None
    return Architecture.from_dict(d)


def _train_config(d: dict, name: str, problems: list, seed_override=None):
    if not isinstance(d, dict):
        problems.append(f"{name}: must be an object")
        return None
    unknown = set(d) - set(DistillConfig.__dataclass_fields__)
    if unknown:
        problems.append(f"{name}: unknown fields {sorted(unknown)}")
        return None
    cfg = DistillConfig(**d)
    if seed_override is not None:
        cfg = replace(cfg, seed=int(seed_override))
    problems.extend(f"{name}.{p}" for p in cfg.problems())
    return cfg


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# -- subcommands -------------------------------------------------------


def cmd_gen_data(args) -> int:
    problems: list = []
    if args.config:
        cfg = _load_json(args.config)
        spec = _dataset_spec(cfg.get("dataset", cfg), problems)
    else:
        spec = _dataset_spec({
            "kind": args.kind, "num_classes": args.num_classes, "dim": args.dim,
            "samples_per_class": args.samples_per_class, "noise_std": args.noise_std,
            "seed": args.seed if args.seed is not None else 0,
        }, problems)
    if args.seed is not None and spec is not None:
        spec.seed = args.seed
    _fail(problems)
    dataset = generate(spec)
    save_csv(dataset, args.out)
    print(f"wrote {dataset.features.shape[0]} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_json(args.config)
    problems: list = []
    dataset = _load_dataset(cfg.get("dataset", {}), problems)
    arch = _arch(cfg.get("student_arch", {}), "student_arch", problems)
    train_cfg = _train_config(cfg.get("train", {}), "train", problems, seed_override=args.seed)

    teacher = None
    teacher_path = cfg.get("teacher_checkpoint")
    if train_cfg is not None and train_cfg.mode != "vanilla":
        if not teacher_path:
            problems.append(f"teacher_checkpoint: required for mode {train_cfg.mode!r}")
        else:
            try:
                teacher, _ = load_bundle(teacher_path)
            except (OSError, ValueError) as exc:
                problems.append(f"teacher_checkpoint: {exc}")
    elif train_cfg is not None and teacher_path:
        problems.append("teacher_checkpoint: not allowed for vanilla mode")
    _fail(problems)

    out_dir = args.out or cfg.get("out_dir", ".")
    seeds = cfg.get("seeds") or [train_cfg.seed]
    if args.seed is not None:
        seeds = [args.seed]
    for seed in seeds:
        run_cfg = replace(train_cfg, seed=int(seed))
        student, report = train_student(run_cfg, dataset, teacher=teacher, student_arch=arch)
        tag = f"_seed{seed}" if len(seeds) > 1 else ""
        _write(os.path.join(out_dir, f"report{tag}.csv"), report.to_csv())
        provenance = {"config_hash": config_hash(cfg), "phase": "train", "seed": int(seed)}
        save_bundle(os.path.join(out_dir, f"student{tag}.ckpt"), student, provenance)
        final = report.records[-1] if report.records else None
        acc = f", final test_acc {final.test_acc:.4f}" if final else ""
        print(f"seed {seed}: trained {run_cfg.epochs} epochs{acc}")
    return 0


def cmd_shkd(args) -> int:
    cfg = _load_json(args.config)
    problems: list = []
    dataset = _load_dataset(cfg.get("dataset", {}), problems)
    student_arch = _arch(cfg.get("student_arch", {}), "student_arch", problems)
    teacher_arch = _arch(cfg.get("teacher_arch", {}), "teacher_arch", problems)
    phases = cfg.get("phases", {})
    cfgs = {}
    for name in ("i0", "i1", "i2"):
        if name not in phases:
            problems.append(f"phases: missing phase section {name!r}")
        else:
            cfgs[name] = _train_config(phases[name], f"phases.{name}", problems,
                                       seed_override=args.seed)
    pretrained = None
    if cfg.get("pretrained_teacher"):
        try:
            pretrained, _ = load_bundle(cfg["pretrained_teacher"])
        except (OSError, ValueError) as exc:
            problems.append(f"pretrained_teacher: {exc}")
    _fail(problems)

    result = shkd_pipeline(cfgs["i0"], cfgs["i1"], cfgs["i2"], dataset,
                           student_arch, teacher_arch, pretrained_teacher=pretrained,
                           freeze_final_head=bool(cfg.get("freeze_final_head", True)))

    out_dir = args.out or cfg.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    for tag, bundle, report in (("i0", result.initial_student, result.reports[0]),
                                ("i1", result.teacher, result.reports[1]),
                                ("i2", result.student, result.reports[2])):
        save_bundle(os.path.join(out_dir, f"shkd_{tag}.ckpt"), bundle,
                    {"config_hash": chash, "phase": f"shkd-step-{tag.upper()}"})
        _write(os.path.join(out_dir, f"report_{tag}.csv"), report.to_csv())
    summary = {"head_chain_ok": result.head_chain_ok, "config_hash": chash}
    _write(os.path.join(out_dir, "summary.json"),
           json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"shkd complete, head_chain_ok={result.head_chain_ok}")
    return 0


def cmd_analyze(args) -> int:
    problems: list = []
    try:
        teacher, _ = load_bundle(args.teacher)
    except (OSError, ValueError) as exc:
        problems.append(f"teacher: {exc}")
        teacher = None
    try:
        student, _ = load_bundle(args.student)
    except (OSError, ValueError) as exc:
        problems.append(f"student: {exc}")
        student = None
    if args.dataset.endswith(".csv"):
        dataset = _load_dataset({"csv": args.dataset}, problems)
    else:
        dataset = _load_dataset(_load_json(args.dataset).get("dataset", {}), problems)
    _fail(problems)

    x_test, y_test = dataset.subset("test")
    x = Tensor(x_test)
    z_t = adapted_embed(teacher, x).data
    z_s = adapted_embed(student, x).data
    if z_t.shape != z_s.shape:
        raise ValueError(f"embedding widths differ after adapters: teacher {z_t.shape}, "
                         f"student {z_s.shape}")
    angles = pairwise_angles(z_t, z_s)

    out_dir = args.out or "."
    lines = ["index,angle_rad,angle_deg"]
    lines += [f"{i},{repr(float(a))},{repr(math.degrees(float(a)))}"
              for i, a in enumerate(angles)]
    _write(os.path.join(out_dir, "per_sample_angles.csv"), "\n".join(lines) + "\n")

    student_msc = msc_score(EmbeddingSet(embed(student, x).data, y_test))
    teacher_msc = msc_score(EmbeddingSet(embed(teacher, x).data, y_test))
    summary = [
        "mean_angle_rad,mean_angle_deg,student_msc,teacher_msc,student_test_acc,teacher_test_acc",
        ",".join(repr(float(v)) for v in (
            angles.mean(), math.degrees(angles.mean()), student_msc, teacher_msc,
            model_accuracy(student, x_test, y_test), model_accuracy(teacher, x_test, y_test))),
    ]
    _write(os.path.join(out_dir, "analysis.csv"), "\n".join(summary) + "\n")
    print(f"mean angle {angles.mean():.4f} rad, student MSC {student_msc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_json(args.config)
    problems: list = []
    dataset = _load_dataset(cfg.get("dataset", {}), problems)
    teacher_arch = _arch(cfg.get("teacher_arch", {}), "teacher_arch", problems)
    final_arch = _arch(cfg.get("final_student_arch", {}), "final_student_arch", problems)
    initial = cfg.get("initial_student_archs", [])
    if not initial:
        problems.append("initial_student_archs: need at least one architecture")
    archs = [a for i, d in enumerate(initial)
             if (a := _arch(d, f"initial_student_archs[{i}]", problems)) is not None]
    phases = cfg.get("phases", {})
    cfgs = {}
    for name in ("i0", "i1", "i2"):
        if name not in phases:
            problems.append(f"phases: missing phase section {name!r}")
        else:
            cfgs[name] = _train_config(phases[name], f"phases.{name}", problems,
                                       seed_override=args.seed)
    _fail(problems)

    rows = capacity_ablation(archs, teacher_arch, final_arch, dataset,
                             cfgs["i0"], cfgs["i1"], cfgs["i2"])
    lines = ["initial_arch,teacher_test_acc,final_student_test_acc"]
    for row in rows:
        a = row["initial_arch"]
        desc = "x".join(str(h) for h in a["hidden"]) + f"-emb{a['embedding_dim']}"
        lines.append(f"{desc},{repr(row['teacher_test_acc'])},"
                     f"{repr(row['final_student_test_acc'])}")
    out_dir = args.out or cfg.get("out_dir", ".")
    _write(os.path.join(out_dir, "ablation.csv"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# -- entry point -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdshare",
                                     description="Classifier-sharing knowledge distillation runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("config", nargs="?", help="JSON config with a 'dataset' section")
    p.add_argument("--kind", default="gaussian_blobs")
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--noise-std", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("shkd", help="run the three-phase shared-head pipeline")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_shkd)

    p = sub.add_parser("analyze", help="angle/MSC analysis of two checkpoints")
    p.add_argument("teacher")
    p.add_argument("student")
    p.add_argument("dataset", help="dataset CSV or JSON config with a 'dataset' section")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="initial-student capacity ablation")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
