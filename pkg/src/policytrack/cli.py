"""Command-line interface.

Subcommands cover the full loop: ``gen`` renders a synthetic dataset,
``warmup`` runs the regression stage, ``train`` runs the reward stage from a
warmup checkpoint, ``ablate`` sweeps named variants, ``track`` produces
per-sequence result files, and ``eval`` scores them.

Every run directory gets a ``manifest.txt`` holding the command, arguments,
and the full flat config — rerunning with the same manifest inputs
reproduces outputs byte-for-byte (no timestamps anywhere). Exit codes:
0 success, 1 usage, 2 bad data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import metrics, synthworld, train, tracker
from .errors import DataError, NumericalError
from .model import create_model, load_checkpoint, save_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _default_out(leaf: str) -> str:
    return os.path.join(os.environ.get("POLICYTRACK_OUT", "runs"), leaf)


def _parse_sets(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise _UsageError(f"--set expects key=value, got {pair!r}")
        out[key] = value
    return out


def write_manifest(path, command: str, args: dict, config_lines=None) -> None:
    lines = [f"command={command}"]
    lines += [f"arg.{k}={v}" for k, v in sorted(args.items())]
    if config_lines:
        lines += [f"config.{line}" for line in config_lines]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="policytrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a synthetic dataset split")
    p.add_argument("--root", required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "shifted_test"))
    p.add_argument("--sequences", type=int, default=16)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distractors", type=int, default=2)
    p.add_argument("--occlusion-prob", type=float, default=0.5)

    p = sub.add_parser("warmup", help="stage one: regression training")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("train", help="stage two: reward training from a warmup checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--warmup", required=True, help="warmup checkpoint path")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--algorithm", choices=train.ALGORITHMS, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("ablate", help="train and score named variants")
    p.add_argument("--data", required=True)
    p.add_argument("--warmup", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--split", default="shifted_test")
    p.add_argument(
        "--variants",
        nargs="+",
        default=sorted(train.VARIANTS) + list(train.PRIOR_VARIANTS),
    )
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("track", help="run a checkpoint over a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--policy", choices=tracker.POLICIES, default="argmax")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="score result files against annotations")
    p.add_argument("--results", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--svg", default=None)
    return parser


def _make_config(set_pairs, model_cfg=None, extra=None) -> train.TrainConfig:
    cfg = train.TrainConfig() if model_cfg is None else train.TrainConfig(model=model_cfg)
    overrides = dict(extra or {})
    overrides.update(_parse_sets(set_pairs))
    if overrides:
        try:
            cfg = train.apply_overrides(cfg, overrides)
        except ValueError as exc:
            raise _UsageError(str(exc)) from exc
    return cfg


def _cmd_gen(args) -> int:
    dirs = synthworld.make_dataset(
        args.root,
        args.split,
        args.sequences,
        num_frames=args.frames,
        seed=args.seed,
        num_distractors=args.distractors,
        occlusion_prob=args.occlusion_prob,
    )
    write_manifest(
        os.path.join(args.root, args.split, "manifest.txt"),
        "gen",
        {
            "split": args.split,
            "sequences": args.sequences,
            "frames": args.frames,
            "seed": args.seed,
            "distractors": args.distractors,
            "occlusion_prob": args.occlusion_prob,
        },
    )
    print(f"wrote {len(dirs)} sequences under {os.path.join(args.root, args.split)}")
    return 0


def _cmd_warmup(args) -> int:
    out_dir = args.out_dir or _default_out("warmup")
    os.makedirs(out_dir, exist_ok=True)
    cfg = _make_config(args.set)
    seqs = train.load_training_split(args.data, "train")
    model = create_model(cfg.model, seed=cfg.seed)
    train.run_warmup(model, seqs, cfg, log_path=os.path.join(out_dir, "log.csv"))
    ckpt = os.path.join(out_dir, "warmup.ckpt")
    save_checkpoint(model, ckpt)
    train.save_config(cfg, os.path.join(out_dir, "config.txt"))
    write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "warmup",
        {"data": args.data},
        train.config_to_lines(cfg),
    )
    print(f"warmup checkpoint: {ckpt}")
    return 0


def _cmd_train(args) -> int:
    out_dir = args.out_dir or _default_out("train")
    os.makedirs(out_dir, exist_ok=True)
    model = load_checkpoint(args.warmup)
    extra = {"algorithm": args.algorithm} if args.algorithm else None
    cfg = _make_config(args.set, model_cfg=model.cfg, extra=extra)
    seqs = train.load_training_split(args.data, "train")
    train.run_rl(model, seqs, cfg, log_path=os.path.join(out_dir, "log.csv"))
    ckpt = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(model, ckpt)
    train.save_config(cfg, os.path.join(out_dir, "config.txt"))
    write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "train",
        {"data": args.data, "warmup": args.warmup},
        train.config_to_lines(cfg),
    )
    print(f"trained checkpoint: {ckpt}")
    return 0


def _track_split(model, data_root, split, out_dir, policy="argmax", seed=0, factors=(2.0, 4.0)):
    seqs = synthworld.load_split(data_root, split)
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for seq in seqs:
        boxes = tracker.track_sequence(
            model,
            seq,
            template_factor=factors[0],
            search_factor=factors[1],
            policy=policy,
            seed=seed,
        )
        with open(os.path.join(out_dir, f"{seq.name}.txt"), "w") as fh:
            for line in synthworld.groundtruth_lines(boxes):
                fh.write(line + "\n")
        names.append(seq.name)
    return names


def _cmd_track(args) -> int:
    out_dir = args.out_dir or _default_out("results")
    model = load_checkpoint(args.checkpoint)
    names = _track_split(model, args.data, args.split, out_dir, args.policy, args.seed)
    write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "track",
        {
            "checkpoint": args.checkpoint,
            "data": args.data,
            "split": args.split,
            "policy": args.policy,
            "seed": args.seed,
        },
    )
    print(f"tracked {len(names)} sequences -> {out_dir}")
    return 0


def _evaluate_dir(results_dir, data_root, split):
    seqs = synthworld.load_split(data_root, split)
    results, gts, absent = {}, {}, {}
    warnings = 0
    for seq in seqs:
        path = os.path.join(results_dir, f"{seq.name}.txt")
        if not os.path.exists(path):
            raise DataError(f"missing result file {path}")
        boxes, warn = synthworld.parse_groundtruth(path)
        warnings += warn + seq.parse_warnings
        results[seq.name] = boxes
        gts[seq.name] = seq.boxes
        absent[seq.name] = seq.absent
    report = metrics.evaluate_sequences(results, gts, absent)
    report.parse_warnings = warnings
    return report


def _cmd_eval(args) -> int:
    report = _evaluate_dir(args.results, args.data, args.split)
    text = report.as_text()
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    if args.csv:
        metrics.write_success_csv(report.curve, args.csv)
    if args.svg:
        metrics.write_success_svg(report.curve, args.svg, title=f"Success ({args.split})")
    return 0


def _cmd_ablate(args) -> int:
    out_dir = args.out_dir or _default_out("ablate")
    os.makedirs(out_dir, exist_ok=True)
    base_sets = _parse_sets(args.set)
    seqs = train.load_training_split(args.data, "train")
    rows = []
    for variant in args.variants:
        if variant not in train.VARIANTS and variant not in train.PRIOR_VARIANTS:
            raise _UsageError(f"unknown variant {variant!r}")
        vdir = os.path.join(out_dir, variant)
        os.makedirs(vdir, exist_ok=True)
        model = load_checkpoint(args.warmup)
        overrides = dict(base_sets)
        if variant in train.VARIANTS:
            overrides.update(train.VARIANTS[variant])
        cfg = _make_config(None, model_cfg=model.cfg, extra=overrides)
        log_path = os.path.join(vdir, "log.csv")
        if variant in train.PRIOR_VARIANTS:
            kind = variant.split("_")[0]
            train.run_heatmap_baseline(model, seqs, cfg, log_path=log_path, kind=kind)
        else:
            train.run_rl(model, seqs, cfg, log_path=log_path)
        save_checkpoint(model, os.path.join(vdir, "model.ckpt"))
        train.save_config(cfg, os.path.join(vdir, "config.txt"))
        _track_split(model, args.data, args.split, os.path.join(vdir, "results"))
        report = _evaluate_dir(os.path.join(vdir, "results"), args.data, args.split)
        rows.append((variant, report))
        print(f"{variant}: auc={report.auc:.4f} ao={report.ao:.4f}")
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write("variant,auc,precision,norm_precision,ao,sr_05,sr_075\n")
        for variant, rep in rows:
            fh.write(
                f"{variant},{rep.auc:.6f},{rep.precision:.6f},{rep.norm_precision:.6f},"
                f"{rep.ao:.6f},{rep.sr_05:.6f},{rep.sr_075:.6f}\n"
            )
    write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "ablate",
        {
            "data": args.data,
            "warmup": args.warmup,
            "split": args.split,
            "variants": " ".join(args.variants),
        },
    )
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "warmup": _cmd_warmup,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "track": _cmd_track,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
