"""Command-line entry point: ``skyfuse <command> [options]``.

Commands: synth, preprocess, report, train, evaluate, profile, infer, run.
Exit codes: 0 success, 2 usage/parameter errors, 3 I/O or format errors,
4 numeric divergence. Failures print one line to stderr:
``error kind=<kind> exit=<code> message=<text>``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, load_config, parse_split
from .errors import ArtifactIOError, InputError, SkyfuseError
from .metrics import format_metrics, macro_metrics
from .model import load_checkpoint, predict_proba, save_checkpoint
from .pipeline import (SPLIT_NAMES, SplitSpec, load_records, load_split, run_pipeline, synth_dataset,
                       write_dataset, write_outputs)
from .profiling import profile
from .stats import ReplicationReport
from .tensorkit import container
from .training import SchedulerState, evaluate, train, write_history

log = logging.getLogger("skyfuse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", 2, message)


def _fail(kind: str, code: int, message: str):
    text = " ".join(str(message).split())
    print(f"error kind={kind} exit={code} message={text}", file=sys.stderr)
    raise SystemExit(code)


def _common(p: argparse.ArgumentParser, *groups: str) -> None:
    p.add_argument("--config", help="JSON run configuration (flags override it)")
    p.add_argument("--seed", type=int, help="global seed; stage seeds are derived from it")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    if "synth" in groups:
        p.add_argument("--per-class", type=int, dest="per_class", help="samples per class per modality")
    if "prep" in groups:
        p.add_argument("--replication-target", type=int, dest="replication_target", help="samples per modality T")
        p.add_argument("--split", help="train,val,test fractions, e.g. 0.55,0.25,0.20")
        p.add_argument("--video-cap", type=int, dest="video_cap")
        p.add_argument("--bins", type=int)
    if "train" in groups:
        p.add_argument("--model", choices=sorted(PRESETS), help="model size preset")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float)
        p.add_argument("--max-steps", type=int, dest="max_steps")
        p.add_argument("--patience", type=int, dest="stop_patience", help="early-stopping patience in epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skyfuse", description="Multimodal aerial-object classification pipeline")
    parser.add_argument("--version", action="version", version=f"skyfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a deterministic synthetic dataset")
    _common(p, "synth")

    p = sub.add_parser("preprocess", help="features, replication, z-score, fusion and split")
    p.add_argument("--in", dest="input", help="dataset directory (audio/ video_ir/ video_rgb/ radar/)")
    _common(p, "prep")

    p = sub.add_parser("report", help="print a saved replication report")
    p.add_argument("--data", help="preprocessed directory")
    _common(p)

    p = sub.add_parser("train", help="train a model on preprocessed splits")
    p.add_argument("--data", help="preprocessed directory")
    _common(p, "train")

    p = sub.add_parser("evaluate", help="confusion matrix and macro metrics on a split")
    p.add_argument("--data", help="preprocessed directory")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--on", default="test", choices=SPLIT_NAMES, help="split to evaluate")
    _common(p)

    p = sub.add_parser("profile", help="parameters, FLOPs and throughput")
    p.add_argument("--checkpoint", help="checkpoint directory (default: fresh model from --model)")
    p.add_argument("--model", choices=sorted(PRESETS))
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=10)
    _common(p)

    p = sub.add_parser("infer", help="class probabilities for one stored sample")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--input", help="SKYF container holding (1000,128) or (N,1000,128) features")
    p.add_argument("--index", type=int, default=0, help="sample index for batched containers")
    _common(p)

    p = sub.add_parser("run", help="synth -> preprocess -> train -> evaluate in one output directory")
    _common(p, "synth", "prep", "train")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < ``--config`` file < explicit flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {"command": args.command}
    for key in ("seed", "out", "per_class", "replication_target", "video_cap", "bins", "epochs", "batch_size",
                "max_steps", "stop_patience", "input", "data", "checkpoint"):
        val = getattr(args, key, None)
        if val is not None:
            updates[key] = val
    if getattr(args, "split", None):
        updates["split"] = parse_split(args.split)
    if getattr(args, "model", None):
        updates["model"] = PRESETS[args.model]
    cfg = replace(cfg, **updates)
    if getattr(args, "lr", None) is not None:
        cfg = replace(cfg, optimizer=replace(cfg.optimizer, learning_rate=args.lr))
    return cfg


def _require(value: str, flag: str) -> Path:
    if not value:
        raise InputError(f"{flag} is required (pass it as a flag or in the config file)")
    return Path(value)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e


def cmd_synth(cfg: RunConfig) -> Path:
    out = _require(cfg.out, "--out")
    records = synth_dataset(per_class=cfg.per_class, seed=cfg.stage("synth"))
    write_dataset(records, out)
    print(f"wrote {sum(len(v) for v in records.values())} files for {cfg.per_class} per class to {out}")
    return out


def cmd_preprocess(cfg: RunConfig) -> Path:
    src = _require(cfg.input, "--in")
    out = _require(cfg.out, "--out")
    spec = SplitSpec(*cfg.split, seed=cfg.stage("split"))
    result = run_pipeline(load_records(src), target=cfg.replication_target, split=spec,
                          video_cap=cfg.video_cap, bins=cfg.bins)
    write_outputs(result, out)
    _write_text(out / "run_config.json", cfg.to_json())
    sizes = "/".join(str(len(s)) for s in result.splits)
    print(f"fused {tuple(result.dataset.x.shape)}; split train/val/test = {sizes}")
    print(result.report.to_human())
    return out


def cmd_report(cfg: RunConfig) -> None:
    data = _require(cfg.data, "--data")
    path = data / "replication_report.ini"
    if not path.is_file():
        raise ArtifactIOError(f"no replication report in {data}; run `skyfuse preprocess` first")
    print(ReplicationReport.load(path).to_human())


def cmd_train(cfg: RunConfig) -> Path:
    data = _require(cfg.data, "--data")
    out = _require(cfg.out, "--out")
    train_ds, val_ds = load_split(data, "train"), load_split(data, "val")
    sched = SchedulerState(lr=cfg.optimizer.learning_rate, patience=cfg.scheduler_patience,
                           factor=cfg.scheduler_factor)
    result = train(cfg.model, train_ds, val_ds, cfg.optimizer, sched, stop_patience=cfg.stop_patience,
                   epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.stage("train"), max_steps=cfg.max_steps)
    save_checkpoint(out, result.params, cfg.model)
    write_history(out / "history.tsv", result.history)
    _write_text(out / "run_config.json", cfg.to_json())
    last = result.history[-1] if result.history else {}
    print(f"trained {len(result.history)} epochs ({result.steps} steps); best epoch {result.best_epoch}; "
          f"final train_acc {last.get('train_acc', float('nan')):.4f}; "
          f"best val_acc {max((r['val_acc'] for r in result.history), default=float('nan')):.4f}")
    print(f"checkpoint written to {out}")
    return out


def cmd_evaluate(cfg: RunConfig, split: str = "test") -> dict:
    data = _require(cfg.data, "--data")
    ckpt = _require(cfg.checkpoint, "--checkpoint")
    ds = load_split(data, split)
    params, mcfg = load_checkpoint(ckpt)
    cm = evaluate(params, ds, mcfg)
    m = macro_metrics(cm)
    print(f"Confusion matrix ({split}, rows = true class, columns = predicted)")
    print(cm.format(ds.class_names))
    print()
    print(format_metrics(m))
    if cfg.out:
        out = Path(cfg.out)
        _write_text(out / "metrics.json", json.dumps(m, indent=2, sort_keys=True) + "\n")
        _write_text(out / "confusion.tsv", "\t".join(ds.class_names) + "\n"
                    + "".join("\t".join(str(v) for v in row) + "\n" for row in cm.counts))
    return m


def cmd_profile(cfg: RunConfig, batch: int, warmup: int, iters: int) -> None:
    if cfg.checkpoint:
        params, mcfg = load_checkpoint(cfg.checkpoint)
    else:
        from .model import init_params

        mcfg = cfg.model
        params = init_params(mcfg, cfg.stage("init"))
    rep = profile(params, mcfg, batch=batch, warmup=warmup, iters=iters, seed=cfg.stage("profile"))
    print(rep.summary())
    if cfg.out:
        out = Path(cfg.out)
        _write_text(out / "profile.ini", rep.to_text())
        _write_text(out / "profile.tsv", rep.to_table())


def cmd_infer(cfg: RunConfig, index: int = 0) -> np.ndarray:
    ckpt = _require(cfg.checkpoint, "--checkpoint")
    src = _require(cfg.input, "--input")
    if not src.is_file():
        raise ArtifactIOError(f"input container {src} not found; run `skyfuse preprocess` to create one")
    arr = container.read(src)
    params, mcfg = load_checkpoint(ckpt)
    if arr.ndim == 3:
        if not 0 <= index < arr.shape[0]:
            raise InputError(f"--index {index} out of range for {arr.shape[0]} samples")
        arr = arr[index]
    if arr.shape != (mcfg.target_seq_len, mcfg.feature_dim):
        raise InputError(f"expected a ({mcfg.target_seq_len},{mcfg.feature_dim}) sample, got {arr.shape}")
    probs = predict_proba(arr[None].astype(np.float32), params, mcfg)[0]
    classes = _class_names(src.parent, mcfg.num_classes)
    for name, p in zip(classes, probs):
        print(f"{name}\t{p:.6f}")
    print(f"prediction\t{classes[int(np.argmax(probs))]}")
    return probs


def _class_names(directory: Path, k: int) -> tuple:
    path = directory / "classes.txt"
    if path.is_file():
        names = tuple(path.read_text(encoding="utf-8").split())
        if len(names) == k:
            return names
    from . import CLASS_NAMES

    return CLASS_NAMES if k == len(CLASS_NAMES) else tuple(f"class{i}" for i in range(k))


def cmd_run(cfg: RunConfig) -> dict:
    """Full chain under ``<out>/{raw,processed,model,eval}``."""
    out = _require(cfg.out, "--out")
    raw, proc, model, ev = out / "raw", out / "processed", out / "model", out / "eval"
    cmd_synth(replace(cfg, out=str(raw)))
    cmd_preprocess(replace(cfg, input=str(raw), out=str(proc)))
    cmd_train(replace(cfg, data=str(proc), out=str(model)))
    return cmd_evaluate(replace(cfg, data=str(proc), checkpoint=str(model), out=str(ev)))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "preprocess":
            cmd_preprocess(cfg)
        elif args.command == "report":
            cmd_report(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.on)
        elif args.command == "profile":
            cmd_profile(cfg, args.batch, args.warmup, args.iters)
        elif args.command == "infer":
            cmd_infer(cfg, args.index)
        elif args.command == "run":
            cmd_run(cfg)
    except SkyfuseError as e:
        _fail(e.kind, e.exit_code, e)
    except OSError as e:
        _fail("io", 3, e)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
