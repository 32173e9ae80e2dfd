"""Command-line surface: generate / import / train / eval / predict / report / gradcheck.

Exit codes: 0 success, 1 validation error (bad flags, bad config, failed
gradcheck), 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import gradcheck as gc
from . import rap
from .config import RETINAMNIST_PRESET, TrainConfig, apply_settings, parse_config_text
from .data import SplitSpec, stratified_split, synth_longtail
from .formats import FormatError, export_labels_csv, import_npz, read_tds, write_tds
from .model import forward_evidence
from .report import write_report_bundle
from .rng import Rng
from .tensor import Tensor
from .train import (build_model_config, evaluate, init_state, load_checkpoint,
                    predict_dataset, save_checkpoint, train, write_metrics_csv)

__all__ = ["main", "cli"]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evidscan", description="Selective-scan evidential classifier")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, highest precedence")
        sp.add_argument("--seed", type=int, help="override cfg seed")
        sp.add_argument("--out", default=".", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic long-tailed dataset as TDS")
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--base-count", type=int, default=400)
    g.add_argument("--decay", type=float, default=0.6)
    g.add_argument("--image-size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="dataset.tds")

    imp = sub.add_parser("import", help="convert an NPZ archive of NPY v1.0 arrays to TDS")
    imp.add_argument("npz")
    imp.add_argument("--images-key", default="train_images")
    imp.add_argument("--labels-key", default="train_labels")
    imp.add_argument("--out", default="dataset.tds")

    tr = sub.add_parser("train", help="train on a TDS dataset")
    common(tr)
    tr.add_argument("--train", required=True, help="train TDS path")
    tr.add_argument("--val", help="validation TDS path (default: carve 10%% of train)")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--resume", help="checkpoint to resume from")

    ev = sub.add_parser("eval", help="evaluate a checkpoint; writes the report CSV bundle")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--best", action="store_true", help="use the best-validation snapshot")

    pr = sub.add_parser("predict", help="per-sample prediction CSV")
    common(pr)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)

    rp = sub.add_parser("report", help="emit CSV/SVG report bundle from a checkpoint + dataset")
    common(rp)
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--data", required=True)

    gr = sub.add_parser("gradcheck", help="finite-difference gradient verification suite")
    gr.add_argument("--tol", type=float, default=1e-4)
    gr.add_argument("--seed", type=int, default=0)
    return p


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            apply_settings(cfg, parse_config_text(f.read()))
    overrides = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    apply_settings(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    cfg.validate()
    return cfg


def _cmd_generate(args) -> int:
    c = synth_longtail(args.classes, args.base_count, args.decay, args.image_size, args.seed)
    write_tds(c, args.out)
    print(f"wrote {c.n} samples, {c.num_classes} classes -> {args.out}")
    return 0


def _cmd_import(args) -> int:
    c = import_npz(args.npz, args.images_key, args.labels_key)
    write_tds(c, args.out)
    print(f"imported {c.n} samples, {c.num_classes} classes -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    train_set = read_tds(args.train)
    cfg.image_size = train_set.images.shape[2]
    cfg.in_channels = train_set.images.shape[1]
    val_set = read_tds(args.val) if args.val else None
    if val_set is None:
        train_set, val_set = stratified_split(
            train_set, SplitSpec(train_fraction=1.0 - cfg.val_fraction, seed=cfg.seed))
    resume = load_checkpoint(args.resume, cfg, train_set.num_classes) if args.resume else None
    os.makedirs(args.out, exist_ok=True)
    state, rows = train(cfg, train_set, val_set, resume=resume,
                        log_fn=lambda r: print(r.csv()))
    write_metrics_csv(rows, os.path.join(args.out, "metrics.csv"))
    save_checkpoint(state, os.path.join(args.out, "last.ckpt"))
    print(f"best validation OA {state.best_val_oa:.4f}; wrote {args.out}/last.ckpt")
    return 0


def _restore(args):
    cfg = _load_config(args)
    data = read_tds(args.data)
    cfg.image_size = data.images.shape[2]
    cfg.in_channels = data.images.shape[1]
    state = load_checkpoint(args.checkpoint, cfg, data.num_classes)
    params = state.params
    if getattr(args, "best", False) and state.best_params:
        for name, arr in state.best_params.items():
            params[name].data = arr
    return cfg, data, state, params


def _cmd_eval(args) -> int:
    cfg, data, state, params = _restore(args)
    report = evaluate(params, state.model_cfg, data, cfg.image_size)
    write_report_bundle(report, args.out)
    print(f"OA {report.oa:.4f}  F1 {report.f1:.4f}  AUC {report.auc:.4f}  ECE {report.ece:.4f}")
    return 0


def _cmd_predict(args) -> int:
    cfg, data, state, params = _restore(args)
    outs = predict_dataset(params, state.model_cfg, data, cfg.image_size)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "predictions.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("index,pred,confidence,entropy,total_evidence\n")
        for i, o in enumerate(outs):
            conf, ent, s = rap.uncertainty_summary(o)
            f.write(f"{i},{o.label},{conf:.6f},{ent:.6f},{s:.6f}\n")
    print(f"wrote {len(outs)} rows -> {path}")
    return 0


def _cmd_report(args) -> int:
    return _cmd_eval(args)


def _cmd_gradcheck(args) -> int:
    from .acceptance import composed_loss_gradcheck, primitive_gradchecks

    ok = True
    for name, report in primitive_gradchecks(seed=args.seed, tol=args.tol):
        status = "ok" if report.passed else "FAIL"
        print(f"{status:4s} {name}: max rel err {report.max_rel_error:.3e}")
        ok &= report.passed
    report = composed_loss_gradcheck(seed=args.seed, tol=args.tol)
    for line in report.summary_lines():
        print("composed-loss " + line)
    ok &= report.passed
    return 0 if ok else 1


_COMMANDS = {
    "generate": _cmd_generate,
    "import": _cmd_import,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
