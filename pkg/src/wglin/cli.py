"""Command-line entry points: train, eval, ablate.

Config files are flat UTF-8 `key = value` lines with `#` comments. Unknown
keys are hard errors. Exit codes: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import MalformedImage
from .errors import (
    ChecksumMismatch,
    ConfigError,
    ConfigMismatch,
    ConfigParseError,
    NonFinite,
    NonFiniteLoss,
    RangeError,
    VariantError,
)
from .metrics import report_to_csv
from .model import VARIANTS, ModelConfig
from .training import RunConfig, build_model, evaluate_model, load_data, predict, train_model

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_MODEL_KEYS = {
    "views": int, "blocks": int, "image_channels": int, "lesion_channels": int,
    "conv_channels": int, "height": int, "width": int, "patch": int,
    "token_dim": int, "heads": int, "num_classes": int, "alpha_init": float,
}
_RUN_KEYS = {
    "seed": int, "epochs": int, "batch_size": int, "learning_rate": float,
    "variant": str, "dataset": str, "n_per_class": int, "split_ratio": float,
    "overlap_fraction": float,
}


def parse_config(path) -> RunConfig:
    model_kwargs, run_kwargs = {}, {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParseError(f"cannot read config {path}: {e}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw!r}", lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _MODEL_KEYS:
                model_kwargs[key] = _MODEL_KEYS[key](value)
            elif key in _RUN_KEYS:
                run_kwargs[key] = _RUN_KEYS[key](value)
            else:
                raise ConfigParseError(f"unknown key {key!r}", lineno)
        except ValueError:
            raise ConfigParseError(f"bad value for {key!r}: {value!r}", lineno)
    cfg = RunConfig(model=ModelConfig(**model_kwargs), **run_kwargs)
    cfg.model.validate()
    if cfg.variant not in VARIANTS:
        raise VariantError(f"unknown variant {cfg.variant!r}")
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dc_fields(cfg.model):
        lines.append(f"{f.name} = {getattr(cfg.model, f.name)}")
    for key in _RUN_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    return "\n".join(lines) + "\n"


def _checkpoint_entries(model, optimizer=None) -> dict[str, np.ndarray]:
    entries = {name: p.data for name, p in model.named_parameters()}
    if optimizer is not None:
        entries.update(optimizer.state_entries())
    return entries


def _load_into_model(model, entries: dict[str, np.ndarray]):
    for name, p in model.named_parameters():
        if name not in entries:
            raise ConfigMismatch(f"checkpoint missing parameter {name!r}")
        arr = entries[name]
        if arr.shape != p.data.shape:
            raise ConfigMismatch(
                f"checkpoint parameter {name!r} has shape {arr.shape}, "
                f"model expects {p.data.shape}")
        p.data[...] = arr


def cmd_train(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    train_ds, _ = load_data(cfg)
    model = build_model(cfg)
    log_rows = ["epoch,loss,train_acc"]
    ckpt_path = out_dir / "checkpoint.bin"

    def on_epoch(epoch: int, loss: float, _running_acc: float) -> bool:
        y_true, y_pred, _ = predict(model, train_ds, cfg.batch_size)
        acc = float(np.mean(y_true == y_pred))
        log_rows.append(f"{epoch},{loss:.12g},{acc:.12g}")
        save_checkpoint(ckpt_path, _checkpoint_entries(model, model.last_optimizer))
        (out_dir / "train_log.csv").write_text("\n".join(log_rows) + "\n",
                                               encoding="utf-8")
        return False

    try:
        train_model(model, train_ds, cfg, on_epoch=on_epoch)
    except NonFiniteLoss as e:
        print(f"numeric failure: {e}; last-good checkpoint retained", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: Path, split: str, out: Path | None) -> int:
    entries = load_checkpoint(checkpoint)
    model = build_model(cfg)
    train_ds, test_ds = load_data(cfg)
    _load_into_model(model, entries)
    dataset = train_ds if split == "train" else test_ds
    report = evaluate_model(model, dataset, cfg.batch_size)
    csv = report_to_csv(report)
    if out is not None:
        out.write_text(csv, encoding="utf-8")
    else:
        sys.stdout.write(csv)
    return 0


def cmd_ablate(cfg: RunConfig, variants: list[str], out_dir: Path) -> int:
    for v in variants:
        if v not in VARIANTS:
            raise VariantError(f"unknown variant {v!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_data(cfg)
    rows = ["variant,acc,prec,spec,kappa,f1"]
    for variant in variants:
        vcfg = RunConfig(model=cfg.model, variant=variant, seed=cfg.seed,
                         epochs=cfg.epochs, batch_size=cfg.batch_size,
                         learning_rate=cfg.learning_rate, dataset=cfg.dataset,
                         n_per_class=cfg.n_per_class, split_ratio=cfg.split_ratio,
                         overlap_fraction=cfg.overlap_fraction)
        model = build_model(vcfg)
        train_model(model, train_ds, vcfg)
        r = evaluate_model(model, test_ds, vcfg.batch_size)
        vals = [r.accuracy, r.macro_precision, r.macro_specificity, r.kappa, r.macro_f1]
        rows.append(variant + "," + ",".join(f"{100.0 * x:.2f}" for x in vals))
        (out_dir / "ablation.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wglin")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=["train", "test"], default="test")
    p_eval.add_argument("--out", default=None)

    p_abl = sub.add_parser("ablate", help="train and compare variants")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--variants", default=",".join(VARIANTS))
    p_abl.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    os.environ.setdefault("WGLIN_THREADS", "1")
    try:
        cfg = parse_config(args.config)
        if args.command == "train":
            return cmd_train(cfg, Path(args.out))
        if args.command == "eval":
            out = Path(args.out) if args.out else None
            return cmd_eval(cfg, Path(args.checkpoint), args.split, out)
        return cmd_ablate(cfg, [v.strip() for v in args.variants.split(",") if v.strip()],
                          Path(args.out))
    except (ConfigParseError, ConfigError, VariantError, ConfigMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedImage, ChecksumMismatch, RangeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NonFinite) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
