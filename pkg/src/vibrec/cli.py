"""Command-line front end for the recovery pipeline.

Subcommands: generate, train, recover, modal, gradcheck. Settings come from
an optional JSON config file overridden by flags; every run echoes its
effective configuration to a manifest so outputs are reproducible from the
manifest alone.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import modal, recovery, signal_core, synthgen
from .errors import (
    ConfigurationError,
    DataError,
    NumericalError,
    VibrecError,
)
from .nn_engine import Activation, gradient_check, load_checkpoint, save_checkpoint
from .recovery import ModelVariant, TrainConfig, build_model, max_window_error
from .rng import derive_rng
from .signal_core import MaskSpec, WindowingConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5

DEFAULTS = {
    "generate": {
        "out": ".",
        "seed": 0,
        "n_sensors": 30,
        "duration_s": 16.0,
        "fs": 128.0,
        "noise_rms_fraction": 0.05,
    },
    "train": {
        "out": ".",
        "records": "records.csv",
        "variant": "cnn_a",
        "mask": [5],
        "ws": 6,
        "epochs": 1000,
        "seed": 0,
        "learning_rate": 1e-3,
        "lr_decay": 1.0,
        "dropout_rate": 0.2,
        "validation_fraction": 0.2,
        "activation": "elu",
        "activation_alpha": None,
    },
    "recover": {
        "out": ".",
        "records": "records.csv",
        "checkpoint": "checkpoint.json",
        "mask": [5],
        "ws": 6,
        "windows": [0, 1, 2, 3],
    },
    "modal": {
        "out": ".",
        "reference": "reference.csv",
        "recovered": "recovered.csv",
        "n_modes": 4,
        "segment_len": 512,
        "overlap_fraction": 0.5,
        "min_prominence": 6.0,
    },
    "gradcheck": {
        "variant": "cnn_a",
        "seed": 0,
        "eps": 1e-5,
        "threshold": 1e-4,
        "n_sensors": 30,
    },
}


def _load_config(command: str, path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigurationError(
                f"unknown config key(s) for '{command}': {sorted(unknown)}"
            )
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _write_manifest(cfg: dict, command: str, out_dir: Path) -> None:
    with open(out_dir / f"manifest_{command}.json", "w", encoding="utf-8") as fh:
        json.dump({"command": command, "config": cfg}, fh, indent=2, sort_keys=True)


def _parse_mask(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"mask must be integers like '5' or '5,12', got '{text}'")


def _activation(cfg: dict) -> Activation:
    kind = cfg["activation"]
    alpha = cfg.get("activation_alpha")
    if alpha is None:
        alpha = {"elu": 1.0, "leaky_relu": 0.01}.get(kind, 1.0)
    return Activation(kind, alpha)


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    spec = synthgen.default_structure(
        n_sensors=cfg["n_sensors"],
        noise_rms_fraction=cfg["noise_rms_fraction"],
        seed=cfg["seed"],
    )
    records, truth = synthgen.generate(spec, cfg["duration_s"], cfg["fs"])
    signal_core.save_records(records, str(out / "records.csv"))
    synthgen.save_ground_truth(truth, str(out / "ground_truth.json"))
    _write_manifest(cfg, "generate", out)
    print(f"wrote {out / 'records.csv'} ({records.n_samples}x{records.n_sensors})")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    records = signal_core.load_records(cfg["records"])
    variant = ModelVariant(cfg["variant"])
    mask = MaskSpec(cfg["mask"])
    if len(mask.faulted) != variant.n_faulted:
        raise ConfigurationError(
            f"variant {variant.kind} recovers {variant.n_faulted} sensor(s), "
            f"mask names {len(mask.faulted)}"
        )
    norm = signal_core.normalize(records)
    windows = signal_core.extract_windows(
        norm, WindowingConfig(records.n_sensors, cfg["ws"]), mask
    )
    train_cfg = TrainConfig(
        epochs=cfg["epochs"],
        validation_fraction=cfg["validation_fraction"],
        seed=cfg["seed"],
        learning_rate=cfg["learning_rate"],
        lr_decay=cfg["lr_decay"],
        dropout_rate=cfg["dropout_rate"],
    )
    train_set, val_set = signal_core.split_train_validation(
        windows, 1.0 - train_cfg.validation_fraction, train_cfg.seed
    )
    model = build_model(
        variant,
        records.n_sensors,
        seed=train_cfg.seed,
        dropout_rate=train_cfg.dropout_rate,
        conv_activation=_activation(cfg),
    )
    model, log = recovery.train(model, train_set, val_set, train_cfg)
    save_checkpoint(model, str(out / "checkpoint.json"))
    log.write_csv(str(out / "convergence.csv"))
    _write_manifest(cfg, "train", out)
    print(
        f"trained {variant.kind} for {len(log)} epochs; "
        f"final val rmse {log.val_rmse[-1]:.4f}, mae {log.val_mae[-1]:.4f}"
    )
    return EXIT_OK


def cmd_recover(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    records = signal_core.load_records(cfg["records"])
    model, _ = load_checkpoint(cfg["checkpoint"])
    mask = MaskSpec(cfg["mask"])
    norm = signal_core.normalize(records)
    windows = signal_core.extract_windows(
        norm, WindowingConfig(records.n_sensors, cfg["ws"]), mask
    )
    wl = records.n_sensors
    lines = ["window,sensor,max_window_error_pct"]
    series = ["window,sensor,sample,reference,recovered"]
    for idx in cfg["windows"]:
        if not 0 <= idx < len(windows):
            raise ConfigurationError(
                f"window index {idx} out of range [0, {len(windows)})"
            )
        recovered = recovery.recover(model, _unmasked_window(norm, windows, idx), norm.scale, mask)
        for k, ch in enumerate(mask.faulted):
            ref_norm = windows.targets[idx][k * wl : (k + 1) * wl]
            rec_norm = (
                model.forward(windows.inputs[idx][..., None], training=False)[
                    k * wl : (k + 1) * wl
                ]
            )
            err = max_window_error(rec_norm, ref_norm)
            lines.append(f"{idx},{ch},{err!r}")
            ref_phys = signal_core.denormalize(ref_norm, ch, norm.scale)
            for t, (rv, pv) in enumerate(zip(ref_phys, recovered[ch])):
                series.append(f"{idx},{ch},{t},{rv!r},{pv!r}")
    (out / "recovery_errors.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "recovered.csv").write_text("\n".join(series) + "\n", encoding="utf-8")
    _write_manifest(cfg, "recover", out)
    print(f"recovered {len(cfg['windows'])} window(s) -> {out / 'recovered.csv'}")
    return EXIT_OK


def _unmasked_window(norm, windows, idx):
    start = int(windows.offsets[idx])
    return norm.data[start : start + norm.n_sensors]


def cmd_modal(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    reference = signal_core.load_records(cfg["reference"])
    recovered = signal_core.load_records(cfg["recovered"])
    report = modal.compare_modal(
        reference,
        recovered,
        n_modes=cfg["n_modes"],
        segment_len=cfg["segment_len"],
        overlap_fraction=cfg["overlap_fraction"],
        min_prominence=cfg["min_prominence"],
    )
    report.write_csv(str(out / "modal_report.csv"))
    _write_manifest(cfg, "modal", out)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out / 'modal_report.csv'} ({len(report.frequencies_ref)} mode pairs)")
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    variant = ModelVariant(cfg["variant"])
    model = build_model(variant, cfg["n_sensors"], seed=cfg["seed"])
    rng = derive_rng(cfg["seed"], "gradcheck")
    x = rng.random((cfg["n_sensors"], cfg["n_sensors"], 1))
    target = rng.random(cfg["n_sensors"] * variant.n_faulted)
    worst, per_layer = gradient_check(model, x, target, eps=cfg["eps"], rng=rng)
    for key in sorted(per_layer):
        print(f"{key}: {per_layer[key]:.3e}")
    ok = worst < cfg["threshold"]
    print(f"max relative error {worst:.3e} ({'pass' if ok else 'fail'} "
          f"at threshold {cfg['threshold']:.1e})")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vibrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("generate", help="synthesize a multi-channel record")
    common(p)
    p.add_argument("--n-sensors", type=int, dest="n_sensors")
    p.add_argument("--duration-s", type=float, dest="duration_s")
    p.add_argument("--fs", type=float)

    p = sub.add_parser("train", help="train a recovery model")
    common(p)
    p.add_argument("--records")
    p.add_argument("--variant", choices=["cnn_a", "cnn_b", "cnn_c", "nn"])
    p.add_argument("--mask", type=_parse_mask)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ws", type=int)
    p.add_argument("--activation", choices=["relu", "elu", "leaky_relu"])
    p.add_argument("--lr-decay", dest="lr_decay", type=float)

    p = sub.add_parser("recover", help="recover masked sensors from a checkpoint")
    common(p)
    p.add_argument("--records")
    p.add_argument("--checkpoint")
    p.add_argument("--mask", type=_parse_mask)
    p.add_argument("--ws", type=int)
    p.add_argument("--windows", type=_parse_mask, help="comma-separated window indices")

    p = sub.add_parser("modal", help="compare modal properties of two records")
    common(p)
    p.add_argument("--reference")
    p.add_argument("--recovered")
    p.add_argument("--n-modes", type=int, dest="n_modes")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--variant", choices=["cnn_a", "cnn_b", "cnn_c", "nn"])
    p.add_argument("--eps", type=float)
    p.add_argument("--threshold", type=float)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "recover": cmd_recover,
    "modal": cmd_modal,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config") and v is not None
    }
    if overrides.get("variant") == "nn":
        overrides["variant"] = "nn_baseline"
    try:
        cfg = _load_config(args.command, args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VibrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
