"""Command-line interface: synthesize, ingest, augment, train, eval, predict.

Exit codes: 0 success, 2 configuration/usage error, 3 data/ingestion error,
4 internal contract violation, 5 training divergence, 6 I/O failure.
Primary outputs are byte-reproducible for identical inputs; timestamps are
confined to manifest.json.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .augment import AugmentConfig, AugmentPipeline
from .autodiff import kernels
from .data import (FEATURE_COLUMNS, PROFILES, SynthesisParams, get_profile,
                   ingest_csv, make_loocv_splits, synthesize_battery,
                   write_series_csv)
from .errors import (CdformerError, ConfigurationError, ContractError,
                     DataError, DimensionError, IngestionError,
                     TrainingDivergedError)
from .evaluate import ROLLOUT_MODES, emit_report, evaluate_battery
from .model import ModelConfig, build_variant, load_model, save_model
from .train import PROFILE_TRAINING, TrainConfig, derive_seed, run_loocv

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONTRACT = 4
EXIT_DIVERGED = 5
EXIT_IO = 6

OUTPUT_ROOT_ENV = "CDFORMER_OUT"

_NUMBER = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}

AUGMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "alpha": _NUMBER, "rho": _NUMBER, "sigma": _NUMBER,
        "per_technique_prob": _NUMBER, "seed": _INT,
    },
    "additionalProperties": False,
}

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "lr": _NUMBER, "beta1": _NUMBER, "beta2": _NUMBER,
        "weight_decay": _NUMBER, "batch_size": _INT, "max_epochs": _INT,
        "patience": _INT, "huber_delta": _NUMBER, "seed": _INT,
        "val_fraction": _NUMBER, "profile": {"type": "string"},
        "augment": {"oneOf": [{"type": "null"}, AUGMENT_SCHEMA]},
    },
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "input_channels": _INT, "window_len": _INT, "cnn_channels": _INT,
        "cnn_kernel": _INT, "drsn_blocks": _INT, "d_model": _INT,
        "heads": _INT, "d_ff": _INT, "encoder_layers": _INT,
        "reg_hidden": _INT, "variant": {"type": "string"},
        "output_relu": _BOOL, "positional_encoding": _BOOL,
    },
    "additionalProperties": False,
}

SYNTH_SCHEMA = {
    "type": "object",
    "properties": {
        "c0": _NUMBER, "fade_rate": _NUMBER, "knee_cycle": _INT,
        "knee_factor": _NUMBER, "noise_std": _NUMBER, "n_cycles": _INT,
        "seed": _INT,
    },
    "additionalProperties": False,
}


def _load_config_json(path, schema):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})")
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        locations = "; ".join(
            f"/{'/'.join(str(p) for p in e.absolute_path)}: {e.message}" for e in errors)
        raise ConfigurationError(f"{path}: {locations}")
    return data


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, payload: dict) -> None:
    manifest = {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "kernel_backend": kernels.backend_name(),
        "command": command,
    }
    manifest.update(payload)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _resolve_out(args) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not root:
        raise ConfigurationError(
            f"--out not given and {OUTPUT_ROOT_ENV} is not set")
    return Path(root) / args.command


def _data_files(data: str):
    path = Path(data)
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DataError(f"no CSV files in {path}")
        return files
    raise DataError(f"data path does not exist: {data}")


def _ingest_all(data: str, profile: str):
    batteries = []
    for path in _data_files(data):
        batteries.extend(ingest_csv(path, profile))
    batteries.sort(key=lambda b: b.battery_id)
    ids = [b.battery_id for b in batteries]
    if len(set(ids)) != len(ids):
        raise IngestionError(f"duplicate battery ids across files: {ids}")
    return batteries


# ---------------------------------------------------------------------------
# subcommands

def cmd_synthesize(args) -> int:
    params = {}
    if args.config:
        params = _load_config_json(args.config, SYNTH_SCHEMA)
    for key in ("c0", "fade_rate", "knee_cycle", "knee_factor", "noise_std", "cycles"):
        value = getattr(args, key)
        if value is not None:
            params["n_cycles" if key == "cycles" else key] = value
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    written, used = [], []
    for i in range(args.batteries):
        battery_params = dict(params)
        battery_params["seed"] = derive_seed(args.seed, i)
        spec = SynthesisParams(**battery_params)
        # Distinct fade/knee per battery so leave-one-out is meaningful.
        spec = dataclasses.replace(
            spec,
            fade_rate=spec.fade_rate * (1.0 + 0.15 * rng.uniform(-1, 1)),
            knee_cycle=int(round(spec.knee_cycle * (1.0 + 0.1 * rng.uniform(-1, 1)))),
        )
        series = synthesize_battery(spec, battery_id=f"synth_{i:03d}")
        path = out_dir / f"synth_{i:03d}.csv"
        write_series_csv(path, series)
        written.append(str(path))
        used.append(dataclasses.asdict(spec))
    _write_manifest(out_dir, "synthesize",
                    {"seed": args.seed, "batteries": used, "files": written})
    print(json.dumps({"written": written}))
    return 0


def cmd_ingest(args) -> int:
    batteries = _ingest_all(args.data, args.profile)
    summary = [{"battery_id": b.battery_id, "cycles": len(b),
                "rated_capacity_ah": b.rated_capacity,
                "capacity_range_ah": [float(b.capacities().min()),
                                      float(b.capacities().max())]}
               for b in batteries]
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for battery in batteries:
            write_series_csv(out_dir / f"{battery.battery_id}.csv", battery)
        with open(out_dir / "ingest_summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    print(json.dumps(summary))
    return 0


def cmd_augment(args) -> int:
    cfg = AugmentConfig(alpha=args.alpha, rho=args.rho, sigma=args.sigma,
                        per_technique_prob=args.prob, seed=args.seed)
    cfg.validate()
    batteries = _ingest_all(args.data, args.profile)
    pipeline = AugmentPipeline(cfg)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    provenance = {}
    for index, battery in enumerate(batteries):
        # Augment every canonical feature column the file carries, keeping
        # the writer's column layout so neutral parameters reproduce the
        # input exactly.
        features = [f for f in FEATURE_COLUMNS
                    if all(getattr(r, f) is not None for r in battery.records)]
        matrix = battery.feature_matrix(features)   # (T, C), raw units
        augmented = pipeline.augment(matrix, counter=index)
        provenance[battery.battery_id] = augmented.provenance
        for row_i, record in enumerate(battery.records):
            for col_i, feature in enumerate(features):
                setattr(record, feature, float(augmented.values[row_i, col_i]))
    write_series_csv(out_path, batteries)
    sidecar = out_path.with_suffix(out_path.suffix + ".provenance.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict(), "applied": provenance}, fh, indent=2)
        fh.write("\n")
    print(json.dumps({"written": str(out_path), "provenance": str(sidecar)}))
    return 0


def _build_train_configs(args):
    profile = get_profile(args.profile)
    train_kwargs = dict(PROFILE_TRAINING.get(args.profile, {}))
    train_kwargs["profile"] = args.profile
    if args.config:
        loaded = _load_config_json(args.config, TRAIN_SCHEMA)
        augment = loaded.pop("augment", None)
        train_kwargs.update(loaded)
        if augment is not None:
            train_kwargs["augment"] = AugmentConfig(**augment)
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    train_cfg = TrainConfig(**train_kwargs)
    train_cfg.validate()

    model_kwargs = {"input_channels": len(profile.features),
                    "output_relu": profile.output_relu}
    if args.model_config:
        model_kwargs.update(_load_config_json(args.model_config, MODEL_SCHEMA))
    model_cfg = ModelConfig(**model_kwargs)
    model_cfg.validate()
    return model_cfg, train_cfg


def _train_config_dict(cfg: TrainConfig) -> dict:
    payload = dataclasses.asdict(cfg)
    return payload


def cmd_train(args) -> int:
    model_cfg, train_cfg = _build_train_configs(args)
    batteries = _ingest_all(args.data, args.profile)
    if len(batteries) < 2:
        raise DataError(f"leave-one-out training needs >= 2 batteries, got {len(batteries)}")
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = _config_hash({
        "model": model_cfg.to_dict(),
        "train": _train_config_dict(train_cfg),
        "mode": args.mode,
        "data": [b.battery_id for b in batteries],
    })
    result = run_loocv(batteries, model_cfg, train_cfg, mode=args.mode,
                       parallel=args.parallel)
    failures = [{"battery_id": o.battery_id, "error": o.error}
                for o in result.outcomes if o.error]
    for failure in failures:
        print(f"split failed for {failure['battery_id']}: {failure['error']}",
              file=sys.stderr)
    for outcome in result.outcomes:
        if outcome.report is None:
            continue
        save_model(out_dir / f"checkpoint_{outcome.battery_id}.json", outcome.model,
                   extra={"profile": args.profile,
                          "normalizer": outcome.normalizer.to_dict(),
                          "held_out_battery": outcome.battery_id})
        with open(out_dir / f"history_{outcome.battery_id}.csv", "w",
                  newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, train_loss, val_loss in outcome.train_result.history:
                writer.writerow([epoch, repr(train_loss), repr(val_loss)])
    if result.reports:
        emit_report(result.reports, out_dir, dataset=args.profile,
                    model_name=model_cfg.variant, config_hash=config_hash)
    _write_manifest(out_dir, "train", {
        "config_hash": config_hash,
        "seed": train_cfg.seed,
        "mode": args.mode,
        "model_config": model_cfg.to_dict(),
        "train_config": _train_config_dict(train_cfg),
        "parameter_count": build_variant(model_cfg).parameter_count(),
        "inputs": [b.battery_id for b in batteries],
        "failures": failures,
    })
    if not result.reports:
        raise TrainingDivergedError("every leave-one-out split failed")
    print(json.dumps({"aggregate": result.aggregate, "out": str(out_dir)}))
    return 0


def _load_for_inference(args):
    model, payload = load_model(args.checkpoint)
    profile_name = args.profile or payload.get("profile")
    if not profile_name:
        raise ConfigurationError("checkpoint carries no profile; pass --profile")
    profile = get_profile(profile_name)
    if "normalizer" not in payload:
        raise ConfigurationError("checkpoint carries no normalizer state")
    from .data import NormalizationState
    normalizer = NormalizationState.from_dict(payload["normalizer"])
    batteries = _ingest_all(args.data, profile_name)
    return model, normalizer, profile, batteries


def cmd_eval(args) -> int:
    model, normalizer, profile, batteries = _load_for_inference(args)
    reports = [evaluate_battery(model, b, normalizer, profile.features,
                                model.config.window_len, args.mode)
               for b in batteries]
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = emit_report(reports, out_dir, dataset=profile.name,
                        model_name=model.config.variant,
                        config_hash=_config_hash({"checkpoint": str(args.checkpoint)}))
    _write_manifest(out_dir, "eval", {
        "checkpoint": str(args.checkpoint), "mode": args.mode,
        "batteries": [b.battery_id for b in batteries],
    })
    print(json.dumps({"summary": str(paths["summary"]),
                      "per_battery": [{"id": r.battery_id, "rmse": r.rmse,
                                       "mae": r.mae, "re": r.re} for r in reports]}))
    return 0


def cmd_predict(args) -> int:
    from .evaluate import rollout
    model, normalizer, profile, batteries = _load_for_inference(args)
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for battery in batteries:
        cycles, true_ah, pred_ah = rollout(model, battery, normalizer,
                                           profile.features,
                                           model.config.window_len, args.mode)
        path = out_dir / f"pred_{battery.battery_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "true_ah", "pred_ah"])
            for cycle, t, p in zip(cycles, true_ah, pred_ah):
                writer.writerow([cycle, repr(float(t)), repr(float(p))])
        written.append(str(path))
    _write_manifest(out_dir, "predict", {
        "checkpoint": str(args.checkpoint), "mode": args.mode, "files": written})
    print(json.dumps({"written": written}))
    return 0


# ---------------------------------------------------------------------------
# parser

def _defaults_epilog() -> str:
    lines = ["configuration keys and defaults:"]
    lines.append("  model config (--model-config JSON):")
    for f in dataclasses.fields(ModelConfig):
        default = "per profile" if f.name in ("input_channels", "output_relu") else f.default
        lines.append(f"    {f.name} = {default}")
    lines.append("  train config (--config JSON):")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "augment":
            lines.append("    augment = null (object with keys below to enable)")
            continue
        lines.append(f"    {f.name} = {f.default}")
    lines.append("  augment config (nested under 'augment'):")
    for f in dataclasses.fields(AugmentConfig):
        lines.append(f"    {f.name} = {f.default}")
    lines.append("  profile presets:")
    for name, spec in PROFILES.items():
        training = PROFILE_TRAINING.get(name, {})
        lines.append(f"    {name}: features={','.join(spec.features)} "
                     f"output_relu={spec.output_relu} {training}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdformer",
        description="Battery remaining-useful-life prediction: hybrid "
                    "CNN / residual-shrinkage / Transformer model with "
                    "temporal data augmentation.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_defaults_epilog(),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate synthetic degradation CSVs")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/synthesize)")
    p.add_argument("--batteries", type=int, default=4)
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c0", type=float, default=None)
    p.add_argument("--fade-rate", dest="fade_rate", type=float, default=None)
    p.add_argument("--knee-cycle", dest="knee_cycle", type=int, default=None)
    p.add_argument("--knee-factor", dest="knee_factor", type=float, default=None)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    p.add_argument("--config", help="SynthesisParams JSON")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("ingest", help="validate cycle CSVs, optionally re-emit them")
    p.add_argument("--data", required=True, help="CSV file or directory")
    p.add_argument("--profile", choices=sorted(PROFILES), required=True)
    p.add_argument("--out", help="directory for canonical copies + summary")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="augment a series CSV for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default="synthetic")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--prob", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="leave-one-battery-out training",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=_defaults_epilog())
    p.add_argument("--data", required=True, help="directory of cycle CSVs")
    p.add_argument("--profile", choices=sorted(PROFILES), required=True)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/train)")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--model-config", dest="model_config", help="ModelConfig JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=ROLLOUT_MODES, default="one_step")
    p.add_argument("--parallel", type=int, default=1, help="parallel splits")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on battery CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default=None)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/eval)")
    p.add_argument("--mode", choices=ROLLOUT_MODES, default="one_step")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted capacity trajectories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default=None)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/predict)")
    p.add_argument("--mode", choices=ROLLOUT_MODES, default="one_step")
    p.set_defaults(func=cmd_predict)

    return parser


_EXIT_CODES = (
    (ConfigurationError, EXIT_CONFIG),
    (IngestionError, EXIT_DATA),
    (DataError, EXIT_DATA),
    (TrainingDivergedError, EXIT_DIVERGED),
    (DimensionError, EXIT_CONTRACT),
    (ContractError, EXIT_CONTRACT),
    (OSError, EXIT_IO),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CdformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                return code
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
