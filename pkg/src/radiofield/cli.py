"""Command-line entry point.

Five subcommands: synth-gen, train, eval, predict, plot-spectrum.  Each
reads one YAML config file (or a named preset such as `bedroom`), applies
`key=value` overrides (dotted keys reach nested sections, values parsed as
YAML), echoes the fully resolved configuration into the output directory as
`resolved-config.yaml`, and writes its artifacts there.  Re-running with
the same config and seed reproduces the same bytes.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime or
numerical error, 4 I/O error.  On failure a single machine-parsable line
`<ErrorClass>: <message>` goes to stderr and partially written outputs are
removed (diverged training keeps its last-good checkpoint, which is a
complete artifact, not a partial one).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib.resources import files as package_files
from pathlib import Path

import numpy as np
import yaml

from .dataio import (
    DatasetManifest,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    split_dataset,
    write_dataset,
)
from .errors import ConfigError, DataIoError, DomainError, NumericalError
from .metrics import reports_to_csv
from .raytrace import spectrum_to_csv, spectrum_to_png
from .scene import SceneConfig
from .synth import RoomSpec, generate_dataset
from .trainer import (
    TrainConfig,
    evaluate,
    fields_from_checkpoint,
    predict_records,
    train,
)

PRESET_NAMES = ("bedroom", "conference", "office")

_ROOM_DEFAULTS = {
    "dimensions": [5.0, 4.0, 3.0],
    "reflection_coeff": 0.6,
    "max_order": 3,
    "carrier_hz": 2.4e9,
    "num_subcarriers": 64,
    "subcarrier_spacing_hz": 312.5e3,
}

_SCENE_OVERRIDE_DEFAULTS = {
    "azimuth_bins": None,
    "elevation_bins": None,
    "elevation_span": None,
    "n_samples": None,
    "max_distance": None,
}

DEFAULTS: dict[str, dict] = {
    "synth-gen": {
        "room": dict(_ROOM_DEFAULTS),
        "num_tx": 100,
        "num_rx": 1,
        "seed": 0,
        "noise_db": None,
        "task": "csi",
        "name": "dataset",
        "split_seed": 0,
        "scene": {
            "azimuth_bins": 36,
            "elevation_bins": 9,
            "n_samples": 64,
            "max_distance": None,
        },
    },
    "train": {
        "dataset": "dataset",
        "task": None,
        "split_fraction": 0.8,
        "split_seed": None,
        "backbone": "apt",
        "depth": 2,
        "learning_rate": 5e-4,
        "batch_rays": 1024,
        "epochs": 50,
        "seed": 0,
        "swap_tx_rx": False,
        "base_channels": 16,
        "spp_levels": [4, 2, 1],
        "use_attention_gates": True,
        "feature_dim": 16,
        "position_frequencies": 10,
        "direction_frequencies": 4,
        "mlp_hidden_dims": None,
        "sample_mode": "stratified",
        "lr_schedule": "cosine",
        "eval_every_epochs": 1,
        "patience": 10,
        "scene": dict(_SCENE_OVERRIDE_DEFAULTS),
    },
    "eval": {
        "checkpoint": "checkpoint-best",
        "dataset": "dataset",
        "split": "eval",
        "split_fraction": None,
        "split_seed": None,
    },
    "predict": {
        "checkpoint": "checkpoint-best",
        "dataset": "dataset",
        "split": "all",
        "split_fraction": None,
        "split_seed": None,
        "limit": None,
    },
    "plot-spectrum": {
        "checkpoint": None,
        "dataset": "dataset",
        "record_index": 0,
    },
}


def _deep_merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} must be a mapping")
            out[key] = _deep_merge(base[key], value, prefix + key + ".")
        else:
            out[key] = value
    return out


def _parse_override(text: str) -> dict:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, _, raw = text.partition("=")
    try:
        value = yaml.safe_load(raw) if raw != "" else None
    except yaml.YAMLError as e:
        raise ConfigError(f"override {text!r} has an unparsable value: {e}") from e
    node: dict = {}
    cursor = node
    parts = key.split(".")
    for part in parts[:-1]:
        cursor[part] = {}
        cursor = cursor[part]
    cursor[parts[-1]] = value
    return node


def resolve_config_path(name_or_path: str) -> Path:
    """An existing file wins; otherwise try the packaged presets."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if name_or_path in PRESET_NAMES:
        return Path(str(package_files("radiofield") / "presets" / f"{name_or_path}.yaml"))
    raise ConfigError(
        f"no config file {name_or_path!r} and no preset by that name "
        f"(presets: {', '.join(PRESET_NAMES)})"
    )


def resolve_config(subcommand: str, config: str | None, overrides: list[str]) -> dict:
    """defaults <- config file <- key=value overrides, schema-checked."""
    merged = DEFAULTS[subcommand]
    if config is not None:
        path = resolve_config_path(config)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as e:
            raise DataIoError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a YAML mapping")
        merged = _deep_merge(merged, loaded)
    for text in overrides:
        merged = _deep_merge(merged, _parse_override(text))
    return merged


def _echo_config(cfg: dict, subcommand: str, out_dir: Path) -> None:
    payload = {"subcommand": subcommand, "config": cfg}
    text = yaml.safe_dump(payload, sort_keys=True, default_flow_style=False)
    (out_dir / "resolved-config.yaml").write_text(text, encoding="utf-8")


def _scene_with_overrides(scene: SceneConfig, overrides: dict) -> SceneConfig:
    base = scene.to_dict()
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return SceneConfig.from_dict(base)


def _select_split(records, cfg: dict, manifest: DatasetManifest, ckpt_extra: dict):
    which = cfg["split"]
    if which not in ("train", "eval", "all"):
        raise ConfigError(f"split must be train, eval or all, got {which!r}")
    if which == "all":
        return records
    fraction = cfg["split_fraction"]
    if fraction is None:
        fraction = ckpt_extra.get("split_fraction", 0.8)
    seed = cfg["split_seed"]
    if seed is None:
        seed = ckpt_extra.get("split_seed", manifest.split_seed)
    train_set, eval_set = split_dataset(records, float(fraction), int(seed))
    return train_set if which == "train" else eval_set


def cmd_synth_gen(cfg: dict, out_dir: Path, track: list[Path]) -> None:
    room = RoomSpec.from_dict(cfg["room"])
    if cfg["task"] not in ("rssi", "csi"):
        raise ConfigError(
            f"synth-gen produces rssi/csi labels, not {cfg['task']!r} "
            "(spectrum labels come from rendering, not the room simulator)"
        )
    records = generate_dataset(
        room,
        num_tx=int(cfg["num_tx"]),
        num_rx=int(cfg["num_rx"]),
        seed=int(cfg["seed"]),
        noise_db=cfg["noise_db"],
    )
    scene_kwargs = {k: v for k, v in cfg["scene"].items() if v is not None}
    manifest = DatasetManifest(
        task=cfg["task"],
        scene=room.to_scene(**scene_kwargs),
        record_count=len(records),
        split_seed=int(cfg["split_seed"]),
        generator={
            "room": room.to_dict(),
            "num_tx": int(cfg["num_tx"]),
            "num_rx": int(cfg["num_rx"]),
            "seed": int(cfg["seed"]),
            "noise_db": cfg["noise_db"],
        },
    )
    stem = out_dir / cfg["name"]
    track += [stem.with_suffix(".ndrec"), stem.with_suffix(".manifest")]
    write_dataset(records, manifest, stem)
    print(f"wrote {len(records)} records to {stem.with_suffix('.ndrec')}")


def cmd_train(cfg: dict, out_dir: Path, track: list[Path]) -> None:
    records, manifest = read_dataset(cfg["dataset"])
    task = cfg["task"] or manifest.task
    split_seed = cfg["split_seed"]
    if split_seed is None:
        split_seed = manifest.split_seed
    train_set, eval_set = split_dataset(records, float(cfg["split_fraction"]), int(split_seed))
    scene = _scene_with_overrides(manifest.scene, cfg["scene"])
    tcfg = TrainConfig(
        scene=scene,
        task=task,
        backbone=cfg["backbone"],
        depth=int(cfg["depth"]),
        learning_rate=float(cfg["learning_rate"]),
        batch_rays=int(cfg["batch_rays"]),
        epochs=int(cfg["epochs"]),
        seed=int(cfg["seed"]),
        swap_tx_rx=bool(cfg["swap_tx_rx"]),
        base_channels=int(cfg["base_channels"]),
        spp_levels=tuple(cfg["spp_levels"]),
        use_attention_gates=bool(cfg["use_attention_gates"]),
        feature_dim=int(cfg["feature_dim"]),
        position_frequencies=int(cfg["position_frequencies"]),
        direction_frequencies=int(cfg["direction_frequencies"]),
        mlp_hidden_dims=cfg["mlp_hidden_dims"],
        sample_mode=cfg["sample_mode"],
        lr_schedule=cfg["lr_schedule"],
        eval_every_epochs=int(cfg["eval_every_epochs"]),
        patience=int(cfg["patience"]),
    )
    result = train(tcfg, train_set, eval_set, out_dir=out_dir)
    # record how the split was made so eval/predict can reproduce it
    result.checkpoint.extra["split_fraction"] = float(cfg["split_fraction"])
    result.checkpoint.extra["split_seed"] = int(split_seed)
    save_checkpoint(result.checkpoint, out_dir / "checkpoint-best")
    value = result.best_metric
    print(f"trained {len(train_set)} records; best {result.metric_name} = {value:.4f}")
    print(f"checkpoint at {out_dir / 'checkpoint-best.npz'}")


def cmd_eval(cfg: dict, out_dir: Path, track: list[Path]) -> None:
    ckpt = load_checkpoint(cfg["checkpoint"])
    fields, tcfg = fields_from_checkpoint(ckpt)
    records, manifest = read_dataset(cfg["dataset"])
    subset = _select_split(records, cfg, manifest, ckpt.extra)
    scale = float(ckpt.extra.get("target_scale", 1.0))
    reports = evaluate(fields, subset, tcfg.scene, tcfg.task, scale, tcfg.swap_tx_rx)
    csv_path = out_dir / "metrics.csv"
    track.append(csv_path)
    reports_to_csv(reports, csv_path)
    for r in reports:
        print(f"{r.name} = {r.value}")


def cmd_predict(cfg: dict, out_dir: Path, track: list[Path]) -> None:
    ckpt = load_checkpoint(cfg["checkpoint"])
    fields, tcfg = fields_from_checkpoint(ckpt)
    records, manifest = read_dataset(cfg["dataset"])
    subset = _select_split(records, cfg, manifest, ckpt.extra)
    if cfg["limit"] is not None:
        subset = subset[: int(cfg["limit"])]
    if not subset:
        raise DomainError("no records selected for prediction")
    scale = float(ckpt.extra.get("target_scale", 1.0))
    preds = predict_records(fields, subset, tcfg.scene, tcfg.task, scale, tcfg.swap_tx_rx)
    path = out_dir / "predictions.jsonl"
    track.append(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, (rec, pred) in enumerate(zip(subset, preds)):
            obj: dict = {
                "index": i,
                "tx": rec.tx_position.tolist(),
                "rx": rec.rx_position.tolist(),
            }
            if tcfg.task == "csi":
                obj["h_pred"] = [[z.real, z.imag] for z in np.asarray(pred)]
            elif tcfg.task == "rssi":
                obj["rssi_db_pred"] = float(pred)
            else:
                obj["spectrum_pred"] = np.asarray(pred).tolist()
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    print(f"wrote {len(subset)} predictions to {path}")


def cmd_plot_spectrum(cfg: dict, out_dir: Path, track: list[Path]) -> None:
    records, manifest = read_dataset(cfg["dataset"])
    idx = int(cfg["record_index"])
    if not 0 <= idx < len(records):
        raise DomainError(f"record_index {idx} out of range for {len(records)} records")
    record = records[idx]
    if record.spectrum is None:
        raise DomainError(f"record {idx} carries no spectrum label")
    expected = (manifest.scene.elevation_bins, manifest.scene.azimuth_bins)
    if record.spectrum.shape != expected:
        raise DomainError(
            f"record spectrum shape {record.spectrum.shape} does not match "
            f"the manifest grid {expected}"
        )
    panels = [("truth", record.spectrum)]
    if cfg["checkpoint"] is not None:
        ckpt = load_checkpoint(cfg["checkpoint"])
        fields, tcfg = fields_from_checkpoint(ckpt)
        pred = predict_records(
            fields, [record], tcfg.scene, "spectrum", 1.0, tcfg.swap_tx_rx
        )[0]
        if pred.shape != expected:
            raise ConfigError(
                f"checkpoint renders a {pred.shape} grid, dataset expects {expected}"
            )
        panels.append(("predicted", pred))
        panels.append(("error", np.abs(pred - record.spectrum)))
    for name, matrix in panels:
        csv_path = out_dir / f"{name}-spectrum.csv"
        png_path = out_dir / f"{name}-spectrum.png"
        track += [csv_path, png_path]
        spectrum_to_csv(matrix, csv_path)
        spectrum_to_png(np.clip(matrix, 0.0, 1.0), png_path)
        print(f"wrote {png_path} ({expected[0]}x{expected[1]})")


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot-spectrum": cmd_plot_spectrum,
}

HELP = {
    "synth-gen": "generate an image-source synthetic dataset",
    "train": "train the field networks on a dataset",
    "eval": "compute metrics for a checkpoint on a dataset split",
    "predict": "dump per-record predictions for a checkpoint",
    "plot-spectrum": "export a record's spatial spectrum (and a prediction) as PNG + CSV",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiofield",
        description="Wireless radiance field toolkit: synthesize, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, func in COMMANDS.items():
        keys = yaml.safe_dump(DEFAULTS[name], sort_keys=True, default_flow_style=False)
        p = sub.add_parser(
            name,
            help=HELP[name],
            description=HELP[name],
            epilog="configuration keys and defaults:\n\n" + keys,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument(
            "config",
            nargs="?",
            default=None,
            help="YAML config file or preset name (bedroom, conference, office)",
        )
        p.add_argument(
            "overrides",
            nargs="*",
            default=[],
            help="key=value config overrides (dotted keys, YAML values)",
        )
        p.add_argument(
            "-o",
            "--output-dir",
            default=f"runs/{name}",
            help="directory for artifacts (default: runs/<subcommand>)",
        )
    return parser


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = args.config
    overrides = list(args.overrides)
    if config is not None and "=" in config:
        overrides.insert(0, config)
        config = None
    track: list[Path] = []
    try:
        cfg = resolve_config(args.subcommand, config, overrides)
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _echo_config(cfg, args.subcommand, out_dir)
        COMMANDS[args.subcommand](cfg, out_dir, track)
        return 0
    except (ConfigError, DomainError) as e:
        return _fail(2, e, track)
    except NumericalError as e:
        return _fail(3, e, track)
    except DataIoError as e:
        return _fail(4, e, track)
    except OSError as e:
        return _fail(4, e, track)


def _fail(code: int, error: Exception, track: list[Path]) -> int:
    for path in track:
        try:
            path.unlink(missing_ok=True)
        except OSError:
            pass
    print(f"{type(error).__name__}: {_one_line(error)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
