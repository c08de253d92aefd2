"""Dataset and checkpoint serialization.

One record schema serves all three measurement kinds through optional
fields: a complex per-subcarrier channel (csi), a scalar received power
(rssi), or a direction-power matrix (spectrum).  Datasets live in two files,
`<name>.ndrec` (one JSON object per line) and `<name>.manifest` (JSON), with
floats printed in shortest round-trip form so write/read is lossless at
double precision and reruns are byte-identical.

Checkpoints are a NumPy `.npz` archive of named arrays plus a JSON manifest
echoing the configuration, seed, epoch, and array shapes.

Readers are safe to use concurrently; writers assume exclusive access to
their target paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Channel
from .errors import ConfigError, DataIoError, DomainError
from .scene import SceneConfig

SCHEMA_VERSION = 1
TASKS = ("rssi", "csi", "spectrum")


@dataclass
class ChannelRecord:
    """One TX/RX measurement; at least one label field must be present."""

    tx_position: np.ndarray
    rx_position: np.ndarray
    h: Channel | None = None
    rssi_db: float | None = None
    spectrum: np.ndarray | None = None
    tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.tx_position = np.asarray(self.tx_position, dtype=np.float64).reshape(3)
        self.rx_position = np.asarray(self.rx_position, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.tx_position)) and np.all(np.isfinite(self.rx_position))):
            raise DomainError("record positions must be finite")
        if self.h is None and self.rssi_db is None and self.spectrum is None:
            raise DomainError("record needs at least one of h, rssi_db, spectrum")
        if self.h is not None and not isinstance(self.h, Channel):
            self.h = Channel(self.h)
        if self.h is not None and not np.all(np.isfinite(self.h.values.view(np.float64))):
            raise DomainError("record channel values must be finite")
        if self.rssi_db is not None:
            self.rssi_db = float(self.rssi_db)
            if not math.isfinite(self.rssi_db):
                raise DomainError("record rssi_db must be finite")
        if self.spectrum is not None:
            self.spectrum = np.asarray(self.spectrum, dtype=np.float64)
            if self.spectrum.ndim != 2:
                raise DomainError("record spectrum must be a 2-D matrix")
            if not np.all(np.isfinite(self.spectrum)):
                raise DomainError("record spectrum must be finite")
            if self.spectrum.min() < 0.0 or self.spectrum.max() > 1.0:
                raise DomainError("record spectrum values must lie in [0, 1]")
        self.tags = {str(k): str(v) for k, v in (self.tags or {}).items()}

    def to_json_obj(self) -> dict:
        obj: dict = {
            "tx": self.tx_position.tolist(),
            "rx": self.rx_position.tolist(),
        }
        if self.h is not None:
            obj["h"] = [[z.real, z.imag] for z in self.h.values]
        if self.rssi_db is not None:
            obj["rssi_db"] = self.rssi_db
        if self.spectrum is not None:
            obj["spectrum"] = self.spectrum.tolist()
        if self.tags:
            obj["tags"] = self.tags
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ChannelRecord":
        h = None
        if "h" in obj:
            h = Channel(np.array([complex(re, im) for re, im in obj["h"]]))
        return cls(
            tx_position=np.array(obj["tx"], dtype=np.float64),
            rx_position=np.array(obj["rx"], dtype=np.float64),
            h=h,
            rssi_db=obj.get("rssi_db"),
            spectrum=None if "spectrum" not in obj else np.array(obj["spectrum"]),
            tags=obj.get("tags", {}),
        )


def records_equal(a: ChannelRecord, b: ChannelRecord) -> bool:
    """Exact field-for-field equality (bitwise on arrays)."""
    if not np.array_equal(a.tx_position, b.tx_position):
        return False
    if not np.array_equal(a.rx_position, b.rx_position):
        return False
    if (a.h is None) != (b.h is None):
        return False
    if a.h is not None and not np.array_equal(a.h.values, b.h.values):
        return False
    if a.rssi_db != b.rssi_db:
        return False
    if (a.spectrum is None) != (b.spectrum is None):
        return False
    if a.spectrum is not None and not np.array_equal(a.spectrum, b.spectrum):
        return False
    return a.tags == b.tags


@dataclass
class DatasetManifest:
    """Sidecar metadata for one `.ndrec` file."""

    task: str
    scene: SceneConfig
    record_count: int
    schema_version: int = SCHEMA_VERSION
    split_seed: int = 0
    generator: dict | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.record_count < 0:
            raise ConfigError("record_count must be >= 0")

    def to_json_obj(self) -> dict:
        obj = {
            "task": self.task,
            "scene": self.scene.to_dict(),
            "record_count": self.record_count,
            "schema_version": self.schema_version,
            "split_seed": self.split_seed,
        }
        if self.generator is not None:
            obj["generator"] = self.generator
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DatasetManifest":
        return cls(
            task=obj["task"],
            scene=SceneConfig.from_dict(obj["scene"]),
            record_count=int(obj["record_count"]),
            schema_version=int(obj["schema_version"]),
            split_seed=int(obj.get("split_seed", 0)),
            generator=obj.get("generator"),
        )


def dataset_paths(path) -> tuple[Path, Path]:
    """Resolve a dataset stem (or either file of the pair) to both paths."""
    p = Path(path)
    if p.suffix in (".ndrec", ".manifest"):
        p = p.with_suffix("")
    return p.with_suffix(".ndrec"), p.with_suffix(".manifest")


def write_dataset(records: list[ChannelRecord], manifest: DatasetManifest, path) -> None:
    """Write `<name>.ndrec` and `<name>.manifest`; rejects bad records first."""
    if manifest.record_count != len(records):
        raise DomainError(
            f"manifest record_count {manifest.record_count} != {len(records)} records"
        )
    if manifest.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"can only write schema_version {SCHEMA_VERSION}")
    lines = [
        json.dumps(r.to_json_obj(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        for r in records
    ]
    rec_path, man_path = dataset_paths(path)
    try:
        rec_path.parent.mkdir(parents=True, exist_ok=True)
        with open(rec_path, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        with open(man_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(manifest.to_json_obj(), sort_keys=True, indent=2, allow_nan=False))
            fh.write("\n")
    except OSError as e:
        raise DataIoError(f"failed to write dataset at {rec_path}: {e}") from e


def read_dataset(path) -> tuple[list[ChannelRecord], DatasetManifest]:
    """Read a dataset pair; validation failures surface as data errors."""
    rec_path, man_path = dataset_paths(path)
    try:
        with open(man_path, "r", encoding="utf-8") as fh:
            manifest = DatasetManifest.from_json_obj(json.load(fh))
        with open(rec_path, "r", encoding="utf-8") as fh:
            raw_lines = [line for line in fh if line.strip()]
    except OSError as e:
        raise DataIoError(f"failed to read dataset at {rec_path}: {e}") from e
    except (json.JSONDecodeError, KeyError, ConfigError, ValueError) as e:
        raise DataIoError(f"malformed dataset manifest {man_path}: {e}") from e
    if manifest.schema_version != SCHEMA_VERSION:
        raise DataIoError(
            f"unsupported schema_version {manifest.schema_version} in {man_path}"
        )
    try:
        records = [ChannelRecord.from_json_obj(json.loads(line)) for line in raw_lines]
    except (json.JSONDecodeError, KeyError, DomainError, TypeError, ValueError) as e:
        raise DataIoError(f"malformed dataset record in {rec_path}: {e}") from e
    if len(records) != manifest.record_count:
        raise DataIoError(
            f"manifest claims {manifest.record_count} records but {rec_path} holds {len(records)}"
        )
    return records, manifest


def split_dataset(
    records: list[ChannelRecord], fraction: float, seed: int
) -> tuple[list[ChannelRecord], list[ChannelRecord]]:
    """Seeded shuffle split; train gets floor(n * fraction), eval the rest."""
    if len(records) < 2:
        raise DomainError(f"need at least 2 records to split, got {len(records)}")
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie strictly in (0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(len(records))
    n_train = int(math.floor(len(records) * fraction))
    train = [records[i] for i in perm[:n_train]]
    rest = [records[i] for i in perm[n_train:]]
    return train, rest


@dataclass
class Checkpoint:
    """In-memory form of a saved training state."""

    arrays: dict[str, np.ndarray]
    config: dict
    seed: int
    epoch: int
    extra: dict = field(default_factory=dict)


def checkpoint_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".npz", ".manifest"):
        p = p.with_suffix("")
    return p.with_suffix(".npz"), p.with_suffix(".manifest")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write `<name>.npz` (named arrays) + `<name>.manifest` (JSON echo)."""
    npz_path, man_path = checkpoint_paths(path)
    arrays = {k: np.asarray(v) for k, v in ckpt.arrays.items()}
    manifest = {
        "config": ckpt.config,
        "seed": int(ckpt.seed),
        "epoch": int(ckpt.epoch),
        "arrays": {k: list(v.shape) for k, v in sorted(arrays.items())},
        "extra": ckpt.extra,
    }
    try:
        npz_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(npz_path, **arrays)
        with open(man_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(manifest, sort_keys=True, indent=2, allow_nan=False))
            fh.write("\n")
    except OSError as e:
        raise DataIoError(f"failed to write checkpoint at {npz_path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    npz_path, man_path = checkpoint_paths(path)
    try:
        with open(man_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        with np.load(npz_path) as data:
            arrays = {k: data[k].copy() for k in data.files}
    except OSError as e:
        raise DataIoError(f"failed to read checkpoint at {npz_path}: {e}") from e
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise DataIoError(f"malformed checkpoint manifest {man_path}: {e}") from e
    declared = manifest.get("arrays", {})
    for name, shape in declared.items():
        if name not in arrays:
            raise DataIoError(f"checkpoint {npz_path} missing declared array {name!r}")
        if list(arrays[name].shape) != list(shape):
            raise DataIoError(
                f"checkpoint array {name!r} has shape {list(arrays[name].shape)}, "
                f"manifest says {shape}"
            )
    return Checkpoint(
        arrays=arrays,
        config=manifest.get("config", {}),
        seed=int(manifest.get("seed", 0)),
        epoch=int(manifest.get("epoch", 0)),
        extra=manifest.get("extra", {}),
    )


def read_rssi_csv(path, version: int = 1) -> list[ChannelRecord]:
    """Adapter for external RSSI captures, format version 1.

    Layout (header required): tx_x,tx_y,tx_z,rx_x,rx_y,rx_z,rssi_db and
    optionally a trailing gateway column used as the rx tag.  Best effort:
    revalidate against the actual capture layout before trusting it.
    """
    if version != 1:
        raise ConfigError(f"rssi csv adapter supports version 1 only, got {version}")
    import csv

    required = ["tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z", "rssi_db"]
    records = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
                raise DataIoError(f"rssi csv {path} must have columns {required}")
            for row in reader:
                tags = {"rx": row["gateway"]} if "gateway" in row and row["gateway"] else {}
                records.append(
                    ChannelRecord(
                        tx_position=[float(row[c]) for c in required[0:3]],
                        rx_position=[float(row[c]) for c in required[3:6]],
                        rssi_db=float(row["rssi_db"]),
                        tags=tags,
                    )
                )
    except OSError as e:
        raise DataIoError(f"failed to read rssi csv {path}: {e}") from e
    except (ValueError, DomainError) as e:
        raise DataIoError(f"malformed rssi csv {path}: {e}") from e
    return records
