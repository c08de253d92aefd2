"""Wireless radiance fields: learn a room's channel from sparse measurements.

Two small networks describe the medium (per-voxel complex attenuation and
re-emitted signal); a complex ray marcher integrates them over a direction
grid into per-subcarrier channels, received power, and spatial spectra.  An
image-source simulator provides ground truth for desk-scale experiments.
"""

from .core import (
    RSSI_FLOOR_DB,
    Channel,
    ComplexAmplitude,
    PathComponent,
    channel_from_paths,
    received_signal,
    rssi_db,
)
from .dataio import (
    ChannelRecord,
    Checkpoint,
    DatasetManifest,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    split_dataset,
    write_dataset,
)
from .errors import (
    ConfigError,
    DataIoError,
    DomainError,
    NumericalError,
    RadiofieldError,
)
from .fields import FieldConfig, FieldPair, make_fields
from .metrics import MetricReport, median_rmse, snr_db, ssim
from .raytrace import (
    DirectionGrid,
    RenderResult,
    accumulate_ray,
    accumulate_rays,
    render,
    sample_ray,
)
from .scene import SceneConfig
from .synth import ROOM_PRESETS, RoomSpec, generate_dataset, image_sources, synth_channel
from .trainer import TrainConfig, TrainResult, evaluate, experiment_matrix, train

__version__ = "0.1.0"

__all__ = [
    "RSSI_FLOOR_DB",
    "Channel",
    "ComplexAmplitude",
    "PathComponent",
    "channel_from_paths",
    "received_signal",
    "rssi_db",
    "ChannelRecord",
    "Checkpoint",
    "DatasetManifest",
    "load_checkpoint",
    "read_dataset",
    "save_checkpoint",
    "split_dataset",
    "write_dataset",
    "ConfigError",
    "DataIoError",
    "DomainError",
    "NumericalError",
    "RadiofieldError",
    "FieldConfig",
    "FieldPair",
    "make_fields",
    "MetricReport",
    "median_rmse",
    "snr_db",
    "ssim",
    "DirectionGrid",
    "RenderResult",
    "accumulate_ray",
    "accumulate_rays",
    "render",
    "sample_ray",
    "SceneConfig",
    "ROOM_PRESETS",
    "RoomSpec",
    "generate_dataset",
    "image_sources",
    "synth_channel",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "experiment_matrix",
    "train",
    "__version__",
]
