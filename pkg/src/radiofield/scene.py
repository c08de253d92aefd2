"""Scene geometry and rendering configuration shared by the pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError


@dataclass
class SceneConfig:
    """Bounds of the scene, the direction grid, ray sampling, and the
    OFDM subcarrier layout.

    Rays are marched up to max_distance (scene diagonal when unset) with
    n_samples voxels each, over an azimuth x elevation grid covering
    azimuth [0, 2pi) and the elevation_span band (upper hemisphere default).
    """

    bounds_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bounds_max: np.ndarray = field(default_factory=lambda: np.ones(3))
    azimuth_bins: int = 36
    elevation_bins: int = 9
    elevation_span: tuple[float, float] = (0.0, math.pi / 2)
    n_samples: int = 64
    max_distance: float | None = None
    carrier_hz: float = 2.4e9
    num_subcarriers: int = 64
    subcarrier_spacing_hz: float = 312.5e3

    def __post_init__(self) -> None:
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64).reshape(3)
        if np.any(self.bounds_max <= self.bounds_min):
            raise ConfigError("scene bounds_max must exceed bounds_min on every axis")
        if self.azimuth_bins < 1 or self.elevation_bins < 1:
            raise ConfigError("direction grid needs at least one bin per axis")
        lo, hi = self.elevation_span
        if not (-math.pi / 2 <= lo < hi <= math.pi / 2):
            raise ConfigError(f"elevation_span must satisfy -pi/2 <= lo < hi <= pi/2, got {self.elevation_span}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.max_distance is not None and self.max_distance <= 0:
            raise ConfigError("max_distance must be positive")
        if self.carrier_hz <= 0 or self.subcarrier_spacing_hz <= 0:
            raise ConfigError("carrier and subcarrier spacing must be positive")
        if self.num_subcarriers < 1:
            raise ConfigError("num_subcarriers must be >= 1")

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds_max - self.bounds_min))

    @property
    def ray_length(self) -> float:
        return self.max_distance if self.max_distance is not None else self.diagonal

    def normalize_positions(self, positions: np.ndarray) -> np.ndarray:
        """Map scene coordinates into [-1, 1] per axis for encoding."""
        p = np.asarray(positions, dtype=np.float64)
        span = self.bounds_max - self.bounds_min
        return 2.0 * (p - self.bounds_min) / span - 1.0

    def contains(self, positions: np.ndarray) -> np.ndarray:
        p = np.asarray(positions, dtype=np.float64)
        return np.all((p >= self.bounds_min) & (p <= self.bounds_max), axis=-1)

    def subcarrier_frequencies(self) -> np.ndarray:
        """f_k = carrier + (k - K/2) * spacing for k = 0..K-1."""
        k = np.arange(self.num_subcarriers, dtype=np.float64)
        return self.carrier_hz + (k - self.num_subcarriers / 2) * self.subcarrier_spacing_hz

    def to_dict(self) -> dict[str, Any]:
        return {
            "bounds_min": self.bounds_min.tolist(),
            "bounds_max": self.bounds_max.tolist(),
            "azimuth_bins": self.azimuth_bins,
            "elevation_bins": self.elevation_bins,
            "elevation_span": list(self.elevation_span),
            "n_samples": self.n_samples,
            "max_distance": self.max_distance,
            "carrier_hz": self.carrier_hz,
            "num_subcarriers": self.num_subcarriers,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneConfig":
        d = dict(d)
        d["elevation_span"] = tuple(d.get("elevation_span", (0.0, math.pi / 2)))
        return cls(**d)
