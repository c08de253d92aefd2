"""Sinusoidal positional encoding for coordinates and directions.

Raw coordinates are lifted into [x, sin(2^0 pi x), cos(2^0 pi x), ...,
sin(2^{L-1} pi x), cos(2^{L-1} pi x)] applied elementwise, the geometric
frequency schedule of the coordinate-network lineage.  Coordinates should
be normalized to [-1, 1] per axis first (SceneConfig.normalize_positions);
directions are encoded as unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class EncoderConfig:
    num_frequencies: int = 10
    include_input: bool = True

    def __post_init__(self) -> None:
        if self.num_frequencies < 0:
            raise DomainError("num_frequencies must be >= 0")

    def output_dim(self, input_dim: int) -> int:
        return input_dim * (2 * self.num_frequencies + (1 if self.include_input else 0))


# NeRF-family defaults: L=10 for positions, L=4 for directions.
POSITION_ENCODER = EncoderConfig(num_frequencies=10, include_input=True)
DIRECTION_ENCODER = EncoderConfig(num_frequencies=4, include_input=True)


def positional_encode(x: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Encode the last axis of x; output last-axis dim is cfg.output_dim(d).

    Layout: [x (if include_input), sin(2^0 pi x), cos(2^0 pi x), ...,
    sin(2^{L-1} pi x), cos(2^{L-1} pi x)], each block elementwise over the
    input components.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DomainError("positional_encode requires finite input")
    blocks = [x] if cfg.include_input else []
    for k in range(cfg.num_frequencies):
        scaled = (2.0**k) * np.pi * x
        blocks.append(np.sin(scaled))
        blocks.append(np.cos(scaled))
    if not blocks:
        return np.zeros(x.shape[:-1] + (0,), dtype=np.float64)
    return np.concatenate(blocks, axis=-1)
