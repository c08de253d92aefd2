"""Synthetic multipath channel generation via the image-source method.

A rectangular room with perfectly flat walls reflects the transmitted wave
specularly; each reflection sequence is equivalent to a straight path from a
mirror image of the transmitter.  Enumerating images up to a reflection
order and summing free-space contributions gives a ground-truth OFDM channel

    H(f_k) = sum_images Gamma^bounces * (c / (4 pi d f_k)) * e^{-j 2 pi d f_k / c}

with d the image-to-receiver distance.  The amplitude uses each subcarrier's
own wavelength, so the channel is genuinely frequency-selective.

The reflection coefficient is real, frequency- and angle-independent; there
is no diffraction or wall penetration.  Good enough for desk-scale learning
experiments, not for room acoustics or EM solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RSSI_FLOOR_DB, Channel, rssi_db
from .dataio import ChannelRecord
from .errors import ConfigError, DomainError
from .scene import SceneConfig

SPEED_OF_LIGHT = 299792458.0

# keep random placements off the walls so every TX/RX is strictly interior
WALL_MARGIN_M = 0.1


@dataclass
class RoomSpec:
    """Rectangular room [0, Lx] x [0, Ly] x [0, Lz] with uniform walls."""

    dimensions: tuple[float, float, float]
    reflection_coeff: float = 0.6
    max_order: int = 3
    carrier_hz: float = 2.4e9
    num_subcarriers: int = 64
    subcarrier_spacing_hz: float = 312.5e3

    def __post_init__(self) -> None:
        self.dimensions = tuple(float(d) for d in self.dimensions)
        if len(self.dimensions) != 3 or any(d <= 0 for d in self.dimensions):
            raise ConfigError(f"room dimensions must be 3 positive lengths, got {self.dimensions}")
        if not 0.0 <= self.reflection_coeff <= 1.0:
            raise ConfigError(f"reflection_coeff must lie in [0, 1], got {self.reflection_coeff}")
        if self.max_order < 0:
            raise ConfigError(f"max_order must be >= 0, got {self.max_order}")
        if self.carrier_hz <= 0:
            raise ConfigError(f"carrier_hz must be positive, got {self.carrier_hz}")
        if self.num_subcarriers < 1:
            raise ConfigError(f"num_subcarriers must be >= 1, got {self.num_subcarriers}")
        if self.subcarrier_spacing_hz <= 0:
            raise ConfigError(f"subcarrier_spacing_hz must be positive, got {self.subcarrier_spacing_hz}")

    def contains(self, position: np.ndarray, margin: float = 0.0) -> bool:
        p = np.asarray(position, dtype=np.float64).reshape(3)
        lo = np.full(3, margin)
        hi = np.asarray(self.dimensions) - margin
        return bool(np.all(p > lo) and np.all(p < hi))

    def subcarrier_frequencies(self) -> np.ndarray:
        k = np.arange(self.num_subcarriers, dtype=np.float64)
        return self.carrier_hz + (k - self.num_subcarriers / 2) * self.subcarrier_spacing_hz

    def to_scene(self, **overrides) -> SceneConfig:
        """SceneConfig covering this room, for rendering and manifests."""
        kwargs = dict(
            bounds_min=(0.0, 0.0, 0.0),
            bounds_max=self.dimensions,
            carrier_hz=self.carrier_hz,
            num_subcarriers=self.num_subcarriers,
            subcarrier_spacing_hz=self.subcarrier_spacing_hz,
        )
        kwargs.update(overrides)
        return SceneConfig(**kwargs)

    def to_dict(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "reflection_coeff": self.reflection_coeff,
            "max_order": self.max_order,
            "carrier_hz": self.carrier_hz,
            "num_subcarriers": self.num_subcarriers,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoomSpec":
        return cls(
            dimensions=tuple(data["dimensions"]),
            reflection_coeff=float(data.get("reflection_coeff", 0.6)),
            max_order=int(data.get("max_order", 3)),
            carrier_hz=float(data.get("carrier_hz", 2.4e9)),
            num_subcarriers=int(data.get("num_subcarriers", 64)),
            subcarrier_spacing_hz=float(data.get("subcarrier_spacing_hz", 312.5e3)),
        )


# Stand-ins for the three measurement scenes; dimensions in meters.  Softer
# walls in the small room, livelier ones in the big open office.
ROOM_PRESETS: dict[str, RoomSpec] = {
    "bedroom": RoomSpec(dimensions=(4.0, 3.0, 2.5), reflection_coeff=0.5),
    "conference": RoomSpec(dimensions=(8.0, 5.0, 3.0), reflection_coeff=0.6),
    "office": RoomSpec(dimensions=(10.0, 8.0, 3.0), reflection_coeff=0.7),
}


def image_sources(
    room: RoomSpec, tx: np.ndarray, order: int
) -> list[tuple[np.ndarray, int]]:
    """All mirror images of tx across the 6 walls up to `order` reflections.

    Breadth-first mirroring with dedup: each image is kept at its minimal
    bounce count, so the result for order n is a strict superset of the
    result for n-1.  Returns (position, bounce_count) pairs, bounce 0 first.
    """
    tx = np.asarray(tx, dtype=np.float64).reshape(3)
    if order > room.max_order:
        raise DomainError(f"order {order} exceeds room.max_order {room.max_order}")
    if order < 0:
        raise DomainError(f"order must be >= 0, got {order}")
    if not room.contains(tx):
        raise DomainError(f"tx {tx.tolist()} lies outside the room {room.dimensions}")

    def key(p: np.ndarray) -> tuple:
        return tuple(np.round(p, 9))

    planes = []
    for axis, length in enumerate(room.dimensions):
        planes.append((axis, 0.0))
        planes.append((axis, length))

    seen: dict[tuple, tuple[np.ndarray, int]] = {key(tx): (tx, 0)}
    frontier = [tx]
    for bounce in range(1, order + 1):
        next_frontier = []
        for p in frontier:
            for axis, wall in planes:
                q = p.copy()
                q[axis] = 2.0 * wall - q[axis]
                k = key(q)
                if k not in seen:
                    seen[k] = (q, bounce)
                    next_frontier.append(q)
        frontier = next_frontier
    return sorted(seen.values(), key=lambda item: (item[1], tuple(item[0])))


def synth_channel(room: RoomSpec, tx: np.ndarray, rx: np.ndarray) -> Channel:
    """Ground-truth multipath channel between interior points tx and rx.

    Sums every image up to room.max_order; a zero reflection coefficient
    reduces to the free-space direct path whatever the order.
    """
    tx = np.asarray(tx, dtype=np.float64).reshape(3)
    rx = np.asarray(rx, dtype=np.float64).reshape(3)
    if not room.contains(rx):
        raise DomainError(f"rx {rx.tolist()} lies outside the room {room.dimensions}")
    images = image_sources(room, tx, room.max_order)
    positions = np.stack([p for p, _ in images])
    bounces = np.array([b for _, b in images], dtype=np.float64)
    distances = np.linalg.norm(positions - rx[None, :], axis=1)
    if np.any(distances == 0.0):
        raise DomainError("tx and rx coincide (zero-distance path singularity)")
    freqs = room.subcarrier_frequencies()
    # (images, subcarriers): per-wavelength free-space amplitude and phase
    d = distances[:, None]
    f = freqs[None, :]
    weights = room.reflection_coeff ** bounces
    contrib = weights[:, None] * SPEED_OF_LIGHT / (4.0 * np.pi * d * f) * np.exp(
        -2j * np.pi * d * f / SPEED_OF_LIGHT
    )
    return Channel(contrib.sum(axis=0))


def _draw_interior(rng: np.random.Generator, room: RoomSpec, count: int) -> np.ndarray:
    dims = np.asarray(room.dimensions)
    return WALL_MARGIN_M + rng.random((count, 3)) * (dims - 2.0 * WALL_MARGIN_M)


def record_rssi(h: np.ndarray) -> float:
    """Dataset-layer RSSI: power of the subcarrier-mean channel, floored at
    -150 dB instead of raising on pathological cancellation."""
    mean = complex(np.mean(np.asarray(h, dtype=np.complex128)))
    if mean == 0:
        return RSSI_FLOOR_DB
    return max(rssi_db(mean), RSSI_FLOOR_DB)


def generate_dataset(
    room: RoomSpec,
    num_tx: int,
    num_rx: int,
    seed: int,
    noise_db: float | None = None,
) -> list[ChannelRecord]:
    """Every (tx, rx) pair of uniformly placed interior endpoints.

    Placements come from the stream [seed, 0]; record i*num_rx + j gets its
    noise from the stream [seed, 1 + index], so records can be generated in
    any order or in parallel without changing the output.  noise_db sets the
    per-record SNR of injected complex white noise.  tags carry the tx/rx
    indices, rx doubling as the gateway identity for grouped metrics.
    """
    if num_tx < 1 or num_rx < 1:
        raise DomainError(f"num_tx and num_rx must be >= 1, got {num_tx}, {num_rx}")
    if any(d <= 2.0 * WALL_MARGIN_M for d in room.dimensions):
        raise ConfigError(
            f"room {room.dimensions} too small for the {WALL_MARGIN_M} m placement margin"
        )
    placement = np.random.default_rng([seed, 0])
    tx_positions = _draw_interior(placement, room, num_tx)
    rx_positions = _draw_interior(placement, room, num_rx)

    records = []
    for i in range(num_tx):
        for j in range(num_rx):
            index = i * num_rx + j
            h = synth_channel(room, tx_positions[i], rx_positions[j]).values
            if noise_db is not None:
                noise_rng = np.random.default_rng([seed, 1 + index])
                p_noise = np.mean(np.abs(h) ** 2) / 10.0 ** (noise_db / 10.0)
                scale = np.sqrt(p_noise / 2.0)
                h = h + scale * (
                    noise_rng.standard_normal(h.shape)
                    + 1j * noise_rng.standard_normal(h.shape)
                )
            records.append(
                ChannelRecord(
                    tx_position=tx_positions[i],
                    rx_position=rx_positions[j],
                    h=Channel(h),
                    rssi_db=record_rssi(h),
                    tags={"tx": str(i), "rx": str(j)},
                )
            )
    return records
