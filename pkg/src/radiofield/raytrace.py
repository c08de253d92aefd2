"""Ray construction, voxel sampling, and complex signal accumulation.

A ray from the receiver in direction w is sampled at N radial distances in
(0, D]; voxel n contributes its re-emitted signal attenuated by every voxel
between it and the receiver:

    R_ray = sum_n exp(-sum_{m<n} delta_m) * s_n

with complex delta (Re >= 0), so exp(-delta) = dA * e^{j dTheta}.  A grid of
directions is rendered and aggregated into a per-subcarrier channel (the
arithmetic mean over directions), an RSSI value, and a normalized spatial
spectrum.  Accumulation runs in double-precision complex regardless of the
field networks' precision, and is differentiable end to end.

Rays are independent; accumulation within a ray is fixed front-to-back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .core import Channel, ComplexAmplitude, rssi_db
from .errors import DomainError, NumericalError
from .fields import FieldPair
from .scene import SceneConfig

SAMPLE_MODES = ("uniform", "midpoint", "stratified")


@dataclass
class DirectionGrid:
    """Unit directions at the centers of an azimuth x elevation grid.

    Cells tile azimuth [0, 2pi) x the scene's elevation span (upper
    hemisphere by default); flat index = elevation_idx * azimuth_bins +
    azimuth_idx, matching spectrum row/column order.
    """

    azimuth_bins: int
    elevation_bins: int
    directions: np.ndarray

    def __post_init__(self) -> None:
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if self.directions.shape != (self.azimuth_bins * self.elevation_bins, 3):
            raise DomainError("directions must have shape (azimuth_bins * elevation_bins, 3)")
        norms = np.linalg.norm(self.directions, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("grid directions must be unit vectors")

    def __len__(self) -> int:
        return self.azimuth_bins * self.elevation_bins

    @classmethod
    def from_scene(cls, scene: SceneConfig) -> "DirectionGrid":
        return cls.build(scene.azimuth_bins, scene.elevation_bins, scene.elevation_span)

    @classmethod
    def build(
        cls,
        azimuth_bins: int,
        elevation_bins: int,
        elevation_span: tuple[float, float] = (0.0, np.pi / 2),
    ) -> "DirectionGrid":
        az = (np.arange(azimuth_bins) + 0.5) * 2 * np.pi / azimuth_bins
        lo, hi = elevation_span
        el = lo + (np.arange(elevation_bins) + 0.5) * (hi - lo) / elevation_bins
        el_g, az_g = np.meshgrid(el, az, indexing="ij")
        dirs = np.stack(
            [np.cos(el_g) * np.cos(az_g), np.cos(el_g) * np.sin(az_g), np.sin(el_g)],
            axis=-1,
        ).reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return cls(azimuth_bins, elevation_bins, dirs)


@dataclass
class RayBatch:
    """Sampled voxel geometry for rays cast from one receiver.

    radial_distances (N,) are shared by all rays of the batch, so
    sample_positions[i, n] = rx_position + radial_distances[n] * directions[i].
    """

    rx_position: np.ndarray
    directions: np.ndarray
    sample_positions: np.ndarray
    radial_distances: np.ndarray


def sample_distances(
    n_samples: int,
    d_max: float,
    mode: str = "midpoint",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Radial distances r_1 < ... < r_N in (0, d_max].

    uniform: r_n = n * d/N; midpoint: r_n = (n - 1/2) * d/N; stratified: one
    uniform draw per bin ((n-1) d/N, n d/N], requires rng.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if d_max <= 0:
        raise DomainError("d_max must be positive")
    if mode not in SAMPLE_MODES:
        raise DomainError(f"unknown sample mode {mode!r}, expected one of {SAMPLE_MODES}")
    n = np.arange(1, n_samples + 1, dtype=np.float64)
    width = d_max / n_samples
    if mode == "uniform":
        return n * width
    if mode == "midpoint":
        return (n - 0.5) * width
    if rng is None:
        raise DomainError("stratified sampling requires an rng")
    # (0, 1] draws keep every distance strictly positive
    u = 1.0 - rng.random(n_samples)
    return (n - 1.0 + u) * width


def sample_ray(
    rx: np.ndarray,
    direction: np.ndarray,
    n_samples: int,
    d_max: float,
    mode: str = "midpoint",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Voxel positions along one ray; returns (positions (N, 3), distances (N,)).

    V_1 is nearest the receiver and V_N farthest; r = 0 (the receiver
    itself) is always excluded.
    """
    rx = np.asarray(rx, dtype=np.float64).reshape(3)
    w = np.asarray(direction, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise DomainError("ray direction must be nonzero")
    if abs(norm - 1.0) > 1e-9:
        raise DomainError("ray direction must be a unit vector")
    r = sample_distances(n_samples, d_max, mode, rng)
    return rx[None, :] + r[:, None] * w[None, :], r


def build_ray_batch(
    rx: np.ndarray,
    grid: DirectionGrid,
    n_samples: int,
    d_max: float,
    mode: str = "midpoint",
    rng: np.random.Generator | None = None,
) -> RayBatch:
    """Sample every grid direction from one receiver with shared distances."""
    rx = np.asarray(rx, dtype=np.float64).reshape(3)
    r = sample_distances(n_samples, d_max, mode, rng)
    positions = rx[None, None, :] + r[None, :, None] * grid.directions[:, None, :]
    return RayBatch(
        rx_position=rx,
        directions=grid.directions,
        sample_positions=positions,
        radial_distances=r,
    )


def accumulate_rays(delta: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Batched front-to-back accumulation.

    delta: (rays, N) complex with Re >= 0; s: (rays, N) or (rays, N, K)
    complex.  Returns (rays,) or (rays, K).  Runs in complex128.
    """
    if delta.shape[:2] != s.shape[:2]:
        raise DomainError(f"delta {tuple(delta.shape)} and s {tuple(s.shape)} lengths differ")
    if torch.any(delta.real < -1e-9):
        raise DomainError("Re(delta) must be >= 0 (attenuation never amplifies)")
    delta = delta.to(torch.complex128)
    s = s.to(torch.complex128)
    prefix = torch.cumsum(delta, dim=1) - delta  # empty sum for n = 1
    transmittance = torch.exp(-prefix)
    if s.dim() == 3:
        transmittance = transmittance.unsqueeze(-1)
    return (transmittance * s).sum(dim=1)


def accumulate_ray(delta: np.ndarray, s: np.ndarray) -> ComplexAmplitude:
    """Single-ray accumulation of re-emitted signals:
    sum_n exp(-sum_{m<n} delta_m) * s_n."""
    d = np.atleast_1d(np.asarray(delta, dtype=np.complex128))
    v = np.atleast_1d(np.asarray(s, dtype=np.complex128))
    if d.ndim != 1 or v.ndim != 1 or d.shape != v.shape:
        raise DomainError(f"delta and s must be equal-length vectors, got {d.shape} vs {v.shape}")
    out = accumulate_rays(torch.from_numpy(d).unsqueeze(0), torch.from_numpy(v).unsqueeze(0))
    return ComplexAmplitude.from_complex(complex(out[0]))


@dataclass
class RenderResult:
    per_direction: np.ndarray  # (grid, K) complex128
    channel: Channel
    rssi: float
    spectrum: np.ndarray  # (elevation_bins, azimuth_bins) in [0, 1]


def render_rays(batch: RayBatch, tx_positions: np.ndarray, fields: FieldPair) -> torch.Tensor:
    """Differentiable per-direction signals for one or more transmitters
    sharing this ray batch; returns (n_tx, rays, K) complex128.

    The attenuation network runs once on the shared voxel geometry; the
    radiance network sees each transmitter with the reversed ray direction
    (the voxel re-emits toward the receiver).
    """
    tx = np.asarray(tx_positions, dtype=np.float64).reshape(-1, 3)
    try:
        att = fields.attenuation(batch.sample_positions)
    except NumericalError as e:
        raise NumericalError(f"attenuation failed (index = [direction, ...]): {e}") from e
    n_rays, n_samples = att.delta.shape
    outputs = []
    for i in range(tx.shape[0]):
        try:
            rad = fields.radiance(tx[i], -batch.directions, att.feature)
        except NumericalError as e:
            raise NumericalError(f"radiance failed for tx {i} (index = [direction, ...]): {e}") from e
        outputs.append(accumulate_rays(att.delta, rad.s))
    return torch.stack(outputs, dim=0)


def render(
    rx: np.ndarray,
    tx: np.ndarray,
    grid: DirectionGrid,
    scene: SceneConfig,
    fields: FieldPair,
    sample_mode: str = "midpoint",
    rng: np.random.Generator | None = None,
    swap_tx_rx: bool = False,
) -> RenderResult:
    """Render the channel seen at rx from tx over the direction grid.

    channel is the arithmetic mean of per-direction values (uniform
    weighting over grid cells); spectrum is per-direction power averaged
    over subcarriers and normalized to [0, 1]; rssi is the power of the
    channel collapsed over subcarriers.  With swap_tx_rx the rays are cast
    from the transmitter instead.
    """
    if len(grid) < 1:
        raise DomainError("direction grid must be non-empty")
    origin, emitter = (tx, rx) if swap_tx_rx else (rx, tx)
    batch = build_ray_batch(origin, grid, scene.n_samples, scene.ray_length, sample_mode, rng)
    with torch.no_grad():
        per_direction = render_rays(batch, emitter, fields)[0]
    per_dir = per_direction.numpy()
    channel = Channel(per_dir.mean(axis=0))
    power = np.mean(np.abs(per_dir) ** 2, axis=-1)
    peak = power.max()
    spectrum = (power / peak if peak > 0 else power).reshape(grid.elevation_bins, grid.azimuth_bins)
    return RenderResult(
        per_direction=per_dir,
        channel=channel,
        rssi=rssi_db(channel.scalar()),
        spectrum=spectrum,
    )


def spectrum_to_csv(spectrum: np.ndarray, path) -> None:
    """Rows are elevation bins, columns azimuth bins."""
    np.savetxt(path, np.asarray(spectrum, dtype=np.float64), delimiter=",", fmt="%.17g")


def spectrum_to_png(spectrum: np.ndarray, path) -> None:
    """8-bit grayscale, value = normalized power * 255."""
    arr = np.asarray(spectrum, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise DomainError("spectrum values must lie in [0, 1]")
    img = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
