"""Complex signal arithmetic and the narrowband channel model.

A transmitted signal is a complex number A*e^{j*theta}.  Every propagation
path scales the amplitude by delta_a and rotates the phase by delta_theta,
and the received signal is the coherent sum over all paths.  The channel is
the ratio received/transmitted, and RSSI is its power in dB.

All math here is double precision; network modules convert at the boundary.
Everything in this module is a pure function and safe to call concurrently.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

# Floor applied by dataset generators when a simulated channel cancels to
# (near) zero power; rssi_db itself refuses zero instead of clamping.
RSSI_FLOOR_DB = -150.0


@dataclass(frozen=True)
class ComplexAmplitude:
    """A complex signal value stored as real and imaginary parts."""

    re: float
    im: float

    @classmethod
    def from_polar(cls, amplitude: float, phase: float) -> "ComplexAmplitude":
        if amplitude < 0:
            raise DomainError(f"amplitude must be >= 0, got {amplitude}")
        return cls(amplitude * math.cos(phase), amplitude * math.sin(phase))

    @classmethod
    def from_complex(cls, z: complex) -> "ComplexAmplitude":
        return cls(float(z.real), float(z.imag))

    def to_polar(self) -> tuple[float, float]:
        """Return (magnitude, phase), phase in (-pi, pi]."""
        return abs(self.as_complex()), cmath.phase(self.as_complex())

    def as_complex(self) -> complex:
        return complex(self.re, self.im)

    @property
    def magnitude(self) -> float:
        return abs(self.as_complex())


@dataclass(frozen=True)
class PathComponent:
    """One propagation path: amplitude attenuation and phase rotation."""

    delta_a: float
    delta_theta: float

    def __post_init__(self) -> None:
        if self.delta_a < 0:
            raise DomainError(f"delta_a must be >= 0, got {self.delta_a}")

    def as_complex(self) -> complex:
        return self.delta_a * cmath.exp(1j * self.delta_theta)


@dataclass
class Channel:
    """Per-subcarrier frequency response, one complex value per subcarrier."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 1 or self.values.size < 1:
            raise DomainError("channel needs a 1-D vector with >= 1 subcarrier")

    def __len__(self) -> int:
        return int(self.values.size)

    def scalar(self) -> ComplexAmplitude:
        """Collapse to a single complex value: the mean over subcarriers."""
        return ComplexAmplitude.from_complex(complex(self.values.mean()))

    def rssi_db(self) -> float:
        return rssi_db(self.scalar())


def channel_from_paths(paths: Sequence[PathComponent]) -> ComplexAmplitude:
    """Coherent channel of a multipath set: sum of delta_a*e^{j*delta_theta}."""
    if not paths:
        raise DomainError("path list must be non-empty")
    total = sum(p.as_complex() for p in paths)
    return ComplexAmplitude.from_complex(total)


def received_signal(x: ComplexAmplitude, paths: Sequence[PathComponent]) -> ComplexAmplitude:
    """Signal after the multipath channel: x times the coherent path sum."""
    h = channel_from_paths(paths)
    return ComplexAmplitude.from_complex(x.as_complex() * h.as_complex())


def rssi_db(h: ComplexAmplitude | complex) -> float:
    """Received power in dB: 10*log10(|h|^2).

    Raises DomainError on |h| = 0 rather than returning -inf; callers that
    want clamping apply RSSI_FLOOR_DB at the dataset layer.
    """
    z = h.as_complex() if isinstance(h, ComplexAmplitude) else complex(h)
    mag = abs(z)
    if mag == 0.0:
        raise DomainError("RSSI of a zero channel is -inf; refusing to clamp silently")
    return 20.0 * math.log10(mag)


def merge_paths(*groups: Iterable[PathComponent]) -> list[PathComponent]:
    """Concatenate path groups; channel_from_paths is linear over this merge."""
    merged: list[PathComponent] = []
    for g in groups:
        merged.extend(g)
    return merged
