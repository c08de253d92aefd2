"""Tests for the sinusoidal coordinate encoding."""

import math

import numpy as np
import pytest

from radiofield.encoding import (
    DIRECTION_ENCODER,
    POSITION_ENCODER,
    EncoderConfig,
    positional_encode,
)
from radiofield.errors import DomainError


class TestOutputLayout:
    def test_zero_input_two_frequencies(self):
        """x = [0] with L = 2 and the raw input included encodes to
        [0, sin 0, cos 0, sin 0, cos 0] = [0, 0, 1, 0, 1]."""
        out = positional_encode(np.array([0.0]), EncoderConfig(num_frequencies=2, include_input=True))
        np.testing.assert_allclose(out, [0.0, 0.0, 1.0, 0.0, 1.0], rtol=0, atol=1e-15)

    def test_output_dim_three_coords_ten_frequencies(self):
        cfg = EncoderConfig(num_frequencies=10, include_input=True)
        assert cfg.output_dim(3) == 63
        out = positional_encode(np.zeros(3), cfg)
        assert out.shape == (63,)

    def test_quarter_without_input(self):
        """x = 0.25 at L = 1 without the raw value gives
        [sin(pi/4), cos(pi/4)]."""
        out = positional_encode(np.array([0.25]), EncoderConfig(num_frequencies=1, include_input=False))
        np.testing.assert_allclose(out, [math.sin(math.pi / 4), math.cos(math.pi / 4)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(out, [0.70711, 0.70711], rtol=0, atol=5e-6)

    def test_batch_shape_preserved(self):
        cfg = EncoderConfig(num_frequencies=4, include_input=True)
        x = np.zeros((7, 5, 3))
        out = positional_encode(x, cfg)
        assert out.shape == (7, 5, cfg.output_dim(3))

    def test_default_encoders(self):
        assert POSITION_ENCODER.num_frequencies == 10
        assert DIRECTION_ENCODER.num_frequencies == 4
        assert POSITION_ENCODER.output_dim(3) == 63
        assert DIRECTION_ENCODER.output_dim(3) == 27


class TestValueRanges:
    def test_sinusoid_bands_bounded(self):
        """Every frequency band stays inside [-1, 1] while the passthrough
        band reproduces the input exactly."""
        rng = np.random.default_rng(3)
        x = rng.uniform(-1.0, 1.0, size=(100, 3))
        cfg = EncoderConfig(num_frequencies=6, include_input=True)
        out = positional_encode(x, cfg)
        np.testing.assert_allclose(out[..., :3], x, rtol=0, atol=0)
        bands = out[..., 3:]
        assert np.all(bands >= -1.0) and np.all(bands <= 1.0)

    def test_non_finite_rejected(self):
        cfg = EncoderConfig(num_frequencies=2, include_input=True)
        with pytest.raises(DomainError):
            positional_encode(np.array([np.nan]), cfg)
        with pytest.raises(DomainError):
            positional_encode(np.array([np.inf]), cfg)

    def test_negative_frequency_count_rejected(self):
        with pytest.raises(DomainError):
            EncoderConfig(num_frequencies=-1)


class TestInjectivity:
    def test_distinct_inputs_encode_distinctly(self):
        """Spot check: random coordinate pairs in [-1, 1] never collide in
        the encoded space (the passthrough band alone guarantees this)."""
        rng = np.random.default_rng(19)
        cfg = EncoderConfig(num_frequencies=10, include_input=True)
        a = rng.uniform(-1.0, 1.0, size=(100_000, 1))
        b = rng.uniform(-1.0, 1.0, size=(100_000, 1))
        distinct = a[:, 0] != b[:, 0]
        ea = positional_encode(a, cfg)
        eb = positional_encode(b, cfg)
        collisions = np.all(ea == eb, axis=-1) & distinct
        assert not collisions.any()
