"""The two physical subnetworks: attenuation and radiance.

The attenuation network maps voxel positions (only) to a complex
log-attenuation delta = -ln(dA) - j*dTheta plus a material feature vector;
its API deliberately accepts no transmitter or direction inputs.  The
radiance network maps (TX position, direction, feature) to the complex
signal re-emitted by each voxel, one value per OFDM subcarrier, stored as
log-amplitude and phase so the amplitude is nonnegative by construction.

Networks compute in single precision; the renderer converts to double
complex at the module boundary.  Both are deterministic given parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .aptnet import AptBackbone, AptConfig, MlpBackbone, mlp_dims_matching, reset_parameters_
from .encoding import EncoderConfig, positional_encode
from .errors import ConfigError, DomainError, NumericalError
from .scene import SceneConfig


@dataclass
class FieldConfig:
    backbone: str = "apt"
    depth: int = 2
    base_channels: int = 16
    spp_levels: list[int] = field(default_factory=lambda: [4, 2, 1])
    use_attention_gates: bool = True
    feature_dim: int = 64
    position_frequencies: int = 10
    direction_frequencies: int = 4
    num_subcarriers: int = 1
    mlp_hidden_dims: list[int] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.backbone not in ("apt", "mlp"):
            raise ConfigError(f"backbone must be 'apt' or 'mlp', got {self.backbone!r}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.num_subcarriers < 1:
            raise ConfigError("num_subcarriers must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "backbone": self.backbone,
            "depth": self.depth,
            "base_channels": self.base_channels,
            "spp_levels": list(self.spp_levels),
            "use_attention_gates": self.use_attention_gates,
            "feature_dim": self.feature_dim,
            "position_frequencies": self.position_frequencies,
            "direction_frequencies": self.direction_frequencies,
            "num_subcarriers": self.num_subcarriers,
            "mlp_hidden_dims": self.mlp_hidden_dims,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FieldConfig":
        return cls(**d)


@dataclass
class AttenuationOutput:
    """Per-voxel complex log-attenuation (Re >= 0) and feature vectors.

    delta has shape (rays, samples); feature has shape (rays, F, samples).
    """

    delta: torch.Tensor
    feature: torch.Tensor


@dataclass
class RadianceOutput:
    """Per-voxel re-emitted complex signal, shape (rays, samples, subcarriers)."""

    s: torch.Tensor


def _make_backbone(cfg: FieldConfig, in_dim: int, out_dim: int) -> nn.Module:
    if cfg.backbone == "apt":
        return AptBackbone(
            AptConfig(
                depth=cfg.depth,
                base_channels=cfg.base_channels,
                spp_levels=list(cfg.spp_levels),
                use_attention_gates=cfg.use_attention_gates,
                in_dim=in_dim,
                out_dim=out_dim,
            )
        )
    hidden = cfg.mlp_hidden_dims
    if hidden is None:
        hidden = mlp_dims_matching(
            AptConfig(
                depth=cfg.depth,
                base_channels=cfg.base_channels,
                spp_levels=list(cfg.spp_levels),
                use_attention_gates=cfg.use_attention_gates,
                in_dim=in_dim,
                out_dim=out_dim,
            )
        )
    return MlpBackbone(in_dim, hidden, out_dim)


def _fail_on_nonfinite(out: torch.Tensor, what: str) -> None:
    finite = torch.isfinite(out)
    if not finite.all():
        idx = (~finite).nonzero()[0].tolist()
        raise NumericalError(f"non-finite {what} output at index {idx}")


class AttenuationField(nn.Module):
    def __init__(self, scene: SceneConfig, cfg: FieldConfig):
        super().__init__()
        self.scene = scene
        self.cfg = cfg
        self.encoder = EncoderConfig(cfg.position_frequencies, include_input=True)
        self.in_dim = self.encoder.output_dim(3)
        self.backbone = _make_backbone(cfg, self.in_dim, 2 + cfg.feature_dim)
        self._warned_clamp = False

    def encode_positions(self, positions: np.ndarray) -> torch.Tensor:
        """Clamp to scene bounds, normalize, encode; returns (rays, E, samples)."""
        p = np.asarray(positions, dtype=np.float64)
        if p.ndim != 3 or p.shape[-1] != 3:
            raise DomainError(f"positions must be (rays, samples, 3), got {p.shape}")
        inside = self.scene.contains(p)
        if not inside.all():
            if not self._warned_clamp:
                self._warned_clamp = True
                warnings.warn(
                    f"{int((~inside).sum())} voxel positions outside scene bounds were "
                    "clamped (reported once; rays routinely exit the bounding box)",
                    stacklevel=2,
                )
            p = np.clip(p, self.scene.bounds_min, self.scene.bounds_max)
        enc = positional_encode(self.scene.normalize_positions(p), self.encoder)
        return torch.from_numpy(np.ascontiguousarray(np.swapaxes(enc, 1, 2))).float()

    def forward(self, positions: np.ndarray) -> AttenuationOutput:
        out = self.backbone(self.encode_positions(positions))
        _fail_on_nonfinite(out, "attenuation")
        delta = torch.complex(F.softplus(out[:, 0]), out[:, 1])
        return AttenuationOutput(delta=delta, feature=out[:, 2:])


class RadianceField(nn.Module):
    def __init__(self, scene: SceneConfig, cfg: FieldConfig):
        super().__init__()
        self.scene = scene
        self.cfg = cfg
        self.pos_encoder = EncoderConfig(cfg.position_frequencies, include_input=True)
        self.dir_encoder = EncoderConfig(cfg.direction_frequencies, include_input=True)
        self.in_dim = cfg.feature_dim + self.pos_encoder.output_dim(3) + self.dir_encoder.output_dim(3)
        self.backbone = _make_backbone(cfg, self.in_dim, 2 * cfg.num_subcarriers)

    def forward(self, tx_position: np.ndarray, directions: np.ndarray, feature: torch.Tensor) -> RadianceOutput:
        tx = np.asarray(tx_position, dtype=np.float64).reshape(3)
        dirs = np.asarray(directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[-1] != 3:
            raise DomainError(f"directions must be (rays, 3), got {dirs.shape}")
        norms = np.linalg.norm(dirs, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DomainError("radiance directions must be unit vectors (|w| = 1 +- 1e-6)")
        if feature.dim() != 3 or feature.shape[0] != dirs.shape[0] or feature.shape[1] != self.cfg.feature_dim:
            raise ConfigError(
                f"feature must be (rays={dirs.shape[0]}, F={self.cfg.feature_dim}, samples), "
                f"got {tuple(feature.shape)}"
            )
        n_rays, _, n_samples = feature.shape
        tx_enc = positional_encode(self.scene.normalize_positions(tx), self.pos_encoder)
        dir_enc = positional_encode(dirs, self.dir_encoder)
        tx_t = torch.from_numpy(tx_enc).float().view(1, -1, 1).expand(n_rays, -1, n_samples)
        dir_t = torch.from_numpy(dir_enc).float().unsqueeze(-1).expand(-1, -1, n_samples)
        out = self.backbone(torch.cat([feature, tx_t, dir_t], dim=1))
        _fail_on_nonfinite(out, "radiance")
        k = self.cfg.num_subcarriers
        # Saturate the log-amplitude smoothly at +-8 (|S| <= e^8): near zero
        # tanh is the identity, so ordinary outputs are untouched, but an
        # optimizer overshoot can neither overflow the exponential nor park
        # parameters in a zero-gradient zone the way a hard clamp would.
        log_amp = 8.0 * torch.tanh(out[:, :k].transpose(1, 2) / 8.0)
        phase = out[:, k:].transpose(1, 2)
        return RadianceOutput(s=torch.polar(torch.exp(log_amp), phase))


@dataclass
class FieldPair:
    """Attenuation and radiance networks that render together."""

    attenuation: AttenuationField
    radiance: RadianceField
    cfg: FieldConfig

    def parameters(self):
        yield from self.attenuation.parameters()
        yield from self.radiance.parameters()

    def state_dict(self) -> dict[str, torch.Tensor]:
        out = {f"attenuation.{k}": v for k, v in self.attenuation.state_dict().items()}
        out.update({f"radiance.{k}": v for k, v in self.radiance.state_dict().items()})
        return out

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        att = {k.split(".", 1)[1]: v for k, v in state.items() if k.startswith("attenuation.")}
        rad = {k.split(".", 1)[1]: v for k, v in state.items() if k.startswith("radiance.")}
        self.attenuation.load_state_dict(att)
        self.radiance.load_state_dict(rad)

    def train(self) -> None:
        self.attenuation.train()
        self.radiance.train()

    def eval(self) -> None:
        self.attenuation.eval()
        self.radiance.eval()


def make_fields(scene: SceneConfig, cfg: FieldConfig) -> FieldPair:
    """Build both subnetworks with deterministic seeded initialization."""
    att = AttenuationField(scene, cfg)
    rad = RadianceField(scene, cfg)
    reset_parameters_(att, cfg.seed)
    reset_parameters_(rad, cfg.seed + 1)
    return FieldPair(attenuation=att, radiance=rad, cfg=cfg)
