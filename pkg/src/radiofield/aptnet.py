"""Attention-gated U-Net backbone with a pyramid-pooling bottleneck.

Feature maps are (batch, channels, sequence) tensors where the sequence
axis holds the voxel samples along one ray; all convolutions are 1-D with
kernel size 3 along that axis.  The encoder downsamples with stride-2 max
pooling, the decoder upsamples with nearest-neighbor interpolation followed
by a convolution, and skip connections pass through an attention gate

    gate(Q, K, V') = softmax(phi((Q + K) / sqrt(d_k))) * V'

with Q from the decoder feature and K, V' from the encoder skip.  phi is a
1x1 convolution to a single channel whose softmax (over the sequence axis)
gates all channels of V'.  The bottleneck applies multi-scale adaptive
pooling with per-scale 1x1 convolutions, concatenation, and a 1x1 fusion.

A plain per-point MLP with the same in/out contract serves as the baseline
backbone.  The "parameter set" of the forward operations is the module
state dict; forwards are deterministic given parameters and reentrant as
long as nobody mutates the parameters mid-pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericalError


@dataclass
class AptConfig:
    depth: int = 2
    base_channels: int = 16
    spp_levels: list[int] = field(default_factory=lambda: [4, 2, 1])
    use_attention_gates: bool = True
    in_dim: int = 63
    out_dim: int = 2

    def __post_init__(self) -> None:
        if self.depth not in (1, 2, 3):
            raise ConfigError(f"depth must be 1, 2 or 3, got {self.depth}")
        if self.base_channels < 8:
            raise ConfigError(f"base_channels must be >= 8, got {self.base_channels}")
        if not self.spp_levels or any(s < 1 for s in self.spp_levels):
            raise ConfigError("spp_levels must be non-empty with every level >= 1")
        if any(later >= earlier for later, earlier in zip(self.spp_levels[1:], self.spp_levels)):
            raise ConfigError(f"spp_levels must be strictly decreasing, got {self.spp_levels}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("in_dim and out_dim must be >= 1")


def validate_feature_map(x: torch.Tensor) -> None:
    if x.dim() != 3:
        raise ConfigError(f"feature map must be (batch, channels, sequence), got shape {tuple(x.shape)}")
    if x.shape[-1] < 1:
        raise ConfigError("feature map sequence length must be >= 1")


class AttentionGate(nn.Module):
    """Skip-connection gate; the last softmax map is kept on
    `last_attention` (detached, shape (batch, 1, sequence)) for inspection."""

    def __init__(self, q_channels: int, kv_channels: int, d_k: int):
        super().__init__()
        if d_k < 1:
            raise ConfigError("d_k must be >= 1")
        self.d_k = d_k
        self.w_q = nn.Conv1d(q_channels, d_k, kernel_size=1, bias=False)
        self.w_k = nn.Conv1d(kv_channels, d_k, kernel_size=1, bias=False)
        self.w_v = nn.Conv1d(kv_channels, kv_channels, kernel_size=1, bias=False)
        self.phi = nn.Conv1d(d_k, 1, kernel_size=1)
        self.last_attention: torch.Tensor | None = None

    def forward(self, q_src: torch.Tensor, kv_src: torch.Tensor) -> torch.Tensor:
        validate_feature_map(q_src)
        validate_feature_map(kv_src)
        if q_src.shape[1] != self.w_q.in_channels or kv_src.shape[1] != self.w_k.in_channels:
            raise ConfigError(
                f"attention gate expects {self.w_q.in_channels}/{self.w_k.in_channels} channels, "
                f"got {q_src.shape[1]}/{kv_src.shape[1]}"
            )
        if q_src.shape[-1] != kv_src.shape[-1]:
            q_src = F.interpolate(q_src, size=kv_src.shape[-1], mode="linear", align_corners=False)
        q = self.w_q(q_src)
        k = self.w_k(kv_src)
        v = self.w_v(kv_src)
        logits = self.phi((q + k) / math.sqrt(self.d_k))
        weights = torch.softmax(logits, dim=-1)
        self.last_attention = weights.detach()
        return weights * v


class SppBottleneck(nn.Module):
    """Pyramid pooling: pool to each level, 1x1 conv per level, resample back,
    concatenate with the input, fuse with a final 1x1 conv.

    Output shape equals input shape.  With strict=True (the standalone op
    contract) a sequence shorter than the largest level is a ConfigError;
    inside the backbone levels are clamped to the running sequence length
    so deep variants keep working on short rays.
    """

    def __init__(self, channels: int, levels: list[int], strict: bool = True):
        super().__init__()
        if not levels or any(s < 1 for s in levels):
            raise ConfigError("levels must be non-empty with every level >= 1")
        self.levels = list(levels)
        self.strict = strict
        self.branch_convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size=1) for _ in levels
        )
        self.fuse = nn.Conv1d((len(levels) + 1) * channels, channels, kernel_size=1)

    def branch_outputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        length = x.shape[-1]
        if self.strict and length < max(self.levels):
            raise ConfigError(
                f"sequence length {length} is shorter than the largest pyramid level {max(self.levels)}"
            )
        outs = []
        for level, conv in zip(self.levels, self.branch_convs):
            pooled = F.adaptive_avg_pool1d(x, min(level, length))
            pooled = conv(pooled)
            outs.append(F.interpolate(pooled, size=length, mode="nearest"))
        return outs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        validate_feature_map(x)
        return self.fuse(torch.cat([x] + self.branch_outputs(x), dim=1))


class DoubleConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv1d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class AptBackbone(nn.Module):
    """Encoder-decoder over per-ray sample sequences.

    Each encoder level applies two kernel-3 convolutions and downsamples by
    2 (ceil mode, so odd lengths stay valid); the decoder mirrors it with
    interpolation up to the matching skip length, so the output sequence
    length always equals the input length.
    """

    def __init__(self, cfg: AptConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * 2**i for i in range(cfg.depth)]
        self.enc_blocks = nn.ModuleList()
        prev = cfg.in_dim
        for c in chans:
            self.enc_blocks.append(DoubleConv(prev, c))
            prev = c
        self.pool = nn.MaxPool1d(kernel_size=2, stride=2, ceil_mode=True)
        bott = chans[-1] * 2
        self.bottleneck = DoubleConv(chans[-1], bott)
        self.spp = SppBottleneck(bott, cfg.spp_levels, strict=False)
        self.up_convs = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for c in reversed(chans):
            self.up_convs.append(nn.Conv1d(2 * c, c, kernel_size=3, padding=1))
            if cfg.use_attention_gates:
                self.gates.append(AttentionGate(c, c, d_k=max(c // 2, 1)))
            self.dec_blocks.append(DoubleConv(2 * c, c))
        self.head = nn.Conv1d(cfg.base_channels, cfg.out_dim, kernel_size=1)

    def _check(self, x: torch.Tensor, stage: str) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite activations at stage '{stage}'")
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        validate_feature_map(x)
        if x.shape[1] != self.cfg.in_dim:
            raise ConfigError(f"expected {self.cfg.in_dim} input channels, got {x.shape[1]}")
        skips = []
        for i, block in enumerate(self.enc_blocks):
            x = self._check(block(x), f"enc{i}")
            skips.append(x)
            x = self.pool(x)
        x = self._check(self.bottleneck(x), "bottleneck")
        x = self._check(self.spp(x), "spp")
        for i, (up, block) in enumerate(zip(self.up_convs, self.dec_blocks)):
            skip = skips[-(i + 1)]
            x = F.interpolate(x, size=skip.shape[-1], mode="nearest")
            x = self._check(F.relu(up(x)), f"up{i}")
            if self.cfg.use_attention_gates:
                skip = self.gates[i](x, skip)
            x = self._check(block(torch.cat([x, skip], dim=1)), f"dec{i}")
        return self._check(self.head(x), "head")

    def attention_maps(self) -> list[torch.Tensor]:
        """Softmax maps recorded by each gate during the last forward."""
        return [g.last_attention for g in self.gates if g.last_attention is not None]


class MlpBackbone(nn.Module):
    """Per-point fully connected baseline with the same (B, C, L) contract."""

    def __init__(self, in_dim: int, hidden_dims: list[int], out_dim: int):
        super().__init__()
        if in_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden_dims):
            raise ConfigError("all MLP dimensions must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        layers: list[nn.Module] = []
        prev = in_dim
        for h in hidden_dims:
            layers.append(nn.Linear(prev, h))
            layers.append(nn.ReLU())
            prev = h
        layers.append(nn.Linear(prev, out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        validate_feature_map(x)
        if x.shape[1] != self.in_dim:
            raise ConfigError(f"expected {self.in_dim} input channels, got {x.shape[1]}")
        y = self.net(x.transpose(1, 2))
        return y.transpose(1, 2)

    def forward_matrix(self, x: torch.Tensor) -> torch.Tensor:
        """Apply the network to a plain (points, in_dim) matrix."""
        if x.dim() != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(f"expected (n, {self.in_dim}) input, got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise NumericalError("non-finite MLP input")
        return self.net(x)


def reset_parameters_(module: nn.Module, seed: int) -> None:
    """Deterministic init: fan-in-scaled uniform weights, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if name.endswith("bias") or p.dim() == 1:
                p.zero_()
            else:
                fan_in = p.shape[1] * (p.shape[2] if p.dim() == 3 else 1)
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def mlp_dims_matching(cfg: AptConfig, n_hidden: int = 4) -> list[int]:
    """Hidden widths giving an MLP roughly the APT variant's parameter count."""
    target = count_parameters(AptBackbone(cfg))
    # parameters of an n_hidden-deep MLP of width w: ~ w*(in+out) + (n-1)*w^2
    a = n_hidden - 1
    b = cfg.in_dim + cfg.out_dim + n_hidden + 1
    w = (-b + math.sqrt(b * b + 4 * a * target)) / (2 * a) if a else target / b
    return [max(8, int(round(w)))] * n_hidden
