"""Tests for the attention-gated U-Net backbone, the pyramid-pooling
bottleneck, and the per-point MLP baseline."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from radiofield.aptnet import (
    AptBackbone,
    AptConfig,
    AttentionGate,
    MlpBackbone,
    SppBottleneck,
    count_parameters,
    mlp_dims_matching,
    reset_parameters_,
)
from radiofield.errors import ConfigError, NumericalError


def _identity_conv_(conv):
    """Freeze a 1x1 convolution to the identity map."""
    with torch.no_grad():
        eye = torch.eye(conv.out_channels, conv.in_channels)
        conv.weight.copy_(eye.unsqueeze(-1))
        if conv.bias is not None:
            conv.bias.zero_()


def _adaptive_avg_pool_oracle(x, out_len):
    """Hand-rolled adaptive average pooling: bin i covers
    [floor(i*L/out), ceil((i+1)*L/out))."""
    length = x.shape[-1]
    cols = []
    for i in range(out_len):
        start = (i * length) // out_len
        end = -((-(i + 1) * length) // out_len)
        cols.append(x[..., start:end].mean(dim=-1))
    return torch.stack(cols, dim=-1)


def _nearest_resize_oracle(x, out_len):
    """Hand-rolled nearest-neighbor resampling: source index floor(i*L/out)."""
    length = x.shape[-1]
    idx = torch.arange(out_len) * length // out_len
    return x[..., idx]


class TestAttentionGate:
    def test_weights_sum_to_one_every_gate_depth_three(self):
        """After any forward pass, every gate's softmax map sums to 1 over the
        sequence axis, for each batch element."""
        cfg = AptConfig(depth=3, base_channels=8, in_dim=8, out_dim=2)
        net = AptBackbone(cfg)
        reset_parameters_(net, seed=0)
        x = torch.from_numpy(np.random.default_rng(1).standard_normal((2, 8, 24))).float()
        net(x)
        maps = net.attention_maps()
        assert len(maps) == 3
        for m in maps:
            sums = m.sum(dim=-1)
            np.testing.assert_allclose(sums.numpy(), 1.0, rtol=0, atol=1e-5)

    def test_zero_value_source_gives_zero_output(self):
        """With the key/value source all zero the gated value is zero no
        matter what the query carries."""
        gate = AttentionGate(q_channels=4, kv_channels=4, d_k=2)
        q = torch.from_numpy(np.random.default_rng(2).standard_normal((1, 4, 6))).float()
        out = gate(q, torch.zeros(1, 4, 6))
        assert torch.all(out == 0)

    def test_scalar_toy_matches_hand_computation(self):
        """One channel, length 3, every projection frozen to the identity and
        d_k = 1: logits are (q + k) = [2, 4, 6] and the output is
        softmax([2, 4, 6]) * [1, 2, 3], checked against scalar math."""
        gate = AttentionGate(q_channels=1, kv_channels=1, d_k=1)
        with torch.no_grad():
            gate.w_q.weight.fill_(1.0)
            gate.w_k.weight.fill_(1.0)
            gate.w_v.weight.fill_(1.0)
            gate.phi.weight.fill_(1.0)
            gate.phi.bias.zero_()
        x = torch.tensor([[[1.0, 2.0, 3.0]]])
        out = gate(x, x).detach().numpy().ravel()
        exps = [math.exp(2.0), math.exp(4.0), math.exp(6.0)]
        total = sum(exps)
        expected = [exps[i] / total * (i + 1.0) for i in range(3)]
        np.testing.assert_allclose(out, expected, rtol=1e-6, atol=0)
        np.testing.assert_allclose(gate.last_attention.sum().item(), 1.0, rtol=0, atol=1e-6)

    def test_query_resampled_to_value_length(self):
        gate = AttentionGate(q_channels=3, kv_channels=3, d_k=2)
        q = torch.from_numpy(np.random.default_rng(3).standard_normal((2, 3, 4))).float()
        kv = torch.from_numpy(np.random.default_rng(4).standard_normal((2, 3, 9))).float()
        out = gate(q, kv)
        assert out.shape == (2, 3, 9)


class TestSppBottleneck:
    def test_constant_input_constant_branches(self):
        """Pooling a sequence-constant input at any level returns the same
        constant, so with identity branch convolutions every pre-fusion
        branch reproduces the input."""
        spp = SppBottleneck(channels=4, levels=[4, 2, 1])
        for conv in spp.branch_convs:
            _identity_conv_(conv)
        const = torch.arange(1.0, 5.0).reshape(1, 4, 1).expand(1, 4, 12).contiguous()
        for branch in spp.branch_outputs(const):
            np.testing.assert_allclose(branch.detach().numpy(), const.numpy(), rtol=0, atol=1e-6)

    def test_output_shape_matches_input(self):
        spp = SppBottleneck(channels=16, levels=[4, 2, 1])
        x = torch.from_numpy(np.random.default_rng(5).standard_normal((2, 16, 32))).float()
        assert spp(x).shape == (2, 16, 32)

    def test_single_level_is_global_mean(self):
        """Levels [1] with an identity branch convolution broadcast the
        sequence mean back over the whole sequence."""
        spp = SppBottleneck(channels=3, levels=[1])
        _identity_conv_(spp.branch_convs[0])
        x = torch.from_numpy(np.random.default_rng(6).standard_normal((2, 3, 10))).float()
        branch = spp.branch_outputs(x)[0]
        expected = x.mean(dim=-1, keepdim=True).expand_as(x)
        np.testing.assert_allclose(branch.detach().numpy(), expected.numpy(), rtol=0, atol=1e-6)

    def test_branches_match_hand_pooling(self):
        """Each branch equals hand-rolled pooling, 1x1 convolution, and
        nearest resampling applied with the module's own weights."""
        spp = SppBottleneck(channels=5, levels=[4, 2, 1])
        x = torch.from_numpy(np.random.default_rng(7).standard_normal((2, 5, 11))).float()
        for level, conv, branch in zip(spp.levels, spp.branch_convs, spp.branch_outputs(x)):
            pooled = _adaptive_avg_pool_oracle(x, level)
            projected = torch.einsum("oc,bcl->bol", conv.weight[:, :, 0], pooled) + conv.bias.view(1, -1, 1)
            expected = _nearest_resize_oracle(projected, x.shape[-1])
            np.testing.assert_allclose(branch.detach().numpy(), expected.detach().numpy(), rtol=0, atol=1e-5)

    def test_short_sequence_rejected_when_strict(self):
        spp = SppBottleneck(channels=2, levels=[4, 2, 1])
        with pytest.raises(ConfigError):
            spp(torch.zeros(1, 2, 3))

    def test_short_sequence_clamped_when_not_strict(self):
        spp = SppBottleneck(channels=2, levels=[4, 2, 1], strict=False)
        assert spp(torch.zeros(1, 2, 3)).shape == (1, 2, 3)


class TestAptBackbone:
    def test_output_shape_contract(self):
        """(batch, in_dim, length) maps to (batch, out_dim, length) for every
        depth, including lengths that do not divide evenly."""
        for depth, length in [(1, 16), (2, 16), (3, 16), (3, 7), (1, 1)]:
            cfg = AptConfig(depth=depth, base_channels=8, in_dim=6, out_dim=3)
            net = AptBackbone(cfg)
            reset_parameters_(net, seed=depth)
            x = torch.from_numpy(np.random.default_rng(depth).standard_normal((2, 6, length))).float()
            out = net(x)
            assert out.shape == (2, 3, length)
            assert torch.isfinite(out).all()

    def test_gateless_depth_one_matches_replay_oracle(self):
        """With attention gates off at depth 1 the forward pass equals an
        independent replay of the plain U-Net wiring using the module's own
        parameters: double conv, ceil-mode max pool, bottleneck double conv,
        pyramid pooling, nearest upsample, skip concatenation, head."""
        cfg = AptConfig(depth=1, base_channels=8, in_dim=5, out_dim=2, use_attention_gates=False)
        net = AptBackbone(cfg)
        reset_parameters_(net, seed=9)
        x = torch.from_numpy(np.random.default_rng(9).standard_normal((2, 5, 13))).float()

        with torch.no_grad():
            actual = net(x)

            def double_conv(block, t):
                c0, c1 = block.block[0], block.block[2]
                t = F.relu(F.conv1d(t, c0.weight, c0.bias, padding=1))
                return F.relu(F.conv1d(t, c1.weight, c1.bias, padding=1))

            skip = double_conv(net.enc_blocks[0], x)
            t = F.max_pool1d(skip, kernel_size=2, stride=2, ceil_mode=True)
            t = double_conv(net.bottleneck, t)
            branches = []
            for level, conv in zip(net.spp.levels, net.spp.branch_convs):
                pooled = _adaptive_avg_pool_oracle(t, min(level, t.shape[-1]))
                pooled = F.conv1d(pooled, conv.weight, conv.bias)
                branches.append(_nearest_resize_oracle(pooled, t.shape[-1]))
            t = F.conv1d(torch.cat([t] + branches, dim=1), net.spp.fuse.weight, net.spp.fuse.bias)
            t = _nearest_resize_oracle(t, skip.shape[-1])
            t = F.relu(F.conv1d(t, net.up_convs[0].weight, net.up_convs[0].bias, padding=1))
            t = double_conv(net.dec_blocks[0], torch.cat([t, skip], dim=1))
            expected = F.conv1d(t, net.head.weight, net.head.bias)

        np.testing.assert_allclose(actual.numpy(), expected.numpy(), rtol=0, atol=1e-6)

    def test_position_sensitivity_versus_pointwise_baseline(self):
        """Convolutions mix neighboring samples, so reversing the sequence is
        not equivalent to reversing the output; the per-point MLP, by
        contrast, commutes with any reordering."""
        cfg = AptConfig(depth=2, base_channels=8, in_dim=4, out_dim=2)
        net = AptBackbone(cfg)
        reset_parameters_(net, seed=21)
        mlp = MlpBackbone(in_dim=4, hidden_dims=[16, 16], out_dim=2)
        reset_parameters_(mlp, seed=21)
        x = torch.from_numpy(np.random.default_rng(21).standard_normal((1, 4, 12))).float()
        flipped = torch.flip(x, dims=[-1])
        with torch.no_grad():
            conv_mismatch = (net(flipped) - torch.flip(net(x), dims=[-1])).abs().max().item()
            mlp_out = mlp(flipped)
            mlp_ref = torch.flip(mlp(x), dims=[-1])
        assert conv_mismatch > 1e-4
        np.testing.assert_allclose(mlp_out.numpy(), mlp_ref.numpy(), rtol=0, atol=1e-6)

    def test_forward_is_deterministic(self):
        cfg = AptConfig(depth=2, base_channels=8, in_dim=4, out_dim=2)
        net = AptBackbone(cfg)
        reset_parameters_(net, seed=3)
        x = torch.from_numpy(np.random.default_rng(3).standard_normal((2, 4, 10))).float()
        with torch.no_grad():
            assert torch.equal(net(x), net(x))

    def test_non_finite_activation_reported_with_stage(self):
        cfg = AptConfig(depth=1, base_channels=8, in_dim=4, out_dim=2)
        net = AptBackbone(cfg)
        reset_parameters_(net, seed=4)
        x = torch.full((1, 4, 8), torch.inf)
        with pytest.raises(NumericalError, match="enc0"):
            net(x)

    def test_wrong_channel_count_rejected(self):
        net = AptBackbone(AptConfig(depth=1, base_channels=8, in_dim=4, out_dim=2))
        with pytest.raises(ConfigError):
            net(torch.zeros(1, 5, 8))


class TestAptConfigValidation:
    def test_depth_out_of_range(self):
        with pytest.raises(ConfigError):
            AptConfig(depth=4)
        with pytest.raises(ConfigError):
            AptConfig(depth=0)

    def test_base_channels_minimum(self):
        with pytest.raises(ConfigError):
            AptConfig(base_channels=4)

    def test_spp_levels_strictly_decreasing(self):
        with pytest.raises(ConfigError):
            AptConfig(spp_levels=[2, 4])
        with pytest.raises(ConfigError):
            AptConfig(spp_levels=[4, 4, 1])
        AptConfig(spp_levels=[4, 2, 1])
        AptConfig(spp_levels=[8])


class TestMlpBackbone:
    def test_zero_parameters_zero_output(self):
        mlp = MlpBackbone(in_dim=4, hidden_dims=[8], out_dim=3)
        with torch.no_grad():
            for p in mlp.parameters():
                p.zero_()
        x = torch.from_numpy(np.random.default_rng(8).standard_normal((2, 4, 5))).float()
        assert torch.all(mlp(x) == 0)

    def test_identity_layers_reduce_to_nonlinearity(self):
        """Identity-shaped layers initialized to the identity leave only the
        hidden nonlinearity: output = relu(x)."""
        d = 4
        mlp = MlpBackbone(in_dim=d, hidden_dims=[d], out_dim=d)
        with torch.no_grad():
            mlp.net[0].weight.copy_(torch.eye(d))
            mlp.net[0].bias.zero_()
            mlp.net[2].weight.copy_(torch.eye(d))
            mlp.net[2].bias.zero_()
        x = torch.from_numpy(np.random.default_rng(10).standard_normal((6, d))).float()
        np.testing.assert_allclose(mlp.forward_matrix(x).detach().numpy(), F.relu(x).numpy(), rtol=0, atol=1e-7)

    def test_two_layer_toy_matches_matrix_oracle(self):
        """A 2 -> 3 -> 1 network with pinned weights equals the explicit
        matrix product W2 relu(W1 x + b1) + b2 computed with numpy."""
        mlp = MlpBackbone(in_dim=2, hidden_dims=[3], out_dim=1)
        w1 = np.array([[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]])
        b1 = np.array([0.1, -0.2, 0.3])
        w2 = np.array([[1.0, -0.5, 2.0]])
        b2 = np.array([0.05])
        with torch.no_grad():
            mlp.net[0].weight.copy_(torch.from_numpy(w1).float())
            mlp.net[0].bias.copy_(torch.from_numpy(b1).float())
            mlp.net[2].weight.copy_(torch.from_numpy(w2).float())
            mlp.net[2].bias.copy_(torch.from_numpy(b2).float())
        x = np.random.default_rng(12).standard_normal((5, 2))
        expected = np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2
        out = mlp.forward_matrix(torch.from_numpy(x).float()).detach().numpy()
        np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-6)

    def test_sequence_contract_matches_matrix_form(self):
        mlp = MlpBackbone(in_dim=3, hidden_dims=[7], out_dim=2)
        reset_parameters_(mlp, seed=13)
        x = torch.from_numpy(np.random.default_rng(13).standard_normal((2, 3, 6))).float()
        seq = mlp(x)
        flat = mlp.forward_matrix(x.transpose(1, 2).reshape(-1, 3)).reshape(2, 6, 2).transpose(1, 2)
        np.testing.assert_allclose(seq.detach().numpy(), flat.detach().numpy(), rtol=0, atol=1e-6)


class TestParameterHelpers:
    def test_reset_is_deterministic(self):
        a = AptBackbone(AptConfig(depth=2, base_channels=8, in_dim=4, out_dim=2))
        b = AptBackbone(AptConfig(depth=2, base_channels=8, in_dim=4, out_dim=2))
        reset_parameters_(a, seed=17)
        reset_parameters_(b, seed=17)
        for (na, pa), (nb, pb) in zip(
            sorted(a.named_parameters()), sorted(b.named_parameters())
        ):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_matched_mlp_parameter_count(self):
        """The width solver lands the baseline within 20% of the attention
        network's parameter count."""
        cfg = AptConfig(depth=2, base_channels=16, in_dim=63, out_dim=2)
        target = count_parameters(AptBackbone(cfg))
        dims = mlp_dims_matching(cfg)
        actual = count_parameters(MlpBackbone(cfg.in_dim, dims, cfg.out_dim))
        assert abs(actual - target) / target < 0.2
