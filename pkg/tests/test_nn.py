import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import gradcases
from oracles import decoder_reference, encoder_reference, fd_check
from planer_aad.nn import functional as Fn
from planer_aad.nn.checkpoint import CheckpointError, load_state, read_header, save_state
from planer_aad.nn.layers import (
    LAYER_KINDS,
    BatchNorm,
    Conv3x3,
    Linear,
    TransformerDecoderLayer,
    TransformerEncoderLayer,
    TransposedConv2x2,
    transformer_decoder_layer,
    transformer_encoder_layer,
)
from planer_aad.nn.optim import AdamW, TrainConfig, adamw_step, lr_at_epoch


def T(x):
    return torch.tensor(x, dtype=torch.float64)


# -- activations and losses -------------------------------------------------

def test_leaky_relu_examples():
    assert Fn.leaky_relu(T(3.0), 0.01).item() == 3.0
    assert Fn.leaky_relu(T(-2.0), 0.01).item() == pytest.approx(-0.02)
    assert Fn.leaky_relu(T(-5.0), 0.0).item() == 0.0
    assert Fn.relu(T(-5.0)).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_leaky_relu_monotone(values):
    x = torch.sort(T(values)).values
    assert (torch.diff(Fn.leaky_relu(x)) >= 0).all()


def test_mse_examples():
    assert Fn.mse_loss(T([1.0, 2.0]), T([1.0, 2.0])).item() == 0.0
    assert Fn.mse_loss(T([0.0]), T([2.0])).item() == 4.0
    assert Fn.mse_loss(T([1.0, 3.0]), T([1.0, 1.0])).item() == 2.0
    with pytest.raises(Fn.ShapeError):
        Fn.mse_loss(T([1.0]), T([1.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.integers(0, 10**6))
def test_mse_nonnegative_zero_iff_equal(values, seed):
    a = T(values)
    b = a + torch.randn(a.shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    assert Fn.mse_loss(a, b).item() > 0
    assert Fn.mse_loss(a, a.clone()).item() == 0


# -- convolution and pooling ------------------------------------------------

def test_conv_identity_kernel():
    x = torch.randn(1, 1, 6, 5, dtype=torch.float64)
    w = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    w[0, 0, 1, 1] = 1
    torch.testing.assert_close(Fn.conv2d_3x3(x, w, torch.zeros(1, dtype=torch.float64)), x)


def test_conv_all_ones_hand_sum():
    x = T([[[1.0, 2.0], [3.0, 4.0]]])
    y = Fn.conv2d_3x3(x, torch.ones(1, 1, 3, 3, dtype=torch.float64), torch.zeros(1, dtype=torch.float64))
    assert y.tolist() == [[[10.0, 10.0], [10.0, 10.0]]]


def test_conv_first_layer_geometry():
    assert Conv3x3(1, 2)(torch.zeros(1, 1, 401, 80)).shape == (1, 2, 401, 80)
    with pytest.raises(Fn.ShapeError):
        Conv3x3(2, 2)(torch.zeros(1, 1, 4, 4))


def test_max_pool_examples():
    assert Fn.max_pool2x2(T([[[1.0, 2.0], [3.0, 4.0]]])).tolist() == [[[4.0]]]
    assert Fn.max_pool2x2(torch.zeros(1, 1, 401, 80)).shape == (1, 1, 200, 40)
    c = Fn.max_pool2x2(torch.full((2, 3, 6, 4), 1.5))
    assert c.shape == (2, 3, 3, 2) and (c == 1.5).all()
    with pytest.raises(Fn.ShapeError):
        Fn.max_pool2x2(torch.zeros(1, 1, 1, 4))


def test_transposed_conv_single_value():
    k = T([[[[1.0, 2.0], [3.0, 4.0]]]])
    y = Fn.transposed_conv2x2(T([[[2.5]]]), k, torch.zeros(1, dtype=torch.float64))
    torch.testing.assert_close(y, 2.5 * k[0])


def test_transposed_conv_geometry():
    assert TransposedConv2x2(32, 16)(torch.zeros(1, 32, 25, 5)).shape == (1, 16, 50, 10)
    assert TransposedConv2x2(4, 2)(torch.zeros(1, 4, 200, 40), (401, 80)).shape == (1, 2, 401, 80)
    with pytest.raises(Fn.ShapeError):
        TransposedConv2x2(4, 2)(torch.zeros(1, 4, 5, 5), (9, 10))
    with pytest.raises(Fn.ShapeError):
        TransposedConv2x2(4, 2)(torch.zeros(1, 4, 5, 5), (12, 10))


def test_transposed_conv_padding_row_is_bias_only():
    layer = TransposedConv2x2(1, 1)
    y = layer(torch.randn(1, 1, 3, 3), (7, 6))
    torch.testing.assert_close(y[0, 0, 6], layer.bias.detach().expand(6))


def test_bilinear_examples():
    c = Fn.bilinear_resize(torch.full((1, 1, 3, 4), 2.0), (7, 9))
    torch.testing.assert_close(c, torch.full((1, 1, 7, 9), 2.0))
    y = Fn.bilinear_resize(T([[[[0.0, 1.0]]]]), (1, 4))
    assert y[0, 0, 0, 0].item() == 0.0 and y[0, 0, 0, -1].item() == 1.0
    x = torch.randn(1, 1, 400, 80, dtype=torch.float64)
    y = Fn.bilinear_resize(x, (401, 80))
    # each output row lies between two neighbouring input rows
    gap = (x[..., 1:, :] - x[..., :-1, :]).abs().max()
    assert y.shape == (1, 1, 401, 80)
    assert (y[..., 1:-1, :] - x[..., 1:, :]).abs().max() <= gap


# -- normalization and linear -----------------------------------------------

def test_batch_norm_examples():
    x = torch.full((4, 1, 3, 3), 7.0, dtype=torch.float64)
    y = Fn.batch_norm2d(x, torch.ones(1, dtype=torch.float64), torch.full((1,), 0.5, dtype=torch.float64))
    torch.testing.assert_close(y, torch.full_like(x, 0.5))
    z = torch.randn(64, 2, 5, 5, dtype=torch.float64)
    z = (z - z.mean((0, 2, 3), keepdim=True)) / z.std((0, 2, 3), unbiased=False, keepdim=True)
    y = Fn.batch_norm2d(z, torch.ones(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64))
    torch.testing.assert_close(y, z, atol=1e-5, rtol=1e-5)


def test_batch_norm_running_stats_and_eval():
    bn = BatchNorm(2)
    x = torch.randn(8, 2, 3, 3) * 3 + 1
    bn.train()
    bn(x)
    torch.testing.assert_close(bn.running_mean, 0.1 * x.mean((0, 2, 3)))
    torch.testing.assert_close(bn.running_var, 0.9 + 0.1 * x.var((0, 2, 3), unbiased=True))
    bn.eval()
    expected = (x - bn.running_mean[None, :, None, None]) / torch.sqrt(bn.running_var[None, :, None, None] + 1e-5)
    torch.testing.assert_close(bn(x), expected)
    assert bn(x[:1]).shape == (1, 2, 3, 3)


def test_batch_norm_rejects_single_example_in_training():
    with pytest.raises(Fn.ShapeError):
        BatchNorm(2).train()(torch.zeros(1, 2, 3, 3))
    with pytest.raises(Fn.ShapeError):
        Fn.batch_norm2d(torch.zeros(4, 2), torch.ones(2), torch.zeros(2))


def test_linear_examples():
    x = T([[1.0, 1.0]])
    assert Fn.linear(x, torch.eye(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64)).tolist() == [[1.0, 1.0]]
    assert Fn.linear(x, T([[1.0, 1.0], [1.0, -1.0]]), torch.zeros(2, dtype=torch.float64)).tolist() == [[2.0, 0.0]]
    assert Linear(500, 50)(torch.zeros(1, 32, 500)).shape == (1, 32, 50)
    with pytest.raises(Fn.ShapeError):
        Linear(3, 2)(torch.zeros(4))


def test_skip_add_min_channels():
    x = torch.zeros(1, 3, 2, 2)
    s = torch.ones(1, 5, 2, 2)
    assert Fn.skip_add(x, s).sum().item() == 12.0
    y = Fn.skip_add(s, x[:, :2])
    torch.testing.assert_close(y, s)
    with pytest.raises(Fn.ShapeError):
        Fn.skip_add(x, torch.ones(1, 3, 2, 3))


def test_init_bounds():
    torch.manual_seed(0)
    conv = Conv3x3(4, 8)
    assert conv.weight.abs().max() <= 1 / math.sqrt(36)
    assert conv.weight.abs().max() > 0.9 / math.sqrt(36)
    lin = Linear(100, 10)
    assert lin.weight.abs().max() <= 0.1
    bn = BatchNorm(3)
    assert (bn.weight == 1).all() and (bn.bias == 0).all()


def test_init_deterministic_given_seed():
    torch.manual_seed(5)
    a = Conv3x3(2, 3).weight.detach().clone()
    torch.manual_seed(5)
    b = Conv3x3(2, 3).weight.detach().clone()
    assert torch.equal(a, b)


# -- transformer ------------------------------------------------------------

def test_transformer_geometry():
    enc = TransformerEncoderLayer(500).eval()
    dec = TransformerDecoderLayer(500).eval()
    x = torch.randn(2, 32, 500)
    assert transformer_encoder_layer(x, enc).shape == (2, 32, 500)
    assert transformer_decoder_layer(x, x, dec).shape == (2, 32, 500)
    assert enc.linear1.out_features == 2048 and enc.dropout.p == 0.1 and enc.nhead == 10


def test_transformer_errors():
    with pytest.raises(ValueError, match="divisible"):
        TransformerEncoderLayer(50, nhead=3)
    dec = TransformerDecoderLayer(4, nhead=2)
    with pytest.raises(ValueError, match="mismatch"):
        dec(torch.zeros(1, 3, 4), torch.zeros(1, 3, 6))
    with pytest.raises(ValueError):
        transformer_encoder_layer(torch.zeros(1, 3, 6), TransformerEncoderLayer(4, nhead=2))


def _random_layer(cls, seed):
    torch.manual_seed(seed)
    layer = cls(4, nhead=2, dim_feedforward=6, dropout=0.1).double()
    with torch.no_grad():
        for p in layer.parameters():
            p.copy_(torch.randn_like(p) * 0.5)
    return layer.eval()


def test_encoder_matches_numpy_reference():
    layer = _random_layer(TransformerEncoderLayer, 0)
    x = torch.randn(3, 4, dtype=torch.float64)
    got = layer(x[None])[0].detach().numpy()
    np.testing.assert_allclose(got, encoder_reference(x.numpy(), layer, 2), atol=1e-5, rtol=1e-5)


def test_decoder_matches_numpy_reference():
    layer = _random_layer(TransformerDecoderLayer, 1)
    tgt = torch.randn(3, 4, dtype=torch.float64)
    mem = torch.randn(5, 4, dtype=torch.float64)
    got = layer(tgt[None], mem[None])[0].detach().numpy()
    np.testing.assert_allclose(got, decoder_reference(tgt.numpy(), mem.numpy(), layer, 2), atol=1e-5, rtol=1e-5)


def test_encoder_permutation_equivariant():
    layer = _random_layer(TransformerEncoderLayer, 2)
    x = torch.randn(1, 5, 4, dtype=torch.float64)
    perm = torch.tensor([3, 0, 4, 1, 2])
    torch.testing.assert_close(layer(x[:, perm]), layer(x)[:, perm])


def test_decoder_residual_identity_with_zero_weights():
    layer = TransformerDecoderLayer(4, nhead=2, dim_feedforward=6).double().eval()
    with torch.no_grad():
        for name, p in layer.named_parameters():
            p.fill_(1.0 if name.startswith("norm") and name.endswith("weight") else 0.0)
    tgt = torch.randn(1, 3, 4, dtype=torch.float64)
    tgt = (tgt - tgt.mean(-1, keepdim=True)) / tgt.std(-1, unbiased=False, keepdim=True)
    torch.testing.assert_close(layer(tgt, torch.randn(1, 3, 4, dtype=torch.float64)), tgt, atol=1e-4, rtol=1e-4)


def test_transformer_dropout_only_in_training():
    layer = TransformerEncoderLayer(4, nhead=2, dim_feedforward=6)
    x = torch.randn(1, 3, 4)
    layer.eval()
    torch.testing.assert_close(layer(x), layer(x))
    layer.train()
    torch.manual_seed(0)
    a = layer(x)
    torch.manual_seed(1)
    assert not torch.equal(a, layer(x))


# -- gradients --------------------------------------------------------------

def test_every_layer_kind_has_a_gradient_case():
    covered = set(gradcases.CASES)
    for kind in LAYER_KINDS:
        assert kind in covered, kind


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
def test_layer_gradients_match_finite_differences(name):
    fn, leaves = gradcases.CASES[name](torch.Generator().manual_seed(0))
    assert fd_check(fn, leaves) < 1e-4


# -- optimizer and schedule -------------------------------------------------

def test_adamw_zero_gradient_no_decay_is_noop():
    p = torch.randn(5, dtype=torch.float64)
    before = p.clone()
    adamw_step([p], [torch.zeros(5, dtype=torch.float64)], [(torch.zeros(5, dtype=torch.float64),) * 2], 1, 1e-3,
               weight_decay=0.0)
    assert torch.equal(p, before)


def test_adamw_zero_gradient_decay_only():
    p = torch.randn(5, dtype=torch.float64)
    before = p.clone()
    z = lambda: torch.zeros(5, dtype=torch.float64)  # noqa: E731
    adamw_step([p], [z()], [(z(), z())], 1, 1e-3, weight_decay=0.01)
    torch.testing.assert_close(p, before * (1 - 1e-5), rtol=0, atol=1e-15)


def test_adamw_first_step_closed_form():
    p = torch.zeros(4, dtype=torch.float64)
    g = T([0.3, -2.0, 1e-3, 50.0])
    z = lambda: torch.zeros(4, dtype=torch.float64)  # noqa: E731
    adamw_step([p], [g], [(z(), z())], 1, 1e-3, weight_decay=0.0)
    expected = -1e-3 * g / (g.abs() + 1e-8)
    torch.testing.assert_close(p, expected, rtol=1e-12, atol=0)


def test_adamw_matches_torch_reference():
    torch.manual_seed(0)
    a = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    b = a.detach().clone().requires_grad_()
    ours = AdamW([a], lr=3e-3, weight_decay=0.05)
    ref = torch.optim.AdamW([b], lr=3e-3, weight_decay=0.05)
    target = torch.randn(3, 4, dtype=torch.float64)
    for step in range(25):
        lr = 3e-3 * (1 + math.cos(step / 5)) / 2 + 1e-5
        ours.set_lr(lr)
        for g in ref.param_groups:
            g["lr"] = lr
        for p, opt in ((a, ours), (b, ref)):
            opt.zero_grad()
            ((p - target) ** 3).abs().sum().backward()
            opt.step()
    torch.testing.assert_close(a, b, rtol=1e-12, atol=1e-14)


def test_adamw_rejects_step_zero():
    with pytest.raises(ValueError):
        adamw_step([], [], [], 0, 1e-3)


def test_optimizer_step_bit_reproducible():
    def run():
        torch.manual_seed(3)
        layer = Conv3x3(2, 3)
        opt = AdamW(layer.parameters())
        layer(torch.randn(2, 2, 4, 4)).square().mean().backward()
        opt.step()
        return [p.detach().clone() for p in layer.parameters()]

    for x, y in zip(run(), run()):
        assert torch.equal(x, y)


def test_lr_examples():
    cfg = TrainConfig()
    assert lr_at_epoch(0, cfg) == pytest.approx(1e-3, rel=1e-12)
    assert lr_at_epoch(50, cfg) == pytest.approx(5.05e-4, rel=1e-12)
    assert lr_at_epoch(100, cfg) == pytest.approx(1e-3, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at_epoch(500, cfg)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 499))
def test_lr_bounds_and_restarts(epoch):
    cfg = TrainConfig()
    lr = lr_at_epoch(epoch, cfg)
    assert 1e-5 <= lr <= 1e-3 + 1e-18
    if epoch % 100 == 0:
        assert lr == pytest.approx(1e-3, rel=1e-12)
    elif epoch % 100 < 99:
        assert lr_at_epoch(epoch + 1, cfg) < lr


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1e-2)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    assert TrainConfig(betas=[0.8, 0.9]).to_dict()["betas"] == [0.8, 0.9]


# -- checkpoint -------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    torch.manual_seed(0)
    state = {"a.weight": torch.randn(3, 2, 3, 3), "b.bias": torch.randn(7), "c": torch.tensor(1.25)}
    save_state(tmp_path / "m.ckpt", state, {"architecture": "x", "seed": 4})
    header, back = load_state(tmp_path / "m.ckpt")
    assert list(back) == list(state)
    for k in state:
        assert torch.equal(state[k], back[k])
    assert header["architecture"] == "x" and read_header(tmp_path / "m.ckpt")["seed"] == 4
    assert (tmp_path / "m.ckpt").read_bytes()[:8] == b"AADCKPT1"


def test_checkpoint_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"nonsense" * 4)
    with pytest.raises(CheckpointError):
        load_state(tmp_path / "bad")
    save_state(tmp_path / "t.ckpt", {"w": torch.ones(100)}, {})
    raw = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_state(tmp_path / "t.ckpt")
    with pytest.raises(CheckpointError):
        save_state(tmp_path / "i.ckpt", {"n": torch.zeros(2, dtype=torch.long)}, {})
