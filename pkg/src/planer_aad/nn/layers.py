"""Parameterized layer modules built on :mod:`planer_aad.nn.functional`.

Conv and linear weights and biases are drawn from U(-b, b) with
b = 1 / sqrt(fan_in); batch-norm scales start at 1 and shifts at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from . import functional as Fn

LAYER_KINDS = (
    "conv3x3", "leaky_relu", "relu", "batch_norm2d", "batch_norm1d", "max_pool2x2",
    "transposed_conv2x2", "bilinear_resize", "linear", "transformer_encoder", "transformer_decoder",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    in_size: int = 0
    out_size: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "in": self.in_size, "out": self.out_size, **self.extra}


def fan_in_uniform_(tensor, fan_in: int):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        return tensor.uniform_(-bound, bound)


def _activation(name):
    if name == "leaky_relu":
        return Fn.leaky_relu
    if name == "relu":
        return Fn.relu
    if name is None:
        return lambda x: x
    raise ValueError(f"unknown activation {name!r}")


class Conv3x3(nn.Module):
    """3x3 same-padding convolution followed by an optional activation."""

    def __init__(self, in_channels, out_channels, activation="leaky_relu"):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be positive")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 3, 3))
        self.bias = nn.Parameter(torch.empty(out_channels))
        fan_in_uniform_(self.weight, in_channels * 9)
        fan_in_uniform_(self.bias, in_channels * 9)
        self._act = _activation(activation)

    def forward(self, x):
        return self._act(Fn.conv2d_3x3(x, self.weight, self.bias))

    def specs(self, name=""):
        out = [LayerSpec("conv3x3", name, self.in_channels, self.out_channels)]
        if self.activation:
            out.append(LayerSpec(self.activation, name))
        return out


class TransposedConv2x2(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.weight = nn.Parameter(torch.empty(in_channels, out_channels, 2, 2))
        self.bias = nn.Parameter(torch.empty(out_channels))
        fan_in_uniform_(self.weight, in_channels * 4)
        fan_in_uniform_(self.bias, in_channels * 4)

    def forward(self, x, output_hw=None):
        return Fn.transposed_conv2x2(x, self.weight, self.bias, output_hw)

    def specs(self, name=""):
        return [LayerSpec("transposed_conv2x2", name, self.in_channels, self.out_channels)]


class BatchNorm(nn.Module):
    """Batch normalization over dim 1 for (B, C) or (B, C, H, W) inputs."""

    def __init__(self, num_features, spatial=True, momentum=Fn.BN_MOMENTUM, eps=Fn.BN_EPS):
        super().__init__()
        self.num_features = num_features
        self.spatial = spatial
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x):
        return Fn.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)

    def specs(self, name=""):
        kind = "batch_norm2d" if self.spatial else "batch_norm1d"
        return [LayerSpec(kind, name, self.num_features, self.num_features)]


class Linear(nn.Module):
    def __init__(self, in_features, out_features, activation=None):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ValueError("feature counts must be positive")
        self.in_features, self.out_features = in_features, out_features
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.empty(out_features))
        fan_in_uniform_(self.weight, in_features)
        fan_in_uniform_(self.bias, in_features)
        self._act = _activation(activation)

    def forward(self, x):
        return self._act(Fn.linear(x, self.weight, self.bias))

    def specs(self, name=""):
        out = [LayerSpec("linear", name, self.in_features, self.out_features)]
        if self.activation:
            out.append(LayerSpec(self.activation, name))
        return out


def _check_heads(d_model, nhead):
    if d_model % nhead:
        raise ValueError(f"d_model={d_model} is not divisible by {nhead} heads")


class TransformerEncoderLayer(nn.TransformerEncoderLayer):
    """Post-norm encoder layer on (B, S, d_model) tokens, no mask, no positions."""

    def __init__(self, d_model, nhead=10, dim_feedforward=2048, dropout=0.1):
        _check_heads(d_model, nhead)
        super().__init__(d_model, nhead, dim_feedforward, dropout, batch_first=True, norm_first=False)
        self.d_model, self.nhead = d_model, nhead

    def specs(self, name=""):
        return [LayerSpec("transformer_encoder", name, self.d_model, self.d_model,
                          {"heads": self.nhead, "ffn": self.linear1.out_features})]


class TransformerDecoderLayer(nn.TransformerDecoderLayer):
    """Post-norm decoder layer: self-attention, cross-attention to memory, FFN; no causal mask."""

    def __init__(self, d_model, nhead=10, dim_feedforward=2048, dropout=0.1):
        _check_heads(d_model, nhead)
        super().__init__(d_model, nhead, dim_feedforward, dropout, batch_first=True, norm_first=False)
        self.d_model, self.nhead = d_model, nhead

    def forward(self, tgt, memory, **kwargs):
        if tgt.shape[-1] != memory.shape[-1]:
            raise ValueError(f"d_model mismatch: tgt {tgt.shape[-1]} vs memory {memory.shape[-1]}")
        return super().forward(tgt, memory, **kwargs)

    def specs(self, name=""):
        return [LayerSpec("transformer_decoder", name, self.d_model, self.d_model,
                          {"heads": self.nhead, "ffn": self.linear1.out_features})]


def transformer_encoder_layer(x, layer: TransformerEncoderLayer):
    if x.shape[-1] != layer.d_model:
        raise ValueError(f"expected d_model={layer.d_model}, got {x.shape[-1]}")
    return layer(x)


def transformer_decoder_layer(tgt, memory, layer: TransformerDecoderLayer):
    return layer(tgt, memory)
