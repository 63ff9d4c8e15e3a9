"""A sequential network with additive skip edges between named nodes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..nn import functional as Fn
from ..nn.layers import BatchNorm, LayerSpec, Linear, TransposedConv2x2


@dataclass(frozen=True)
class SkipEdge:
    source: str
    target: str
    adapter: str | None = None  # key into SkipGraph.adapters


class Down(nn.Module):
    """Optional batch norm, then 2x2 max pooling."""

    def __init__(self, channels, batch_norm=True):
        super().__init__()
        self.norm = BatchNorm(channels) if batch_norm else None

    def forward(self, x):
        if self.norm is not None:
            x = self.norm(x)
        return Fn.max_pool2x2(x)

    def specs(self, name=""):
        pre = self.norm.specs(name) if self.norm is not None else []
        return pre + [_spec("max_pool2x2", name)]


class Up(nn.Module):
    """Upsampling block.

    ``transposed``: optional batch norm, then a 2x2 transposed conv to
    ``target`` (output padding covers odd sizes), then an optional bilinear
    resize to ``resize_to``. ``bilinear``: resize straight to ``target``.
    """

    def __init__(self, in_channels, out_channels, target, mode="transposed", batch_norm=True, resize_to=None):
        super().__init__()
        self.mode = mode
        self.target = tuple(target)
        self.resize_to = tuple(resize_to) if resize_to is not None else None
        self.norm = BatchNorm(in_channels) if batch_norm else None
        if mode == "transposed":
            self.tconv = TransposedConv2x2(in_channels, out_channels)
        elif mode == "bilinear":
            if in_channels != out_channels:
                raise ValueError("bilinear upsampling keeps the channel count")
            self.tconv = None
        else:
            raise ValueError(f"unknown upsampling mode {mode!r}")

    def forward(self, x):
        if self.norm is not None:
            x = self.norm(x)
        if self.tconv is None:
            return Fn.bilinear_resize(x, self.target)
        x = self.tconv(x, self.target)
        if self.resize_to is not None:
            x = Fn.bilinear_resize(x, self.resize_to)
        return x

    def specs(self, name=""):
        out = self.norm.specs(name) if self.norm is not None else []
        if self.tconv is not None:
            out += self.tconv.specs(name)
            if self.resize_to is not None:
                out.append(_spec("bilinear_resize", name, size=list(self.resize_to)))
        else:
            out.append(_spec("bilinear_resize", name, size=list(self.target)))
        return out


class Reshape(nn.Module):
    """Reshape everything after the batch axis."""

    def __init__(self, *shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)

    def specs(self, name=""):
        return []


class DenseBlock(nn.Module):
    """Linear -> batch norm -> ReLU."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.fc = Linear(in_features, out_features)
        self.norm = BatchNorm(out_features, spatial=False)

    def forward(self, x):
        return Fn.relu(self.norm(self.fc(x)))

    def specs(self, name=""):
        return self.fc.specs(name) + self.norm.specs(name) + [_spec("relu", name)]


class EncoderStage(nn.Module):
    """Transformer encoder layer whose output is kept as decoder memory."""

    uses_context = True

    def __init__(self, layer):
        super().__init__()
        self.layer = layer

    def forward(self, x, ctx):
        out = self.layer(x)
        ctx["memory"] = out
        return out

    def specs(self, name=""):
        return self.layer.specs(name)


class DecoderStage(nn.Module):
    uses_context = True

    def __init__(self, layer):
        super().__init__()
        self.layer = layer

    def forward(self, x, ctx):
        if "memory" not in ctx:
            raise RuntimeError("decoder stage reached before any encoder stage")
        return self.layer(x, ctx["memory"])

    def specs(self, name=""):
        return self.layer.specs(name)


class SkipAdapter(nn.Module):
    """Maps a skip source onto the target's per-channel layout.

    The source is flattened per channel, passed through an optional linear
    map, and reshaped to the target's trailing dims.
    """

    def __init__(self, in_features=None, out_features=None):
        super().__init__()
        self.fc = Linear(in_features, out_features) if in_features else None

    def forward(self, src, like):
        h = src.flatten(2)
        if self.fc is not None:
            h = self.fc(h)
        return h.reshape(src.shape[0], src.shape[1], *like.shape[2:])

    def specs(self, name=""):
        return self.fc.specs(name) if self.fc is not None else []


def _spec(kind, name, **extra):
    return LayerSpec(kind, name, extra=extra)


class SkipGraph(nn.Module):
    """Runs named blocks in order; each block's input is the previous output
    plus every skip edge targeting it (added on the leading min-channel
    slice).

    The graph is probed once at construction so shape errors and mismatched
    skip edges fail at build time; per-node output shapes are kept in
    ``activation_shapes``.
    """

    def __init__(self, architecture_id, input_hw, blocks, skip_edges=(), adapters=None,
                 latent_node=None, build_args=None):
        super().__init__()
        self.architecture_id = architecture_id
        self.input_hw = tuple(input_hw)
        self.blocks = nn.ModuleDict(blocks)
        self.adapters = nn.ModuleDict(adapters or {})
        self.skip_edges = list(skip_edges)
        self.latent_node = latent_node
        self.build_args = dict(build_args or {})
        self.skips_enabled = True
        names = {"input", *self.blocks}
        order = {"input": -1, **{n: i for i, n in enumerate(self.blocks)}}
        self._incoming: dict[str, list[SkipEdge]] = {n: [] for n in self.blocks}
        for e in self.skip_edges:
            if e.source not in names or e.target not in self.blocks:
                raise ValueError(f"skip edge {e} references an unknown node")
            if order[e.source] >= order[e.target] - 1:
                raise ValueError(f"skip edge {e} must jump forward past at least one node")
            if e.adapter is not None and e.adapter not in self.adapters:
                raise ValueError(f"skip edge {e} names a missing adapter")
            self._incoming[e.target].append(e)
        self.activation_shapes = self._probe()

    def _probe(self):
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                x = torch.zeros(1, 1, *self.input_hw)
                _, acts = self.forward(x, keep=True)
        finally:
            self.train(was_training)
        shapes = {k: tuple(v.shape[1:]) for k, v in acts.items()}
        if shapes[list(self.blocks)[-1]] != (1, *self.input_hw):
            raise ValueError(f"{self.architecture_id}: output shape does not match input")
        return shapes

    def forward(self, x, keep=False):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if tuple(x.shape[1:]) != (1, *self.input_hw):
            raise Fn.ShapeError(f"expected (B, 1, {self.input_hw[0]}, {self.input_hw[1]}), got {tuple(x.shape)}")
        acts = {"input": x}
        ctx: dict = {}
        h = x
        for name, block in self.blocks.items():
            if self.skips_enabled:
                for e in self._incoming[name]:
                    src = acts[e.source]
                    if e.adapter is not None:
                        src = self.adapters[e.adapter](src, h)
                    elif src.shape[2:] != h.shape[2:] and math.prod(src.shape[2:]) == math.prod(h.shape[2:]):
                        src = src.reshape(src.shape[0], src.shape[1], *h.shape[2:])
                    h = Fn.skip_add(h, src)
            h = block(h, ctx) if getattr(block, "uses_context", False) else block(h)
            if keep or self._needed(name):
                acts[name] = h
        return (h, acts) if keep else h

    def _needed(self, name):
        return any(e.source == name for e in self.skip_edges)

    def encode(self, x):
        """Latent (bottleneck) activation for a batch."""
        _, acts = self.forward(x, keep=True)
        return acts[self.latent_node]

    def layer_specs(self):
        out = []
        for name, block in self.blocks.items():
            out += block.specs(name)
        for name, ad in self.adapters.items():
            out += ad.specs(f"adapter:{name}")
        return out

    def header(self):
        return {
            "architecture": self.architecture_id,
            "input_hw": list(self.input_hw),
            "build_args": self.build_args,
            "layers": [s.to_dict() for s in self.layer_specs()],
            "skip_edges": [[e.source, e.target] for e in self.skip_edges],
        }
