"""The four reconstruction detectors.

All builders take the spectrogram size ``input_hw`` (frames x mel bins,
401 x 80 for 10 s clips) and a ``seed`` that fixes parameter init. The
convolutional models pool four times; with 401 x 80 input the stages are
200 x 40, 100 x 20, 50 x 10 and 25 x 5.
"""

from __future__ import annotations

import torch

from ..nn.layers import Conv3x3, Linear, TransformerDecoderLayer, TransformerEncoderLayer
from .graph import (
    DecoderStage,
    DenseBlock,
    Down,
    EncoderStage,
    Reshape,
    SkipAdapter,
    SkipEdge,
    SkipGraph,
    Up,
)

ARCHITECTURES = ("dcase_ae", "duman_cae", "skip_cae", "skip_cae_transformer")
DEFAULT_INPUT_HW = (401, 80)

ENCODER_LADDER = [("conv1_1", 1, 2), ("conv1_2", 2, 2), ("conv2_1", 2, 4), ("conv2_2", 4, 4), "pool1",
                  ("conv3_1", 4, 8), ("conv3_2", 8, 8), "pool2",
                  ("conv4_1", 8, 16), ("conv4_2", 16, 16), "pool3",
                  ("conv5_1", 16, 32), ("conv5_2", 32, 32)]

# conv(K)_1 -> conv(K+1)_1-input and pool(K) -> pool(K+1)-input, etc.
ENCODER_SKIPS = [("input", "pool1"), ("conv1_1", "conv2_1"), ("conv2_1", "pool1"),
                 ("pool1", "pool2"), ("conv3_1", "pool2"),
                 ("pool2", "pool3"), ("conv4_1", "pool3")]
DECODER_TAIL_SKIPS = [("up2", "up3"), ("conv9_1", "up3"), ("up3", "up4"), ("conv10_1", "up4"),
                      ("up4", "out"), ("conv11_1", "out")]


def _stages(input_hw, n=4):
    sizes = [tuple(input_hw)]
    for _ in range(n):
        h, w = sizes[-1]
        sizes.append((h // 2, w // 2))
    if min(sizes[-1]) < 1:
        raise ValueError(f"input {tuple(input_hw)} too small for {n} 2x2 poolings")
    return sizes


def _seeded(seed, fn):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return fn()


def _encoder(act, batch_norm, with_pool4=True):
    blocks = {}
    for item in ENCODER_LADDER:
        if isinstance(item, str):
            ch = blocks[list(blocks)[-1]].out_channels
            blocks[item] = Down(ch, batch_norm)
        else:
            name, cin, cout = item
            blocks[name] = Conv3x3(cin, cout, act)
    if with_pool4:
        blocks["pool4"] = Down(32, batch_norm)
    return blocks


def build_dcase_ae(input_hw=DEFAULT_INPUT_HW, seed=0, hidden=128, bottleneck=8):
    """Dense autoencoder on the flattened spectrogram.

    4 x 128 -> 8 -> 4 x 128, each hidden layer Linear + batch norm + ReLU,
    and a linear output layer back to H * W values.
    """
    h, w = input_hw
    n = h * w

    def make():
        blocks = {"flatten": Reshape(n)}
        dims = [n] + [hidden] * 4
        for i in range(4):
            blocks[f"enc{i + 1}"] = DenseBlock(dims[i], dims[i + 1])
        blocks["bottleneck"] = DenseBlock(hidden, bottleneck)
        dims = [bottleneck] + [hidden] * 4
        for i in range(4):
            blocks[f"dec{i + 1}"] = DenseBlock(dims[i], dims[i + 1])
        blocks["out"] = Linear(hidden, n)
        blocks["unflatten"] = Reshape(1, h, w)
        return SkipGraph("dcase_ae", input_hw, blocks, latent_node="bottleneck",
                         build_args={"hidden": hidden, "bottleneck": bottleneck})

    return _seeded(seed, make)


def build_duman_cae(input_hw=DEFAULT_INPUT_HW, seed=0):
    """Plain CAE: ReLU, no batch norm, no skips, bilinear upsampling."""
    s = _stages(input_hw)

    def make():
        blocks = _encoder("relu", batch_norm=False)
        blocks.update(
            conv6_1=Conv3x3(32, 64, "relu"), conv6_2=Conv3x3(64, 64, "relu"),
            conv7_1=Conv3x3(64, 32, "relu"), conv7_2=Conv3x3(32, 32, "relu"),
            up1=Up(32, 32, s[3], mode="bilinear", batch_norm=False),
            conv8_1=Conv3x3(32, 16, "relu"), conv8_2=Conv3x3(16, 16, "relu"),
            up2=Up(16, 16, s[2], mode="bilinear", batch_norm=False),
            conv9_1=Conv3x3(16, 8, "relu"), conv9_2=Conv3x3(8, 8, "relu"),
            up3=Up(8, 8, s[1], mode="bilinear", batch_norm=False),
            conv10_1=Conv3x3(8, 4, "relu"), conv10_2=Conv3x3(4, 4, "relu"),
            up4=Up(4, 4, s[0], mode="bilinear", batch_norm=False),
            conv11_1=Conv3x3(4, 2, "relu"), conv11_2=Conv3x3(2, 2, "relu"),
            out=Conv3x3(2, 1, None),
        )
        return SkipGraph("duman_cae", input_hw, blocks, latent_node="pool4")

    return _seeded(seed, make)


def build_skip_cae(input_hw=DEFAULT_INPUT_HW, seed=0):
    """CAE with leaky ReLU, batch norm before every pool/up block and
    additive min-channel skip edges inside the encoder and the decoder."""
    s = _stages(input_hw)
    doubled = (2 * s[1][0], 2 * s[1][1])

    def make():
        blocks = _encoder("leaky_relu", batch_norm=True)
        blocks.update(
            conv6_1=Conv3x3(32, 64), conv6_2=Conv3x3(64, 64),
            conv7_1=Conv3x3(64, 32), conv7_2=Conv3x3(32, 32),
            up1=Up(32, 16, s[3]),
            conv8_1=Conv3x3(16, 16), conv8_2=Conv3x3(16, 16),
            up2=Up(16, 8, s[2]),
            conv9_1=Conv3x3(8, 8), conv9_2=Conv3x3(8, 8),
            up3=Up(8, 4, s[1]),
            conv10_1=Conv3x3(4, 4), conv10_2=Conv3x3(4, 4),
            up4=Up(4, 2, doubled, resize_to=s[0]),
            conv11_1=Conv3x3(2, 2), conv11_2=Conv3x3(2, 2),
            out=Conv3x3(2, 1, None),
        )
        edges = ENCODER_SKIPS + [
            ("pool3", "pool4"), ("conv5_1", "pool4"),
            ("conv6_1", "conv7_1"), ("pool4", "up1"), ("conv7_1", "up1"),
            ("up1", "up2"), ("conv8_1", "up2"),
        ] + DECODER_TAIL_SKIPS
        return SkipGraph("skip_cae", input_hw, blocks, [SkipEdge(a, b) for a, b in edges],
                         latent_node="pool4")

    return _seeded(seed, make)


def build_skip_cae_transformer(input_hw=DEFAULT_INPUT_HW, seed=0, n_heads=10, dim_feedforward=2048,
                               dropout=0.1, token_hw=None):
    """Skip-CAE with a single-layer transformer encoder/decoder pair.

    After three poolings the 32 channels become 32 tokens of
    d_model = H3 * W3 features (500 for 401 x 80 input). The encoder
    output is kept as memory for the decoder's cross-attention. Tokens are
    projected to ``token_hw`` features (10 x 5 by default), pooled to the
    latent, and lifted back to d_model before the decoder layer. Two skips
    cross a feature-size change and go through their own linear adapters:
    encoder output -> pool4 input, and up1 output -> decoder-layer output.
    """
    s = _stages(input_hw)
    h3, w3 = s[3]
    d_model = h3 * w3
    if token_hw is None:
        token_hw = (max(2, h3 // 5), max(2, w3 // 2))
    th, tw = token_hw
    n_tok = th * tw
    doubled = (2 * s[1][0], 2 * s[1][1])

    def make():
        blocks = _encoder("leaky_relu", batch_norm=True, with_pool4=False)
        blocks.update(
            tokens=Reshape(32, d_model),
            enc_tf=EncoderStage(TransformerEncoderLayer(d_model, n_heads, dim_feedforward, dropout)),
            lin_enc=Linear(d_model, n_tok, "leaky_relu"),
            grid_enc=Reshape(32, th, tw),
            pool4=Down(32),
            conv6_1=Conv3x3(32, 64), conv6_2=Conv3x3(64, 64),
            conv7_1=Conv3x3(64, 32), conv7_2=Conv3x3(32, 32),
            up1=Up(32, 32, (th, tw)),
            flat_dec=Reshape(32, n_tok),
            lin_dec=Linear(n_tok, d_model, "leaky_relu"),
            dec_tf=DecoderStage(TransformerDecoderLayer(d_model, n_heads, dim_feedforward, dropout)),
            grid_dec=Reshape(32, h3, w3),
            conv8_1=Conv3x3(32, 16), conv8_2=Conv3x3(16, 16),
            up2=Up(16, 8, s[2]),
            conv9_1=Conv3x3(8, 8), conv9_2=Conv3x3(8, 8),
            up3=Up(8, 4, s[1]),
            conv10_1=Conv3x3(4, 4), conv10_2=Conv3x3(4, 4),
            up4=Up(4, 2, doubled, resize_to=s[0]),
            conv11_1=Conv3x3(2, 2), conv11_2=Conv3x3(2, 2),
            out=Conv3x3(2, 1, None),
        )
        adapters = {
            "enc_tf->pool4": SkipAdapter(d_model, n_tok),
            "up1->grid_dec": SkipAdapter(n_tok, d_model),
        }
        edges = [SkipEdge(a, b) for a, b in ENCODER_SKIPS] + [
            SkipEdge("pool3", "lin_enc"), SkipEdge("conv5_1", "lin_enc"),
            SkipEdge("enc_tf", "pool4", "enc_tf->pool4"),
            SkipEdge("conv6_1", "conv7_1"), SkipEdge("pool4", "up1"), SkipEdge("conv7_1", "up1"),
            SkipEdge("up1", "grid_dec", "up1->grid_dec"),
            SkipEdge("grid_dec", "up2"), SkipEdge("conv8_1", "up2"),
        ] + [SkipEdge(a, b) for a, b in DECODER_TAIL_SKIPS]
        return SkipGraph("skip_cae_transformer", input_hw, blocks, edges, adapters, latent_node="pool4",
                         build_args={"n_heads": n_heads, "dim_feedforward": dim_feedforward,
                                     "dropout": dropout, "token_hw": [th, tw]})

    return _seeded(seed, make)


BUILDERS = {
    "dcase_ae": build_dcase_ae,
    "duman_cae": build_duman_cae,
    "skip_cae": build_skip_cae,
    "skip_cae_transformer": build_skip_cae_transformer,
}


def build_model(architecture: str, input_hw=DEFAULT_INPUT_HW, seed=0, **kwargs) -> SkipGraph:
    try:
        builder = BUILDERS[architecture]
    except KeyError:
        raise ValueError(f"unknown architecture {architecture!r}; choose from {', '.join(ARCHITECTURES)}") from None
    return builder(tuple(input_hw), seed, **kwargs)
