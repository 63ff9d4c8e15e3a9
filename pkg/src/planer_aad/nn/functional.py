"""Layer primitives used by the detectors.

Thin, contract-checked wrappers over ``torch.nn.functional``; autograd
supplies the backward passes. Image tensors are ``(B, C, H, W)``; a bare
``(C, H, W)`` tensor is accepted and returned without the batch axis.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


def _batched(x):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() != 4:
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W), got {tuple(x.shape)}")
    return x, False


def _unbatch(y, squeeze):
    return y.squeeze(0) if squeeze else y


def leaky_relu(x, alpha: float = LEAKY_SLOPE):
    return F.leaky_relu(x, alpha)


def relu(x):
    return F.relu(x)


def conv2d_3x3(x, weight, bias=None):
    """3x3 cross-correlation, stride 1, zero padding 1 (H and W preserved)."""
    xb, sq = _batched(x)
    if weight.shape[2:] != (3, 3):
        raise ShapeError(f"kernel must be 3x3, got {tuple(weight.shape[2:])}")
    if weight.shape[1] != xb.shape[1]:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {xb.shape[1]}")
    return _unbatch(F.conv2d(xb, weight, bias, padding=1), sq)


def max_pool2x2(x):
    """Non-overlapping 2x2 max; an odd trailing row/column is dropped."""
    xb, sq = _batched(x)
    if xb.shape[-2] < 2 or xb.shape[-1] < 2:
        raise ShapeError(f"max_pool2x2 needs H, W >= 2, got {tuple(xb.shape[-2:])}")
    return _unbatch(F.max_pool2d(xb, 2, 2), sq)


def transposed_conv2x2(x, weight, bias=None, output_hw=None):
    """Stride-2, 2x2 transposed convolution.

    ``weight`` is ``(C_in, C_out, 2, 2)``. Without ``output_hw`` the output
    is ``2H x 2W``; a target of ``2H + 1`` (or ``2W + 1``) is reached by
    zero output padding on the bottom/right, which only receives the bias.
    """
    xb, sq = _batched(x)
    if weight.shape[0] != xb.shape[1]:
        raise ShapeError(f"transposed conv expects {weight.shape[0]} input channels, got {xb.shape[1]}")
    h, w = xb.shape[-2:]
    th, tw = output_hw if output_hw is not None else (2 * h, 2 * w)
    pad_h, pad_w = th - 2 * h, tw - 2 * w
    if pad_h < 0 or pad_w < 0:
        raise ShapeError(f"target {(th, tw)} smaller than {(2 * h, 2 * w)}")
    if pad_h > 1 or pad_w > 1:
        raise ShapeError(f"target {(th, tw)} exceeds {(2 * h + 1, 2 * w + 1)}; resize afterwards")
    y = F.conv_transpose2d(xb, weight, bias, stride=2, output_padding=(pad_h, pad_w))
    return _unbatch(y, sq)


def bilinear_resize(x, size):
    """Bilinear interpolation with corner alignment (endpoints map exactly)."""
    xb, sq = _batched(x)
    size = (int(size[0]), int(size[1]))
    if min(size) < 1:
        raise ShapeError(f"bad target size {size}")
    if tuple(xb.shape[-2:]) == size:
        return x
    return _unbatch(F.interpolate(xb, size=size, mode="bilinear", align_corners=True), sq)


def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel batch normalization over every axis except dim 1.

    In training mode batch statistics are used and the running statistics
    (if given) are updated in place; in eval mode the running statistics are
    used.
    """
    if training and x.shape[0] < 2:
        raise ShapeError("batch normalization in training mode needs a batch of at least 2")
    return F.batch_norm(x, running_mean, running_var, gamma, beta, training, momentum, eps)


def batch_norm2d(x, gamma, beta, running_mean=None, running_var=None, training=True,
                 momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    if x.dim() != 4:
        raise ShapeError(f"batch_norm2d expects (B, C, H, W), got {tuple(x.shape)}")
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps)


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} features, got {x.shape[-1]}")
    return F.linear(x, weight, bias)


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def skip_add(x, skip):
    """Add ``skip`` onto the leading min(C_x, C_skip) channels of ``x``.

    Channels of ``x`` beyond the overlap pass through unchanged; the result
    always has ``x``'s channel count. Spatial sizes must match.
    """
    if x.shape[0] != skip.shape[0] or x.shape[2:] != skip.shape[2:]:
        raise ShapeError(f"skip {tuple(skip.shape)} does not fit {tuple(x.shape)}")
    c = min(x.shape[1], skip.shape[1])
    if c == x.shape[1]:
        return x + skip[:, :c]
    return torch.cat([x[:, :c] + skip[:, :c], x[:, c:]], dim=1)
