from . import functional
from .functional import (
    batch_norm,
    batch_norm2d,
    bilinear_resize,
    conv2d_3x3,
    leaky_relu,
    linear,
    max_pool2x2,
    mse_loss,
    relu,
    skip_add,
    transposed_conv2x2,
)
from .layers import (
    BatchNorm,
    Conv3x3,
    LayerSpec,
    Linear,
    TransformerDecoderLayer,
    TransformerEncoderLayer,
    TransposedConv2x2,
    transformer_decoder_layer,
    transformer_encoder_layer,
)
from .optim import AdamW, TrainConfig, adamw_step, lr_at_epoch
