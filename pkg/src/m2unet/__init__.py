"""Encoder-decoder polyp segmentation with multi-scale decoder links.

A self-contained trainable implementation: NumPy-backed tensors with
reverse-mode differentiation (optionally accelerated by compiled conv
kernels), MetaFormer-style encoder blocks, a five-step decoder with
multi-scale upsampling links, smoothed-Jaccard training, and a CLI.
"""

from .blocks import (
    Affine,
    Conv,
    ConvFormerParams,
    MUParams,
    TransformerParams,
    UpsampleLinkParams,
    channel_mlp,
    conv_former_block,
    mu_block,
    self_attention,
    transformer_block,
)
from .data import AugmentConfig, MaskDataset, Sample, augment, preprocess, synth_polyp_dataset
from .engine import (
    Tensor,
    backward,
    default_dtype,
    dtype_scope,
    no_grad,
    set_default_dtype,
    tensor,
)
from .errors import (
    ConfigError,
    FormatError,
    GraphError,
    NumericError,
    ShapeError,
    UsageError,
)
from .losses import MetricsReport, batch_jaccard_loss, dice, iou, jaccard_loss, mae
from .model import (
    FeaturePyramid,
    ModelConfig,
    build_model,
    decoder_forward,
    encoder_forward,
    m2unet_forward,
    named_parameters,
    parameter_count,
)
from .ops import ConvSpec
from .optim import OptimState, adam_step, cosine_lr
from .trainer import TrainConfig, evaluate, evaluate_checkpoint, train

__version__ = "0.1.0"
