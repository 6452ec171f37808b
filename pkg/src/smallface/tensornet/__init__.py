from .checkpoint import load_tensors, save_tensors
from .losses import smooth_l1_loss, softmax_ce_loss
from .model import DetectorModel, DetectorOutput, ModelConfig, Tensor
from .optim import TrainHyper, lr_at, sgd_momentum_step
from .ops import (
    bilinear_upsample_x2_backward,
    bilinear_upsample_x2_forward,
    concat_channels_backward,
    concat_channels_forward,
    conv2d_backward,
    conv2d_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
)

__all__ = [
    "DetectorModel", "DetectorOutput", "ModelConfig", "Tensor", "TrainHyper",
    "lr_at", "sgd_momentum_step", "softmax_ce_loss", "smooth_l1_loss",
    "conv2d_forward", "conv2d_backward", "relu_forward", "relu_backward",
    "maxpool2x2_forward", "maxpool2x2_backward", "concat_channels_forward",
    "concat_channels_backward", "bilinear_upsample_x2_forward",
    "bilinear_upsample_x2_backward", "save_tensors", "load_tensors",
]
