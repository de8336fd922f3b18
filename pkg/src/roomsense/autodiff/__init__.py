from . import ops
from .checkpoint import checkpoint_sha256, load_checkpoint, save_checkpoint
from .module import (Conv2d, ConvBlock, DepthwiseConv2d, Linear, Module,
                     SeparableConv2d, he_weights, zeros_param)
from .optim import Adam, adam_step
from .tensor import Tensor, as_tensor, backward, no_grad, reset_tape, tape

__all__ = [
    "ops", "Tensor", "as_tensor", "backward", "no_grad", "reset_tape", "tape",
    "Module", "Conv2d", "DepthwiseConv2d", "SeparableConv2d", "Linear",
    "ConvBlock", "he_weights", "zeros_param", "Adam", "adam_step",
    "save_checkpoint", "load_checkpoint", "checkpoint_sha256",
]
