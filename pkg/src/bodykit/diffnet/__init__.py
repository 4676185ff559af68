from . import tensor
from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .layers import BatchNorm, CoreBlock, Linear, Module, PReLU, Sequential
from .optim import Adam, NonFiniteGradient, adam_step
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Adam", "BatchNorm", "CoreBlock", "Linear", "Module", "NonFiniteGradient", "PReLU",
    "Sequential", "Tensor", "adam_step", "backward", "checkpoint_hash", "load_checkpoint",
    "no_grad", "save_checkpoint", "tensor",
]
