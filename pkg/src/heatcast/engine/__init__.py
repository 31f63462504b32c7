from .checkpoint import dump_params, load_checkpoint, load_params, save_checkpoint
from .functional import (
    conv2d,
    dense,
    global_avg_pool,
    max_pool2d,
    selu,
    sigmoid,
    softmax,
    tanh,
    upsample2x,
)
from .gradcheck import grad_check
from .optim import Parameter, clip_weights, glorot_uniform, rmsprop_step, zero_grads
from .tensor import NumericalError, Tensor, concat, no_grad, stack

__all__ = [
    "NumericalError",
    "Parameter",
    "Tensor",
    "clip_weights",
    "concat",
    "conv2d",
    "dense",
    "dump_params",
    "glorot_uniform",
    "global_avg_pool",
    "grad_check",
    "load_checkpoint",
    "load_params",
    "max_pool2d",
    "no_grad",
    "rmsprop_step",
    "save_checkpoint",
    "selu",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
    "upsample2x",
    "zero_grads",
]
