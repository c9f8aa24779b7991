from . import ops
from .gradcheck import grad_check
from .nn import BatchNorm, Conv2d, ConvNormAct, LayerNorm, Linear, ParamStore
from .tensor import Parameter, Tensor, as_tensor, backward, grad_enabled, no_grad, reset

__all__ = [
    "BatchNorm",
    "Conv2d",
    "ConvNormAct",
    "LayerNorm",
    "Linear",
    "ParamStore",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "ops",
    "reset",
]
