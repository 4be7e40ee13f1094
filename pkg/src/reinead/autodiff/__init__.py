from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .nn import SGD, Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, default_dtype, no_grad, precision, set_default_dtype

__all__ = [
    "ops",
    "Tensor",
    "ShapeError",
    "Module",
    "Linear",
    "Conv2d",
    "SGD",
    "no_grad",
    "precision",
    "default_dtype",
    "set_default_dtype",
    "check_gradients",
    "numeric_grad",
    "relative_error",
]
