from . import ops
from .checkpoint import CheckpointError
from .core import (
    GraphError,
    ShapeError,
    SpikeTensor,
    Tape,
    backward,
    float64_mode,
    grad,
    no_grad,
    tensor,
)
from .ops import (
    add,
    conv2d,
    depthwise_conv2d,
    group_norm,
    hadamard,
    linear,
    pointwise_conv2d,
    relu,
    scalar_mul,
    sigmoid,
    spike,
    surrogate_grad,
)

__all__ = [
    "CheckpointError",
    "GraphError",
    "ShapeError",
    "SpikeTensor",
    "Tape",
    "add",
    "backward",
    "conv2d",
    "depthwise_conv2d",
    "float64_mode",
    "grad",
    "group_norm",
    "hadamard",
    "linear",
    "no_grad",
    "ops",
    "pointwise_conv2d",
    "relu",
    "scalar_mul",
    "sigmoid",
    "spike",
    "surrogate_grad",
    "tensor",
]
