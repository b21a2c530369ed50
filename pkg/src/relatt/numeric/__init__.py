from relatt.numeric.adam import AdamState, adam_step
from relatt.numeric.autograd import (
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    evaluate_with_gradients,
    gather,
    leaky_relu,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scatter_add,
    segment_softmax,
    sigmoid,
    softplus,
    sum_axis,
)
from relatt.numeric.checkpoint import load_checkpoint, save_checkpoint
from relatt.numeric.gradcheck import finite_difference_gradcheck, numeric_gradient

__all__ = [
    "AdamState", "adam_step", "Tape", "Tensor", "add", "as_tensor", "concat",
    "evaluate_with_gradients", "gather", "leaky_relu", "matmul", "mean", "mul", "relu",
    "reshape", "scatter_add", "segment_softmax", "sigmoid", "softplus", "sum_axis",
    "load_checkpoint", "save_checkpoint", "finite_difference_gradcheck", "numeric_gradient",
]
