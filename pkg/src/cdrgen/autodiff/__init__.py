from .tensor import (
    GradcheckError,
    Tensor,
    as_tensor,
    concat,
    constant,
    cross3,
    dot_last,
    evaluate_with_gradients,
    exp,
    gather_rows,
    getitem,
    grad_enabled,
    log,
    log_softmax,
    matmul,
    maximum_const,
    no_grad,
    normalize_rows,
    parameter,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    silu,
    softmax,
    softplus,
    sqrt,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .optim import OptimizerConfig, OptimizerState, optimizer_step
from .checkpoint import CheckpointError, FORMAT_VERSION, load_checkpoint, save_checkpoint

__all__ = [
    "GradcheckError",
    "Tensor",
    "as_tensor",
    "concat",
    "constant",
    "cross3",
    "dot_last",
    "evaluate_with_gradients",
    "exp",
    "gather_rows",
    "getitem",
    "grad_enabled",
    "log",
    "log_softmax",
    "matmul",
    "maximum_const",
    "no_grad",
    "normalize_rows",
    "parameter",
    "reshape",
    "segment_softmax",
    "segment_sum",
    "sigmoid",
    "silu",
    "softmax",
    "softplus",
    "sqrt",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
    "OptimizerConfig",
    "OptimizerState",
    "optimizer_step",
    "CheckpointError",
    "FORMAT_VERSION",
    "load_checkpoint",
    "save_checkpoint",
]
