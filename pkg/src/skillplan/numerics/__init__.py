from .gradcheck import finite_difference_check
from .layers import affine, avg_pool_time, conv1d_temporal, group_norm, mish, upsample_time
from .params import ParamStore, adam_step, load_tensors, save_tensors
from .rng import make_rng, restore_rng, rng_state, split
from .tensor import (
    ConfigError,
    ContractError,
    Tensor,
    TrainingError,
    concat,
    exp,
    matmul,
    no_grad,
    softmax,
    stack,
    straight_through,
    tanh,
    tensor,
    where,
)

__all__ = [
    "ConfigError", "ContractError", "ParamStore", "Tensor", "TrainingError",
    "adam_step", "affine", "avg_pool_time", "concat", "conv1d_temporal", "exp",
    "finite_difference_check", "group_norm", "load_tensors", "make_rng", "matmul",
    "mish", "no_grad", "restore_rng", "rng_state", "save_tensors", "softmax", "split", "stack",
    "straight_through", "tanh", "tensor", "upsample_time", "where",
]
