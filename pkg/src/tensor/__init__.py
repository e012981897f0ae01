from src.tensor.tensor import Function, ScalarMode, Tensor, backward  # noqa: F401
from src.tensor.ops import (  # noqa: F401
    RunningStats,
    batchnorm2d,
    conv2d,
    flatten,
    global_avg_pool,
    linear,
    mul,
    per_sample_cross_entropy,
    relu,
    residual_add,
    softmax_cross_entropy,
    tensor_sum,
)
from src.tensor.gradcheck import finite_diff_check, numerical_gradient  # noqa: F401
