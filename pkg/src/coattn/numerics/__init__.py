"""Dense float64 matrix arithmetic with tape-based reverse-mode gradients."""
from coattn.numerics.tensor import Parameter, Tape, Tensor, as_matrix, backward, current_tape
from coattn.numerics.ops import (
    LAYER_NORM_EPS,
    add,
    attention,
    attention_weights,
    concat_cols,
    concat_rows,
    l2_normalize_rows,
    layer_norm,
    matmul,
    mean_rows,
    multi_head_attention,
    nt_xent,
    scale,
    softmax_rows,
    sum_all,
    transpose,
)
from coattn.numerics import kernels

__all__ = [
    "LAYER_NORM_EPS", "Parameter", "Tape", "Tensor", "add", "as_matrix", "attention",
    "attention_weights", "backward", "concat_cols", "concat_rows", "current_tape", "kernels",
    "l2_normalize_rows", "layer_norm", "matmul", "mean_rows", "multi_head_attention", "nt_xent", "scale",
    "softmax_rows", "sum_all", "transpose",
]
