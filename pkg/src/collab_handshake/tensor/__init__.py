from .adam import AdamState, adam_step
from .gradcheck import finite_diff_check, finite_diff_params
from .params import ParamStore, glorot_uniform, init_conv3x3, init_linear
from .tape import Tape, Var, softmax

__all__ = [
    "AdamState", "ParamStore", "Tape", "Var", "adam_step", "finite_diff_check", "finite_diff_params",
    "glorot_uniform", "init_conv3x3", "init_linear", "softmax",
]
