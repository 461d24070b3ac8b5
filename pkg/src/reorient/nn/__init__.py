from .autodiff import Tensor, concat, stack
from .params import ParamSet, OptimizerState, adam_step, backprop
from .models import (
    TransformerConfig,
    RecurrentConfig,
    init_mlp,
    forward_mlp,
    init_transformer,
    forward_causal_attention,
    init_recurrent,
    forward_recurrent,
)

__all__ = [
    "Tensor", "concat", "stack",
    "ParamSet", "OptimizerState", "adam_step", "backprop",
    "TransformerConfig", "RecurrentConfig",
    "init_mlp", "forward_mlp",
    "init_transformer", "forward_causal_attention",
    "init_recurrent", "forward_recurrent",
]
