"""Prompted self-attention as a mixture of experts.

Numerical laboratory around three pillars: the exact per-row MoE reading of
prompted multi-head attention, an adaptive prompt generator with parameter
accounting, and a least-squares estimation study of the prompt parameters
with Voronoi-loss convergence rates.
"""

from .errors import ConfigError, DomainError, FitError, ShapeError
from .tensor_core import (
    Rng,
    channelwise_conv2d,
    layer_norm,
    layer_norm_rows,
    softmax_rows,
)
from .prompt_attention import (
    AttentionWeights,
    MoEDecomposition,
    moe_decompose,
    moe_eval,
    msa_forward,
    prompted_head_outputs,
    prompted_msa_forward,
    random_attention_weights,
)
from .vapt_prompts import (
    PromptShapeConfig,
    VaptParams,
    count_trainable_scalars,
    generate_adaptive_prompts,
    init_vapt_params,
    load_vapt_params,
    save_vapt_params,
    token_wise_project,
    vapt_forward,
    vapt_param_count,
    vpt_param_count,
)
from .gradient_engine import (
    ParamVector,
    finite_diff_grad,
    grad,
    grad_check,
)

__version__ = "0.1.0"
