from .functional import (
    bce_with_logits,
    embedding,
    layer_norm,
    linear,
    masked_mean,
    multi_head_attention,
    sigmoid,
    softmax,
)
from .gradcheck import GradCheckReport, finite_diff_gradcheck, relative_error
from .layers import (
    MLP,
    AttentionBlock,
    FeedForwardBlock,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    normal_init,
    sinusoidal_positions,
    xavier_uniform,
)
from .optim import Adam, adam_update
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    check_finite,
    debug_mode,
    default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)


def backward(loss, params=()):
    """Zero the given parameters' gradients, then backpropagate ``loss``.

    Parameters not reachable from ``loss`` keep an all-zero gradient.
    """
    for p in params:
        p.zero_grad()
    loss.backward()
    for p in params:
        check_finite(p.grad, "gradient")
