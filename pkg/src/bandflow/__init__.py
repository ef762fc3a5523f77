"""bandflow: a desk-scale song-generation math engine.

Flow-matching training and Euler sampling with classifier-free guidance,
a transformer block kit (RoPE, adaptive layernorm, zero-init gated cross
attention), a three-group mixture of experts with Gumbel-Softmax routing,
a residual-quantization style bottleneck, a non-autoregressive note model,
and objective melody metrics -- all on a small reverse-mode autodiff
tensor core, trained and checked on synthetic data.
"""

from .tensor import Tensor, Tape, ParameterStore, backward  # noqa: F401

__version__ = "0.1.0"
