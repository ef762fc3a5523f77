"""Attention and normalization building blocks.

Contains scaled-dot-product attention, rotary position rotation, the
zero-initialized gated self/cross attention used by the main transformer
block, the stacked style-alignment attention, and the block itself (whose
feed-forward slot can be replaced by a mixture-of-experts).
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .errors import ConfigError, DimensionError
from .tensor import ParameterStore, Tensor

ROPE_BASE = 10000.0


def sdp_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v for 2-D [tokens, width] operands."""
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key/value counts differ: {k.shape[0]} vs {v.shape[0]}")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = tt.mul(tt.matmul(q, tt.transpose(k)), scale)
    return tt.matmul(tt.softmax(scores, axis=-1), v)


def rope_rotate(x, positions=None):
    """Rotate consecutive coordinate pairs by position-dependent angles.

    x: [T, d] with even d; positions defaults to 0..T-1.  Angle ladder is
    theta_j = ROPE_BASE^(-2j/d).
    """
    if x.shape[-1] % 2 != 0:
        raise ConfigError(f"rope needs an even width, got {x.shape[-1]}")
    T, d = x.shape
    if positions is None:
        positions = np.arange(T)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (T,):
        raise DimensionError(f"positions shape {positions.shape} != ({T},)")
    half = d // 2
    theta = ROPE_BASE ** (-2.0 * np.arange(half) / d)
    ang = positions[:, None] * theta[None, :]
    cos, sin = np.cos(ang), np.sin(ang)
    xe = x[:, 0::2]
    xo = x[:, 1::2]
    ye = tt.sub(tt.mul(xe, cos), tt.mul(xo, sin))
    yo = tt.add(tt.mul(xe, sin), tt.mul(xo, cos))
    stacked = tt.concat([tt.reshape(ye, (T, half, 1)), tt.reshape(yo, (T, half, 1))], axis=2)
    return tt.reshape(stacked, (T, d))


def positional_encoding(T, d):
    """Fixed sin/cos position features of width d (d even)."""
    half = d // 2
    theta = ROPE_BASE ** (-2.0 * np.arange(half) / d)
    ang = np.arange(T)[:, None] * theta[None, :]
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


def global_style(z_p, z_v, time_vec):
    """Temporal mean of prompt tokens and vocal embedding plus time features.

    Returns a [1, d] tensor used to drive the adaptive-layernorm modulation.
    """
    zp_mean = tt.mean(z_p, axis=0, keepdims=True)
    zv_mean = tt.mean(z_v, axis=0, keepdims=True)
    t = time_vec if time_vec.ndim == 2 else tt.reshape(time_vec, (1, time_vec.shape[0]))
    return tt.add(tt.add(zp_mean, zv_mean), t)


class GatedAttention:
    """Multi-head self-attention with a tanh-gated cross-attention branch.

    The gate scalar starts at zero and the output projection is
    zero-initialized, so the whole module contributes nothing at init.
    Queries and self-keys are rotated with RoPE; cross keys are not.
    """

    def __init__(self, d, heads, rng, params: ParameterStore, prefix):
        if d % heads != 0:
            raise ConfigError(f"width {d} not divisible by {heads} heads")
        if (d // heads) % 2 != 0:
            raise ConfigError("head width must be even for RoPE")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        s = 1.0 / np.sqrt(d)
        p = params
        self.wq = p.add(f"{prefix}.wq", rng.standard_normal((d, d)) * s)
        self.wk = p.add(f"{prefix}.wk", rng.standard_normal((d, d)) * s)
        self.wv = p.add(f"{prefix}.wv", rng.standard_normal((d, d)) * s)
        self.wkz = p.add(f"{prefix}.wkz", rng.standard_normal((d, d)) * s)
        self.wvz = p.add(f"{prefix}.wvz", rng.standard_normal((d, d)) * s)
        self.wo = p.add(f"{prefix}.wo", np.zeros((d, d)))
        self.alpha = p.add(f"{prefix}.alpha", np.zeros(()))

    def __call__(self, h, z_p=None, positions=None):
        T = h.shape[0]
        q = tt.matmul(h, self.wq)
        k = tt.matmul(h, self.wk)
        v = tt.matmul(h, self.wv)
        if z_p is not None:
            kz = tt.matmul(z_p, self.wkz)
            vz = tt.matmul(z_p, self.wvz)
        outs = []
        gate = tt.tanh(self.alpha)
        for i in range(self.heads):
            lo, hi = i * self.head_dim, (i + 1) * self.head_dim
            qh = rope_rotate(q[:, lo:hi], positions)
            kh = rope_rotate(k[:, lo:hi], positions)
            out = sdp_attention(qh, kh, v[:, lo:hi])
            if z_p is not None:
                cross = sdp_attention(qh, kz[:, lo:hi], vz[:, lo:hi])
                out = tt.add(out, tt.mul(cross, gate))
            outs.append(out)
        return tt.matmul(tt.concat(outs, axis=1), self.wo)

    def cross_branch(self, h, z_p, positions=None):
        """The gated cross-attention contribution alone (for inspection)."""
        q = tt.matmul(h, self.wq)
        kz = tt.matmul(z_p, self.wkz)
        vz = tt.matmul(z_p, self.wvz)
        outs = []
        gate = tt.tanh(self.alpha)
        for i in range(self.heads):
            lo, hi = i * self.head_dim, (i + 1) * self.head_dim
            qh = rope_rotate(q[:, lo:hi], positions)
            outs.append(tt.mul(sdp_attention(qh, kz[:, lo:hi], vz[:, lo:hi]), gate))
        return tt.concat(outs, axis=1)


class FeedForward:
    """Position-wise 2-layer MLP; zero biases so FFN(0) = 0 at init."""

    def __init__(self, d, hidden, rng, params: ParameterStore, prefix):
        self.w1 = params.add(f"{prefix}.w1", rng.standard_normal((d, hidden)) / np.sqrt(d))
        self.b1 = params.add(f"{prefix}.b1", np.zeros(hidden))
        self.w2 = params.add(f"{prefix}.w2", rng.standard_normal((hidden, d)) / np.sqrt(hidden))
        self.b2 = params.add(f"{prefix}.b2", np.zeros(d))

    def __call__(self, h):
        return tt.add(tt.matmul(tt.silu(tt.add(tt.matmul(h, self.w1), self.b1)), self.w2), self.b2)


def style_alignment_stack(z_ct, z_p, layers):
    """Iteratively stylize content tokens by attending into prompt tokens.

    Each layer adds sdp_attention(current, z_p, z_p) residually; the fused
    condition is the stylized stream concatenated with the original content.
    Position features are added to z_p before attention.  Returns a
    [P, 2d] tensor; callers treat an empty z_p as the null condition.
    """
    z = z_ct
    if layers > 0:
        zp = tt.add(z_p, positional_encoding(z_p.shape[0], z_p.shape[1]))
        for _ in range(layers):
            z = tt.add(z, sdp_attention(z, zp, zp))
    return tt.concat([z, z_ct], axis=1)


class BandBlock:
    """Pre-norm transformer block: gated attention then modulated expert slot.

    Sequence: rmsnorm -> RoPE self-attention + tanh(alpha)-gated cross
    attention on prompt tokens -> residual; adaptive layernorm driven by the
    global style vector -> feed-forward (or a mixture-of-experts when
    `moe` is wired) -> residual.  All injection paths are zero-initialized,
    so the block is an exact identity before training.
    """

    def __init__(self, d, heads, rng, params: ParameterStore, prefix,
                 ffn_hidden=None, moe=None):
        self.d = d
        self.attn = GatedAttention(d, heads, rng, params, f"{prefix}.attn")
        self.norm_gain = params.add(f"{prefix}.norm_gain", np.ones(d))
        # adaptive-layernorm modulation from the global style vector;
        # zero-init scale and shift projections
        self.w_scale = params.add(f"{prefix}.ada_scale", np.zeros((d, d)))
        self.w_shift = params.add(f"{prefix}.ada_shift", np.zeros((d, d)))
        self.moe = moe
        if moe is None:
            self.ffn = FeedForward(d, ffn_hidden or 4 * d, rng, params, f"{prefix}.ffn")
        else:
            self.ffn = None

    def __call__(self, h, z_p, z_g, positions=None, moe_ctx=None):
        """h: [T, d]; z_p: [P, d] or None; z_g: [1, d] global style."""
        a = tt.add(h, self.attn(tt.rmsnorm(h, self.norm_gain), z_p, positions))
        scale = tt.reshape(tt.matmul(z_g, self.w_scale), (self.d,))
        shift = tt.reshape(tt.matmul(z_g, self.w_shift), (self.d,))
        mod = tt.adaln(a, scale, shift)
        if self.moe is not None:
            f = self.moe(mod, **(moe_ctx or {}))
        else:
            f = self.ffn(mod)
        return tt.add(a, f)
