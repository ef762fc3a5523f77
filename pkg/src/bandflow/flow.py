"""Straight-path flow matching: training objective, Euler sampling, guidance.

The probability path interpolates linearly between a Gaussian draw x0 and a
data point x1; the regression target for the field estimator is x1 - x0.
Sampling integrates the learned field with explicit Euler steps from t=0
(generation) or t=0.5 (style transfer from a noised prompt).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigError, DimensionError, NumericError
from .tensor import ParameterStore, Tensor

TIME_EMBED_DIM = 128


@dataclass
class FlowConfig:
    train_timesteps: int = 100
    infer_steps: int = 25
    cfg_scale: float = 3.0
    cond_drop_prob: float = 0.2
    continuous_t: bool = False

    def __post_init__(self):
        if self.train_timesteps < 1:
            raise ConfigError("train_timesteps must be >= 1")
        if self.infer_steps < 1:
            raise ConfigError("infer_steps must be >= 1")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ConfigError("cond_drop_prob must lie in [0, 1]")
        if self.cfg_scale < 0.0:
            raise ConfigError("cfg_scale must be >= 0")


@dataclass
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray = field(init=False)
    u: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise DimensionError(f"endpoint shapes differ: {self.x0.shape} vs {self.x1.shape}")
        self.xt = (1.0 - self.t) * self.x0 + self.t * self.x1
        self.u = self.x1 - self.x0


def make_flow_sample(x1, rng, cfg: FlowConfig, x0=None, t=None) -> FlowSample:
    """Draw one training point on the straight noise-to-data path."""
    x1 = np.asarray(x1, dtype=np.float64)
    if x0 is None:
        x0 = rng.standard_normal(x1.shape)
    if t is None:
        if cfg.continuous_t:
            t = float(rng.uniform())
        else:
            t = float(rng.integers(cfg.train_timesteps)) / cfg.train_timesteps
    return FlowSample(x0=np.asarray(x0, dtype=np.float64), x1=x1, t=float(t))


def cfg_field(v_cond, v_uncond, gamma):
    """Guided field: gamma * conditional + (1 - gamma) * unconditional."""
    if v_cond.shape != v_uncond.shape:
        raise DimensionError(f"field shapes differ: {v_cond.shape} vs {v_uncond.shape}")
    return tt.add(tt.mul(v_cond, float(gamma)), tt.mul(v_uncond, 1.0 - float(gamma)))


def cfm_loss(estimator, samples, conds=None):
    """Mean squared field error over a batch of FlowSamples."""
    if conds is None:
        conds = [None] * len(samples)
    if len(conds) != len(samples):
        raise DimensionError("one condition entry per sample required")
    total = None
    for s, c in zip(samples, conds):
        v = estimator(Tensor(s.xt), s.t, c)
        if v.shape != s.xt.shape:
            raise DimensionError(f"estimator output {v.shape} != input {s.xt.shape}")
        term = tt.mse(v, Tensor(s.u))
        total = term if total is None else tt.add(total, term)
    return tt.mul(total, 1.0 / len(samples))


def euler_sample(estimator, x_init, cond, cfg: FlowConfig, t_start=0.0,
                 null_cond=None, trace=None):
    """Integrate the learned field from t_start to 1 with explicit Euler steps.

    When `null_cond` is given and cfg.cfg_scale != 1, each step evaluates the
    estimator twice and blends with cfg_field.  `trace`, if a list, collects
    (step, t, mean|x|, mean|v|) rows.
    """
    x = x_init if isinstance(x_init, Tensor) else Tensor(np.asarray(x_init, dtype=np.float64))
    eps = (1.0 - t_start) / cfg.infer_steps
    for i in range(cfg.infer_steps):
        t = t_start + i * eps
        v = estimator(x, t, cond)
        if null_cond is not None and cfg.cfg_scale != 1.0:
            v = cfg_field(v, estimator(x, t, null_cond), cfg.cfg_scale)
        x = tt.add(x, tt.mul(v, eps))
        if not np.isfinite(x.data).all():
            raise NumericError(f"non-finite state at Euler step {i}")
        if trace is not None:
            trace.append((i, t, float(np.abs(x.data).mean()), float(np.abs(v.data).mean())))
    return x


def noisy_prompt_start(prompt, rng, t_start=0.5):
    """Style-transfer start state: the training path evaluated at t_start."""
    prompt = np.asarray(prompt, dtype=np.float64)
    noise = rng.standard_normal(prompt.shape)
    return (1.0 - t_start) * noise + t_start * prompt


# ---------------------------------------------------------------------------
# time embedding

def sinusoidal_embedding(t, dim=TIME_EMBED_DIM):
    """Classic sin/cos features of scalar times; t is a float or 1-D array."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TimeEmbedding:
    """Sinusoidal features followed by a 2-layer projection."""

    def __init__(self, out_dim, rng, params: ParameterStore, prefix="time_embed",
                 sin_dim=TIME_EMBED_DIM):
        self.sin_dim = sin_dim
        s1 = 1.0 / np.sqrt(sin_dim)
        s2 = 1.0 / np.sqrt(out_dim)
        self.w1 = params.add(f"{prefix}.w1", rng.standard_normal((sin_dim, out_dim)) * s1)
        self.b1 = params.add(f"{prefix}.b1", np.zeros(out_dim))
        self.w2 = params.add(f"{prefix}.w2", rng.standard_normal((out_dim, out_dim)) * s2)
        self.b2 = params.add(f"{prefix}.b2", np.zeros(out_dim))

    def __call__(self, t):
        feats = Tensor(sinusoidal_embedding(t, self.sin_dim))
        h = tt.silu(tt.add(tt.matmul(feats, self.w1), self.b1))
        return tt.add(tt.matmul(h, self.w2), self.b2)


# ---------------------------------------------------------------------------
# estimators

class MLPEstimator:
    """Small MLP field estimator for low-dimensional batched data [B, D]."""

    def __init__(self, dim, hidden, rng, cond_dim=0, n_hidden=2):
        self.dim = dim
        self.cond_dim = cond_dim
        self.params = ParameterStore()
        self.time = TimeEmbedding(hidden, rng, self.params, prefix="mlp.time")
        in_dim = dim + hidden + cond_dim
        sizes = [in_dim] + [hidden] * n_hidden
        self._layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = self.params.add(f"mlp.w{i}", rng.standard_normal((a, b)) / np.sqrt(a))
            bias = self.params.add(f"mlp.b{i}", np.zeros(b))
            self._layers.append((w, bias))
        # zero-init output so the field starts at zero
        self.w_out = self.params.add("mlp.w_out", np.zeros((hidden, dim)))
        self.b_out = self.params.add("mlp.b_out", np.zeros(dim))

    def __call__(self, xt, t, cond=None):
        squeeze = xt.ndim == 1
        x = tt.reshape(xt, (1, self.dim)) if squeeze else xt
        n = x.shape[0]
        temb = self.time(np.full(n, float(t)) if np.isscalar(t) else t)
        parts = [x, temb]
        if self.cond_dim:
            if cond is None:
                raise DimensionError("estimator built with cond_dim > 0 requires a condition")
            c = cond if isinstance(cond, Tensor) else Tensor(cond)
            if c.ndim == 1:
                c = tt.reshape(c, (1, self.cond_dim))
            if c.shape[0] == 1 and n > 1:
                c = tt.gather(c, np.zeros(n, dtype=np.int64))
            parts.append(c)
        h = tt.concat(parts, axis=1)
        for w, b in self._layers:
            h = tt.silu(tt.add(tt.matmul(h, w), b))
        out = tt.add(tt.matmul(h, self.w_out), self.b_out)
        return tt.reshape(out, (self.dim,)) if squeeze else out


class WaveNetEstimator:
    """Non-causal dilated-convolution field estimator over [channels, frames].

    Gated residual blocks (tanh * sigmoid) with skip connections; the time
    embedding is projected into the condition stream; the output projection
    is zero-initialized so the field starts at zero.
    """

    def __init__(self, x_channels, cond_channels, rng, residual_channels=32,
                 layers=4, kernel=3, dilation_base=2):
        if kernel % 2 == 0:
            raise ConfigError("kernel width must be odd")
        self.x_channels = x_channels
        self.cond_channels = cond_channels
        self.residual_channels = residual_channels
        self.n_layers = layers
        self.kernel = kernel
        self.dilations = [dilation_base ** i for i in range(layers)]
        self.params = ParameterStore()
        p = self.params
        r = residual_channels
        self.time = TimeEmbedding(cond_channels, rng, p, prefix="wavenet.time")
        self.w_in = p.add("wavenet.w_in", rng.standard_normal((r, x_channels)) / np.sqrt(x_channels))
        self._blocks = []
        for i in range(layers):
            blk = {
                "conv": p.add(f"wavenet.l{i}.conv",
                              rng.standard_normal((2 * r, r, kernel)) / np.sqrt(r * kernel)),
                "conv_b": p.add(f"wavenet.l{i}.conv_b", np.zeros(2 * r)),
                "cond": p.add(f"wavenet.l{i}.cond",
                              rng.standard_normal((2 * r, cond_channels)) / np.sqrt(cond_channels)),
                "res": p.add(f"wavenet.l{i}.res", rng.standard_normal((r, r)) / np.sqrt(r)),
                "skip": p.add(f"wavenet.l{i}.skip", rng.standard_normal((r, r)) / np.sqrt(r)),
            }
            self._blocks.append(blk)
        self.w_mid = p.add("wavenet.w_mid", rng.standard_normal((r, r)) / np.sqrt(r))
        self.w_out = p.add("wavenet.w_out", np.zeros((x_channels, r)))
        self.b_out = p.add("wavenet.b_out", np.zeros(x_channels))

    def __call__(self, xt, t, cond):
        """xt: [x_channels, T]; cond: [cond_channels, T] tensor or array."""
        x = xt if isinstance(xt, Tensor) else Tensor(xt)
        if x.ndim != 2 or x.shape[0] != self.x_channels:
            raise DimensionError(f"expected [{self.x_channels}, T] input, got {x.shape}")
        T = x.shape[1]
        c = cond if isinstance(cond, Tensor) else Tensor(cond)
        if c.shape != (self.cond_channels, T):
            raise DimensionError(
                f"condition shape {c.shape} != ({self.cond_channels}, {T})")
        temb = self.time(float(t))          # [1, cond_channels]
        c = tt.add(c, tt.transpose(temb))   # broadcast over frames
        h = tt.matmul(self.w_in, x)
        r = self.residual_channels
        skip_sum = None
        for blk, dil in zip(self._blocks, self.dilations):
            z = tt.conv1d(h, blk["conv"], dilation=dil, bias=blk["conv_b"])
            z = tt.add(z, tt.matmul(blk["cond"], c))
            gate = tt.mul(tt.tanh(z[:r, :]), tt.sigmoid(z[r:, :]))
            h = tt.add(h, tt.matmul(blk["res"], gate))
            s = tt.matmul(blk["skip"], gate)
            skip_sum = s if skip_sum is None else tt.add(skip_sum, s)
        out = tt.silu(tt.matmul(self.w_mid, tt.silu(skip_sum)))
        return tt.add(tt.matmul(self.w_out, out), tt.reshape(self.b_out, (self.x_channels, 1)))
