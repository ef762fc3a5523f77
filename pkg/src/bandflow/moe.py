"""Three-group mixture of experts with dense-to-sparse Gumbel-Softmax routing.

Groups: one routed per time token by the vocal embedding, one routed per
time token by a cross-attention style summary of the prompt tokens, and one
routed per feature channel by channel statistics.  A dense global gate over
the time-step embedding blends the first two.  Training uses dense
(differentiable) gates at temperature tau annealed from 2.0 down to 0.3;
inference uses hard one-expert routing everywhere except the global gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .blocks import FeedForward, sdp_attention
from .errors import ConfigError, DimensionError
from .tensor import ParameterStore, Tensor

TAU_HIGH = 2.0
TAU_LOW = 0.3
BALANCE_ALPHA = 0.1


def tau_schedule(progress):
    """Linear anneal from TAU_HIGH to TAU_LOW as progress goes 0 -> 1."""
    p = min(max(float(progress), 0.0), 1.0)
    return TAU_HIGH + (TAU_LOW - TAU_HIGH) * p


@dataclass
class RouterState:
    """Routing configuration shared by the expert groups for one pass."""
    tau: float = TAU_HIGH
    mode: str = "dense"          # "dense" (training) or "hard" (inference)
    rng: object = None

    def __post_init__(self):
        if self.mode not in ("dense", "hard"):
            raise ConfigError(f"unknown router mode {self.mode!r}")


def gumbel_gate(logits, tau, rng=None, mode="dense", noise=None):
    """Per-row gate weights over experts from routing logits [n, N].

    Dense mode: softmax((logits + gumbel_noise) / tau), differentiable.
    Hard mode: noise-free one-hot argmax of the logits.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if mode == "hard":
        data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        hard = np.zeros_like(data)
        hard[np.arange(data.shape[0]), data.argmax(axis=1)] = 1.0
        return Tensor(hard)
    if mode != "dense":
        raise ConfigError(f"unknown router mode {mode!r}")
    if noise is None:
        if rng is None:
            noise = np.zeros(logits.shape)
        else:
            u = rng.uniform(low=np.finfo(float).tiny, high=1.0, size=logits.shape)
            noise = -np.log(-np.log(u))
    return tt.softmax(tt.mul(tt.add(logits, noise), 1.0 / tau), axis=-1)


def gate_entropy(gates):
    """Mean Shannon entropy (nats) of gate rows."""
    g = gates.data if isinstance(gates, Tensor) else np.asarray(gates)
    g = np.clip(g, 1e-300, None)
    return float(-(g * np.log(g)).sum(axis=-1).mean())


def balance_loss(gates, alpha=BALANCE_ALPHA, form="switch"):
    """Load-balancing regularizer over dense gates [n, N].

    "switch": alpha * N * sum_i f_i * P_i with f_i the argmax-traffic
    fraction (constant) and P_i the mean dense gate.  "literal": alpha * N *
    sum_i mean_n g_i, which is identically alpha * N for normalized gates
    and therefore carries no gradient signal; kept for comparison.
    """
    n, num = gates.shape
    mean_gate = tt.mean(gates, axis=0)          # [N]
    if form == "literal":
        return tt.mul(tt.sum_(mean_gate), alpha * num)
    if form != "switch":
        raise ConfigError(f"unknown balance-loss form {form!r}")
    choices = gates.data.argmax(axis=1)
    frac = np.bincount(choices, minlength=num) / n
    return tt.mul(tt.sum_(tt.mul(mean_gate, frac)), alpha * num)


class ExpertGroup:
    """Shared-width position-wise feed-forward experts."""

    def __init__(self, d, n_experts, rng, params: ParameterStore, prefix, hidden=None):
        if n_experts < 1:
            raise ConfigError("need at least one expert")
        self.d = d
        self.n = n_experts
        self.experts = [
            FeedForward(d, hidden or 2 * d, rng, params, f"{prefix}.expert{i}")
            for i in range(n_experts)
        ]

    def mix_tokens(self, h, gates):
        """Per-token mixture: output[t] = sum_i gates[t, i] * expert_i(h)[t]."""
        out = None
        for i, ex in enumerate(self.experts):
            term = tt.mul(ex(h), gates[:, i:i + 1])
            out = term if out is None else tt.add(out, term)
        return out

    def mix_channels(self, h, gates):
        """Per-channel mixture: output[:, c] = sum_j gates[c, j] * expert_j(h)[:, c]."""
        out = None
        for j, ex in enumerate(self.experts):
            term = tt.mul(ex(h), tt.reshape(gates[:, j], (self.d,)))
            out = term if out is None else tt.add(out, term)
        return out


class BandMoE:
    """The full three-group expert layer plus global gate (one block's slot)."""

    def __init__(self, d, n_experts, rng, params: ParameterStore, prefix,
                 time_dim=None, hidden=None, balance_form="switch"):
        self.d = d
        self.n = n_experts
        self.balance_form = balance_form
        time_dim = time_dim or d
        p = params
        self.aligned = ExpertGroup(d, n_experts, rng, p, f"{prefix}.aligned", hidden)
        self.controlled = ExpertGroup(d, n_experts, rng, p, f"{prefix}.controlled", hidden)
        self.acoustic = ExpertGroup(d, n_experts, rng, p, f"{prefix}.acoustic", hidden)
        s = 1.0 / np.sqrt(d)
        self.w_aligned = p.add(f"{prefix}.w_aligned", rng.standard_normal((d, n_experts)) * s)
        self.w_controlled = p.add(f"{prefix}.w_controlled", rng.standard_normal((d, n_experts)) * s)
        # channel router sees (mean, var) over time for each channel
        self.w_acoustic = p.add(f"{prefix}.w_acoustic", rng.standard_normal((2, n_experts)))
        self.w_global = p.add(f"{prefix}.w_global",
                              rng.standard_normal((time_dim, 2)) / np.sqrt(time_dim))
        self.last_gates = {}

    # -- individual routing stages -----------------------------------------

    def route_aligned(self, h, z_v, state: RouterState):
        if h.shape[0] != z_v.shape[0]:
            raise DimensionError(f"token counts differ: {h.shape[0]} vs {z_v.shape[0]}")
        logits = tt.matmul(z_v, self.w_aligned)
        gates = gumbel_gate(logits, state.tau, state.rng, state.mode)
        self.last_gates["aligned"] = gates
        return self.aligned.mix_tokens(h, gates)

    def route_controlled(self, h, z_p, state: RouterState):
        z_sty = sdp_attention(h, z_p, z_p)
        logits = tt.matmul(z_sty, self.w_controlled)
        gates = gumbel_gate(logits, state.tau, state.rng, state.mode)
        self.last_gates["controlled"] = gates
        return self.controlled.mix_tokens(h, gates)

    def global_mix(self, o_aligned, o_controlled, time_vec, state: RouterState):
        """Blend the two token-routed outputs; the global gate stays dense."""
        t = time_vec if time_vec.ndim == 2 else tt.reshape(time_vec, (1, time_vec.shape[0]))
        logits = tt.matmul(t, self.w_global)
        gates = gumbel_gate(logits, state.tau, state.rng, mode="dense")
        self.last_gates["global"] = gates
        alpha = gates[0:1, 0:1]
        beta = gates[0:1, 1:2]
        return tt.add(tt.mul(o_aligned, alpha), tt.mul(o_controlled, beta))

    def route_acoustic(self, o_combined, state: RouterState):
        m = tt.mean(o_combined, axis=0, keepdims=True)                      # [1, d]
        sq = tt.mean(tt.mul(o_combined, o_combined), axis=0, keepdims=True)
        var = tt.sub(sq, tt.mul(m, m))
        stats = tt.concat([tt.transpose(m), tt.transpose(var)], axis=1)     # [d, 2]
        logits = tt.matmul(stats, self.w_acoustic)
        gates = gumbel_gate(logits, state.tau, state.rng, state.mode)
        self.last_gates["acoustic"] = gates
        return self.acoustic.mix_channels(o_combined, gates)

    # -- full layer ---------------------------------------------------------

    def __call__(self, h, z_v=None, z_p=None, time_vec=None, state=None):
        state = state or RouterState()
        o_a = self.route_aligned(h, z_v, state)
        o_c = self.route_controlled(h, z_p, state)
        o = self.global_mix(o_a, o_c, time_vec, state)
        return self.route_acoustic(o, state)

    def balance(self, alpha=BALANCE_ALPHA):
        """Sum of balance losses over the three hard-routable groups."""
        total = None
        for name in ("aligned", "controlled", "acoustic"):
            if name not in self.last_gates:
                continue
            term = balance_loss(self.last_gates[name], alpha, self.balance_form)
            total = term if total is None else tt.add(total, term)
        return total


class PlainBandFFN:
    """The routing-free composition a one-expert BandMoE reduces to.

    Shares the expert and global-gate parameters of `moe`; used to verify
    the N=1 reduction is exact.
    """

    def __init__(self, moe: BandMoE):
        if moe.n != 1:
            raise ConfigError("reduction only defined for single-expert groups")
        self.moe = moe

    def __call__(self, h, z_v=None, z_p=None, time_vec=None, state=None):
        m = self.moe
        o_a = m.aligned.experts[0](h)
        o_c = m.controlled.experts[0](h)
        t = time_vec if time_vec.ndim == 2 else tt.reshape(time_vec, (1, time_vec.shape[0]))
        state = state or RouterState()
        gates = gumbel_gate(tt.matmul(t, m.w_global), state.tau, state.rng, mode="dense")
        o = tt.add(tt.mul(o_a, gates[0:1, 0:1]), tt.mul(o_c, gates[0:1, 1:2]))
        return m.acoustic.experts[0](o)
