"""Windowed transformer encoder over structured context windows.

Each length-L window is encoded independently: multi-head self-attention
never crosses window boundaries, so the cost of encoding a whole sequence
stays linear in its length at fixed window size.  Blocks use the pre-norm
arrangement (x + MSA(LN(x)), then x + FFN(LN(x))) with ReLU feed-forwards
and a final layer norm; a learned additive positional embedding of length
L distinguishes left from right context and can be disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    layers: int = 6
    channels: int = 256
    heads: int = 4
    ffn_multiplier: int = 4
    window_length: int = 17  # L = 2K+1
    positional_embedding: bool = True

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError(f"encoder needs at least 1 layer, got {self.layers}")
        if self.window_length < 1:
            raise ConfigError(f"window length must be >= 1, got {self.window_length}")
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by heads ({self.heads})")


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator,
                        prefix: str = "encoder.") -> dict:
    """He-uniform weights, zero biases, unit layer-norm gains."""
    cfg.validate()
    c, l = cfg.channels, cfg.window_length
    hidden = cfg.ffn_multiplier * c
    params = {}

    def param(name, data):
        params[prefix + name] = Tensor(data, requires_grad=True)

    param("pos", (0.02 * rng.standard_normal((l, c))).astype(np.float32))
    for i in range(cfg.layers):
        base = f"layer{i}."
        param(base + "ln1.gain", np.ones(c, dtype=np.float32))
        param(base + "ln1.bias", np.zeros(c, dtype=np.float32))
        param(base + "attn.wqkv", tz.he_uniform(rng, (c, 3 * c), c))
        param(base + "attn.bqkv", np.zeros(3 * c, dtype=np.float32))
        param(base + "attn.wout", tz.he_uniform(rng, (c, c), c))
        param(base + "attn.bout", np.zeros(c, dtype=np.float32))
        param(base + "ln2.gain", np.ones(c, dtype=np.float32))
        param(base + "ln2.bias", np.zeros(c, dtype=np.float32))
        param(base + "ffn.w1", tz.he_uniform(rng, (c, hidden), c))
        param(base + "ffn.b1", np.zeros(hidden, dtype=np.float32))
        param(base + "ffn.w2", tz.he_uniform(rng, (hidden, c), hidden))
        param(base + "ffn.b2", np.zeros(c, dtype=np.float32))
    param("final_ln.gain", np.ones(c, dtype=np.float32))
    param("final_ln.bias", np.zeros(c, dtype=np.float32))
    return params


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """[..., Cin] @ [Cin, Cout] + bias, via a single flattened matmul."""
    lead = x.shape[:-1]
    flat = tz.reshape(x, (-1, x.shape[-1]))
    out = tz.add(tz.matmul(flat, w), b)
    return tz.reshape(out, (*lead, w.shape[1]))


def _attention(x: Tensor, p: dict, base: str, heads: int) -> Tensor:
    n, l, c = x.shape
    dh = c // heads
    qkv = _linear(x, p[base + "attn.wqkv"], p[base + "attn.bqkv"])   # [N, L, 3C]
    q = tz.narrow(qkv, 2, 0, c)
    k = tz.narrow(qkv, 2, c, c)
    v = tz.narrow(qkv, 2, 2 * c, c)

    def split_heads(t):
        return tz.transpose(tz.reshape(t, (n, l, heads, dh)), (0, 2, 1, 3))  # [N,H,L,dh]

    q, k, v = split_heads(q), split_heads(k), split_heads(v)
    scores = tz.matmul(q, tz.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    att = tz.softmax(scores, axis=-1)                                # [N,H,L,L]
    ctx = tz.matmul(att, v)                                          # [N,H,L,dh]
    merged = tz.reshape(tz.transpose(ctx, (0, 2, 1, 3)), (n, l, c))
    return _linear(merged, p[base + "attn.wout"], p[base + "attn.bout"])


def encode(windows, cfg: EncoderConfig, params: dict, prefix: str = "encoder.") -> Tensor:
    """Encode a batch of context windows, [N, L, C] -> [N, L, C].

    ``windows`` may be a Tensor or an ndarray already at model width C.
    """
    cfg.validate()
    x = windows if isinstance(windows, Tensor) else Tensor(windows)
    if x.ndim != 3:
        raise ConfigError(f"encode expects [N, L, C] windows, got shape {tuple(x.shape)}")
    if x.shape[2] != cfg.channels:
        raise ConfigError(
            f"window channel count {x.shape[2]} does not match encoder channels {cfg.channels}")

    p = params
    if cfg.positional_embedding:
        x = tz.add(x, p[prefix + "pos"])
    for i in range(cfg.layers):
        base = f"{prefix}layer{i}."
        h = tz.layer_norm(x, p[base + "ln1.gain"], p[base + "ln1.bias"])
        x = tz.add(x, _attention(h, p, base, cfg.heads))
        h = tz.layer_norm(x, p[base + "ln2.gain"], p[base + "ln2.bias"])
        h = _linear(h, p[base + "ffn.w1"], p[base + "ffn.b1"])
        h = tz.relu(h)
        h = _linear(h, p[base + "ffn.w2"], p[base + "ffn.b2"])
        x = tz.add(x, h)
    return tz.layer_norm(x, p[prefix + "final_ln.gain"], p[prefix + "final_ln.bias"])


def attention_flops(seq_len: int, channels: int, window: int) -> int:
    """Operation count of windowed attention over a length-T sequence,
    4*T*C^2 + 2*L^2*T*C with L = 2K+1; linear in T at fixed K."""
    if seq_len <= 0 or channels <= 0 or window <= 0:
        raise ConfigError("attention_flops needs positive T, C, K")
    l = 2 * window + 1
    return 4 * seq_len * channels * channels + 2 * l * l * seq_len * channels


def global_attention_flops(seq_len: int, channels: int) -> int:
    """Reference count for global self-attention, 4*T*C^2 + 2*T^2*C;
    quadratic in T."""
    if seq_len <= 0 or channels <= 0:
        raise ConfigError("global_attention_flops needs positive T, C")
    return 4 * seq_len * channels * channels + 2 * seq_len * seq_len * channels
