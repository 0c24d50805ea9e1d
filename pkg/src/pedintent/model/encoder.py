"""Multi-head self-attention and pre-norm encoder stacks.

The layer form is x + MHA(LN(x)) followed by + FFN(LN(.)), GELU inside the
FFN, dropout on each sublayer output in training mode only. Masks are
boolean with True = may attend; masked attention weights are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, ContractError
from ..tensor import (
    Tensor,
    add,
    dropout,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)
from .common import add_affine, add_param


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: Optional[int] = None
    dropout_rate: float = 0.1
    causal: bool = False

    def __post_init__(self):
        if self.n_layers < 0 or self.n_heads < 1 or self.d_model < 1:
            raise ConfigError("encoder needs n_layers >= 0, n_heads >= 1, d_model >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)


def causal_mask(s: int) -> np.ndarray:
    """mask[i, j] = (j <= i): each position attends to itself and the past."""
    if s < 1:
        raise ContractError("causal mask needs at least one position")
    return np.tril(np.ones((s, s), dtype=bool))


def init_encoder_params(params: dict, prefix: str, cfg: EncoderConfig, rng: np.random.Generator):
    d, dff = cfg.d_model, cfg.d_ff
    for i in range(cfg.n_layers):
        lp = f"{prefix}L{i}"
        add_param(params, f"{lp}.ln1.gamma", np.ones(d, dtype=np.float32))
        add_param(params, f"{lp}.ln1.beta", np.zeros(d, dtype=np.float32))
        for proj in ("wq", "wk", "wv", "wo"):
            add_affine(params, f"{lp}.attn.{proj}", rng, d, d)
        add_param(params, f"{lp}.ln2.gamma", np.ones(d, dtype=np.float32))
        add_param(params, f"{lp}.ln2.beta", np.zeros(d, dtype=np.float32))
        add_affine(params, f"{lp}.ffn.w1", rng, d, dff)
        add_affine(params, f"{lp}.ffn.w2", rng, dff, d)


def _affine(x: Tensor, params: dict, name: str) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    lead, (s, d) = x.shape[:-2], x.shape[-2:]
    x = reshape(x, lead + (s, n_heads, d // n_heads))
    base = len(lead)
    perm = tuple(range(base)) + (base + 1, base, base + 2)
    return transpose(x, perm)


def _merge_heads(x: Tensor) -> Tensor:
    lead, (h, s, dh) = x.shape[:-3], x.shape[-3:]
    base = len(lead)
    perm = tuple(range(base)) + (base + 1, base, base + 2)
    x = transpose(x, perm)
    return reshape(x, lead + (s, h * dh))


def multi_head_attention(
    x: Tensor,
    params: dict,
    prefix: str,
    n_heads: int,
    mask: Optional[np.ndarray] = None,
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over the trailing (S, d_model) axes.

    Returns the projected output and the detached attention weights with
    shape (..., n_heads, S, S); each row over allowed positions sums to 1.
    """
    d = x.shape[-1]
    dh = d // n_heads
    q = _split_heads(_affine(x, params, f"{prefix}attn.wq"), n_heads)
    k = _split_heads(_affine(x, params, f"{prefix}attn.wk"), n_heads)
    v = _split_heads(_affine(x, params, f"{prefix}attn.wv"), n_heads)
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = mul(matmul(q, kt), 1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1, mask=mask)
    ctx = _merge_heads(matmul(attn, v))
    out = _affine(ctx, params, f"{prefix}attn.wo")
    return out, np.array(attn.data, copy=True)


def encoder_layer(
    x: Tensor,
    params: dict,
    prefix: str,
    cfg: EncoderConfig,
    mask: Optional[np.ndarray] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    if training and cfg.dropout_rate > 0 and rng is None:
        raise ContractError("training-mode encoder needs an rng for dropout")
    attn_out, _ = multi_head_attention(
        layer_norm(x, params[f"{prefix}ln1.gamma"], params[f"{prefix}ln1.beta"]),
        params,
        prefix,
        cfg.n_heads,
        mask=mask,
    )
    attn_out = dropout(attn_out, cfg.dropout_rate, rng, training)
    h = add(x, attn_out)
    ff = _affine(layer_norm(h, params[f"{prefix}ln2.gamma"], params[f"{prefix}ln2.beta"]), params, f"{prefix}ffn.w1")
    ff = _affine(gelu(ff), params, f"{prefix}ffn.w2")
    ff = dropout(ff, cfg.dropout_rate, rng, training)
    return add(h, ff)


def encode(
    x: Tensor,
    cfg: EncoderConfig,
    params: dict,
    prefix: str = "",
    mask: Optional[np.ndarray] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Apply n_layers encoder layers; n_layers = 0 is the exact identity.

    Positional encoding is the caller's responsibility. When the config is
    causal and no mask is given, a causal mask over the trailing sequence
    axis is applied.
    """
    if mask is None and cfg.causal:
        mask = causal_mask(x.shape[-2])
    for i in range(cfg.n_layers):
        x = encoder_layer(x, params, f"{prefix}L{i}.", cfg, mask=mask, training=training, rng=rng)
    return x
