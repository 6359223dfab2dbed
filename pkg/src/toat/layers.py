"""Parameter initialisers and the transformer block shared by both branches."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor

Params = dict[str, Tensor]


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def normal(rng: np.random.Generator, std: float, shape, name: str) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)


def constant(value: float, shape, name: str) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True, name=name)


def init_linear(params: Params, prefix: str, rng, d_in: int, d_out: int, bias: bool = True) -> None:
    params[f"{prefix}.weight"] = uniform_fan_in(rng, d_in, (d_in, d_out), f"{prefix}.weight")
    if bias:
        params[f"{prefix}.bias"] = uniform_fan_in(rng, d_in, (d_out,), f"{prefix}.bias")


def init_layer_norm(params: Params, prefix: str, dim: int) -> None:
    params[f"{prefix}.gain"] = constant(1.0, (dim,), f"{prefix}.gain")
    params[f"{prefix}.bias"] = constant(0.0, (dim,), f"{prefix}.bias")


def apply_linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    return ag.linear(x, params[f"{prefix}.weight"], params.get(f"{prefix}.bias"))


def apply_layer_norm(params: Params, prefix: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    return ag.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"], eps)


def init_transformer_layer(params: Params, prefix: str, rng, d_model: int, d_ff: int) -> None:
    init_linear(params, f"{prefix}.attn.qkv", rng, d_model, 3 * d_model)
    init_linear(params, f"{prefix}.attn.o", rng, d_model, d_model)
    init_layer_norm(params, f"{prefix}.ln1", d_model)
    init_linear(params, f"{prefix}.ff1", rng, d_model, d_ff)
    init_linear(params, f"{prefix}.ff2", rng, d_ff, d_model)
    init_layer_norm(params, f"{prefix}.ln2", d_model)


def self_attention(params: Params, prefix: str, x: Tensor, n_heads: int, key_mask: np.ndarray | None) -> Tensor:
    """Multi-head self-attention over x of shape (batch, length, d_model).

    ``key_mask`` (batch, length) marks real tokens; padded keys get zero weight.
    """
    batch, length, d_model = x.shape
    d_head = d_model // n_heads

    qkv = ag.reshape(apply_linear(params, f"{prefix}.qkv", x), (batch, length, 3, n_heads, d_head))
    qkv = ag.transpose(qkv, (2, 0, 3, 1, 4))  # (3, batch, heads, length, d_head)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = ag.mul(ag.matmul(q, ag.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d_head))
    additive = None
    if key_mask is not None:
        additive = np.where(key_mask, 0.0, ag.MASK_FILL)[:, None, None, :]
    weights = ag.softmax(scores, axis=-1, additive_mask=additive)
    context = ag.reshape(ag.swapaxes(ag.matmul(weights, v), 1, 2), (batch, length, d_model))
    return apply_linear(params, f"{prefix}.o", context)


def transformer_layer(
    params: Params, prefix: str, x: Tensor, n_heads: int, key_mask: np.ndarray | None = None
) -> Tensor:
    """Post-norm encoder block: attention and feed-forward, each with residual + layer norm."""
    x = apply_layer_norm(params, f"{prefix}.ln1", ag.add(x, self_attention(params, f"{prefix}.attn", x, n_heads, key_mask)))
    hidden = ag.gelu(apply_linear(params, f"{prefix}.ff1", x))
    return apply_layer_norm(params, f"{prefix}.ln2", ag.add(x, apply_linear(params, f"{prefix}.ff2", hidden)))
