"""Scaled dot-product attention, multi-head self-attention, and the
position-wise feed-forward block.

All ops are shape-polymorphic over an optional batch axis: sequences may be
``[len, d]`` or ``[batch, len, d]``.  Padding is handled with a large
negative additive bias on masked key positions, which drives their softmax
weight to exactly zero in float64 while keeping every softmax input finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .layers import LinearParams, linear
from .tensor import Tensor

MASK_BIAS = -1e30


@dataclass
class AttentionHeadParams:
    """Projections for one head; d_k = d_model / num_heads."""

    wq: Tensor
    wk: Tensor
    wv: Tensor

    @staticmethod
    def create(d_model: int, d_k: int, rng: np.random.Generator) -> "AttentionHeadParams":
        from .layers import glorot_normal

        return AttentionHeadParams(
            wq=glorot_normal(d_model, d_k, rng),
            wk=glorot_normal(d_model, d_k, rng),
            wv=glorot_normal(d_model, d_k, rng),
        )


@dataclass
class MultiHeadParams:
    heads: list[AttentionHeadParams]
    wo: LinearParams

    @staticmethod
    def create(d_model: int, num_heads: int, rng: np.random.Generator) -> "MultiHeadParams":
        if d_model % num_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by num_heads {num_heads}")
        d_k = d_model // num_heads
        return MultiHeadParams(
            heads=[AttentionHeadParams.create(d_model, d_k, rng) for _ in range(num_heads)],
            wo=LinearParams.create(num_heads * d_k, d_model, rng),
        )


@dataclass
class FfnParams:
    """Two affine maps with a ReLU between, applied per position."""

    lin1: LinearParams
    lin2: LinearParams

    @staticmethod
    def create(d_model: int, d_ff: int, rng: np.random.Generator) -> "FfnParams":
        return FfnParams(
            lin1=LinearParams.create(d_model, d_ff, rng),
            lin2=LinearParams.create(d_ff, d_model, rng),
        )


def _key_bias(pad_mask: np.ndarray, scores_ndim: int) -> np.ndarray:
    """Additive bias over key positions: 0 where real, MASK_BIAS where padded.
    Expanded to ``scores_ndim`` so leading batch axes stay aligned."""
    mask = np.asarray(pad_mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("attention requires at least one unmasked key per sequence")
    bias = np.where(mask, 0.0, MASK_BIAS)
    while bias.ndim < scores_ndim:
        bias = np.expand_dims(bias, -2)
    return bias


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, pad_mask=None) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k) + key bias) v.

    ``pad_mask`` is a boolean array marking real key positions; its shape is
    the key extent with any leading batch axes of q/k/v.  Masked keys get
    attention weight exactly 0; rows over unmasked keys sum to 1.
    """
    d_k = q.shape[-1]
    scores = T.mul(T.matmul(q, T.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d_k))
    if pad_mask is not None:
        scores = T.add(scores, Tensor(_key_bias(pad_mask, scores.ndim)))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(x: Tensor, p: MultiHeadParams, pad_mask=None) -> Tensor:
    """Per-head projections, scaled attention, concatenation, output map.

    The per-head weight matrices are concatenated so all heads run as one
    stacked attention call.
    """
    num_heads = len(p.heads)
    d_k = p.heads[0].wq.shape[1]
    q = T.matmul(x, T.concat([h.wq for h in p.heads], axis=1))
    k = T.matmul(x, T.concat([h.wk for h in p.heads], axis=1))
    v = T.matmul(x, T.concat([h.wv for h in p.heads], axis=1))
    lead = x.shape[:-1]
    split = lead + (num_heads, d_k)
    perm = (1, 0, 2) if len(lead) == 1 else (0, 2, 1, 3)  # self-inverse
    out = scaled_dot_product_attention(
        T.transpose(T.reshape(q, split), perm),
        T.transpose(T.reshape(k, split), perm),
        T.transpose(T.reshape(v, split), perm),
        pad_mask,
    )
    return linear(T.reshape(T.transpose(out, perm), lead + (num_heads * d_k,)), p.wo)


def position_wise_ffn(x: Tensor, p: FfnParams) -> Tensor:
    """ReLU(x W1 + b1) W2 + b2, independently at every position."""
    return linear(T.relu(linear(x, p.lin1)), p.lin2)
