"""Transformer building blocks shared by the encoder and the decoder.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted names such as
``"dec.0.self.q.w"``.  Block functions take the dict plus a name prefix, which
keeps checkpoints trivially serializable and makes weight surgery (warm
starts) a matter of copying keys.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, gelu, layer_norm, softmax, take

Params = dict[str, Tensor]

NEG_INF = -1e9
INIT_STD = 0.02


class MaskError(ValueError):
    """Raised when an attention mask leaves a query with nothing to attend to."""


# ---------------------------------------------------------------- init helpers
def normal(rng: np.random.Generator, shape, dtype=np.float64, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_linear(params: Params, name: str, d_in: int, d_out: int, rng, dtype=np.float64) -> None:
    params[f"{name}.w"] = normal(rng, (d_in, d_out), dtype)
    params[f"{name}.b"] = zeros((d_out,), dtype)


def init_norm(params: Params, name: str, d: int, dtype=np.float64) -> None:
    params[f"{name}.g"] = ones((d,), dtype)
    params[f"{name}.b"] = zeros((d,), dtype)


def init_attention(params: Params, name: str, d: int, rng, dtype=np.float64, d_kv: int | None = None) -> None:
    d_kv = d if d_kv is None else d_kv
    init_linear(params, f"{name}.q", d, d, rng, dtype)
    init_linear(params, f"{name}.k", d_kv, d, rng, dtype)
    init_linear(params, f"{name}.v", d_kv, d, rng, dtype)
    init_linear(params, f"{name}.o", d, d, rng, dtype)


def init_ffn(params: Params, name: str, d: int, hidden: int, rng, dtype=np.float64) -> None:
    init_linear(params, f"{name}.fc1", d, hidden, rng, dtype)
    init_linear(params, f"{name}.fc2", hidden, d, rng, dtype)


# ----------------------------------------------------------------------- ops
def linear(x: Tensor, params: Params, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def norm(x: Tensor, params: Params, name: str, eps: float = 1e-5) -> Tensor:
    return layer_norm(x, params[f"{name}.g"], params[f"{name}.b"], eps)


def embed(ids, table: Tensor) -> Tensor:
    """Look up rows of ``table``; out-of-range ids raise ``IndexError``."""
    return take(table, np.asarray(ids, dtype=np.int64))


def causal_mask(length: int) -> np.ndarray:
    """Boolean [L, L] mask: query i may attend to keys j <= i."""
    return np.tril(np.ones((length, length), dtype=bool))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, L, D = x.shape
    return x.reshape(*lead, L, heads, D // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, L, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, L, h * dh)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: Params,
    name: str,
    heads: int,
    mask: np.ndarray | None = None,
    bias: Tensor | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention over ``heads`` heads.

    ``q`` is [..., Lq, D]; ``k`` and ``v`` are [..., Lk, Dkv].  ``mask`` is a
    boolean array broadcastable to [..., Lq, Lk] (True = allowed).  ``bias``,
    if given, is added to the pre-softmax scores and must broadcast to
    [..., heads, Lq, Lk].  Forbidden scores are pushed to ``NEG_INF``, which
    underflows to an exact zero weight.
    """
    D = params[f"{name}.q.w"].shape[1]
    if D % heads:
        raise ShapeError(f"heads={heads} does not divide model dim {D}")
    Lq, Lk = q.shape[-2], k.shape[-2]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (Lq, Lk):
            raise ShapeError(f"mask shape {mask.shape} does not match [{Lq}, {Lk}]")
        if not mask.any(axis=-1).all():
            raise MaskError("attention mask has a fully forbidden row")
    Q = _split_heads(linear(q, params, f"{name}.q"), heads)
    K = _split_heads(linear(k, params, f"{name}.k"), heads)
    V = _split_heads(linear(v, params, f"{name}.v"), heads)
    scores = (Q @ K.swapaxes(-1, -2)) * (1.0 / math.sqrt(D // heads))
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        # mask broadcasts over the head axis
        m = mask[..., None, :, :] if mask.ndim >= 3 else mask
        scores = scores + np.where(m, 0.0, NEG_INF).astype(scores.dtype)
    weights = softmax(scores, axis=-1)
    out = linear(_merge_heads(weights @ V), params, f"{name}.o")
    if return_weights:
        return out, weights
    return out


def feed_forward(x: Tensor, params: Params, name: str) -> Tensor:
    """Position-wise linear -> GELU -> linear."""
    return linear(gelu(linear(x, params, f"{name}.fc1")), params, f"{name}.fc2")


def count_parameters(params: Params) -> int:
    return sum(p.size for p in params.values())
