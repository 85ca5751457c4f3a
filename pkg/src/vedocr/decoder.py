"""Autoregressive text decoder with cross-attention to encoder states."""

from __future__ import annotations

import numpy as np

from . import nn
from .config import ModelConfig
from .encoder import ContractError, EncoderOutput
from .nn import Params
from .tensor import Tensor, cross_entropy, no_grad
from .tokenizer import BOS, EOS, MASK, NUM_SPECIAL, PAD


def init_decoder(cfg: ModelConfig, vocab_size: int, enc_dim: int, rng: np.random.Generator, dtype=np.float64) -> Params:
    p: Params = {}
    D = cfg.D
    p["dec.tok"] = nn.normal(rng, (vocab_size, D), dtype)
    p["dec.pos"] = nn.normal(rng, (cfg.lmax, D), dtype)
    for i in range(cfg.dec_layers):
        nn.init_norm(p, f"dec.{i}.ln1", D, dtype)
        nn.init_attention(p, f"dec.{i}.self", D, rng, dtype)
        nn.init_norm(p, f"dec.{i}.ln2", D, dtype)
        nn.init_attention(p, f"dec.{i}.cross", D, rng, dtype, d_kv=enc_dim)
        nn.init_norm(p, f"dec.{i}.ln3", D, dtype)
        nn.init_ffn(p, f"dec.{i}.ffn", D, cfg.ffn_mult * D, rng, dtype)
    nn.init_norm(p, "dec.norm", D, dtype)
    nn.init_linear(p, "dec.out", D, vocab_size, rng, dtype)
    return p


def decoder_forward(
    ids,
    enc: EncoderOutput | None,
    params: Params,
    cfg: ModelConfig,
    causal: bool = True,
) -> Tensor:
    """Logits [..., L, V] for token ids [..., L].

    With ``enc=None`` the cross-attention sublayers are skipped (used by
    masked-language-model pretraining together with ``causal=False``).
    """
    ids = np.asarray(ids, dtype=np.int64)
    L = ids.shape[-1]
    if L > cfg.lmax:
        raise ContractError(f"sequence length {L} exceeds lmax={cfg.lmax}")
    if L < 1:
        raise ContractError("empty token sequence")
    if enc is not None and enc.length == 0:
        raise ContractError("encoder states are empty")
    x = nn.embed(ids, params["dec.tok"]) + params["dec.pos"][:L]
    mask = nn.causal_mask(L) if causal else None
    for i in range(cfg.dec_layers):
        h = nn.norm(x, params, f"dec.{i}.ln1")
        x = x + nn.multi_head_attention(h, h, h, params, f"dec.{i}.self", cfg.heads, mask=mask)
        if enc is not None:
            h = nn.norm(x, params, f"dec.{i}.ln2")
            x = x + nn.multi_head_attention(h, enc.states, enc.states, params, f"dec.{i}.cross", cfg.heads)
        x = x + nn.feed_forward(nn.norm(x, params, f"dec.{i}.ln3"), params, f"dec.{i}.ffn")
    return nn.linear(nn.norm(x, params, "dec.norm"), params, "dec.out")


def teacher_forced_loss(ids, enc: EncoderOutput, params: Params, cfg: ModelConfig, denom: float | None = None) -> Tensor:
    """Next-token cross entropy: position t is fed ids[<=t] and predicts ids[t+1]; PAD targets are ignored."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[-1] < 2:
        raise ContractError("teacher forcing needs at least two tokens")
    logits = decoder_forward(ids[..., :-1], enc, params, cfg)
    return cross_entropy(logits, ids[..., 1:], ignore_id=PAD, denom=denom)


def count_targets(ids) -> int:
    """Number of non-PAD next-token targets in a batch of id sequences."""
    ids = np.asarray(ids)
    return int((ids[..., 1:] != PAD).sum())


def greedy_generate(enc: EncoderOutput, params: Params, cfg: ModelConfig, max_len: int) -> list[list[int]] | list[int]:
    """Argmax decoding from BOS until EOS or ``max_len`` new tokens.

    ``enc.states`` may be [Le, De] (returns one id list) or [B, Le, De]
    (returns one list per batch item).  BOS and EOS are not included.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    if enc.length == 0:
        raise ContractError("encoder states are empty")
    single = enc.states.ndim == 2
    B = 1 if single else enc.states.shape[0]
    max_len = min(max_len, cfg.lmax)
    seqs = np.full((B, 1), BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    with no_grad():
        for _ in range(max_len):
            prefix = seqs[0] if single else seqs
            logits = decoder_forward(prefix, enc, params, cfg).data
            nxt = logits[..., -1, :].reshape(B, -1).argmax(axis=-1)
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            seqs = np.concatenate([seqs, np.where(done, PAD, nxt)[:, None]], axis=1)
    return out[0] if single else out


def mlm_select(ids, mask_prob: float, seed: int) -> np.ndarray:
    """Seeded Bernoulli selection over non-special positions."""
    ids = np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    draw = rng.random(ids.shape) < mask_prob
    return draw & (ids >= NUM_SPECIAL)


def mlm_pretrain_step(ids, params: Params, cfg: ModelConfig, mask_prob: float = 0.15, seed: int = 0):
    """Masked-token loss with bidirectional self-attention and no encoder; returns (loss, selected)."""
    if not 0 < mask_prob < 1:
        raise ContractError(f"mask_prob must lie in (0, 1), got {mask_prob}")
    ids = np.asarray(ids, dtype=np.int64)
    sel = mlm_select(ids, mask_prob, seed)
    corrupted = np.where(sel, MASK, ids)
    targets = np.where(sel, ids, PAD)
    logits = decoder_forward(corrupted, None, params, cfg, causal=False)
    return cross_entropy(logits, targets, ignore_id=PAD), sel


def warm_start(params: Params, pretrained: dict[str, np.ndarray], rng: np.random.Generator, fresh: str = ".cross.") -> list[str]:
    """Copy pretrained weights into ``params`` except names containing ``fresh``.

    Names matching ``fresh`` (cross-attention by default) are redrawn from the
    initializer, since a text-only checkpoint has no meaningful values for
    them.  Returns the names that were loaded.
    """
    loaded = []
    for name, t in params.items():
        if fresh in name:
            if name.endswith(".w"):
                t.data[...] = rng.normal(0.0, nn.INIT_STD, size=t.shape).astype(t.dtype)
            else:
                t.data[...] = 0
            continue
        if name in pretrained:
            src = np.asarray(pretrained[name])
            if src.shape != t.shape:
                raise ContractError(f"{name}: pretrained shape {src.shape} != {t.shape}")
            t.data[...] = src
            loaded.append(name)
    return loaded
