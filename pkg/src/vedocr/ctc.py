"""Convolutional CTC recognizer: frame features, CTC loss, brute-force oracle, best-path decoding.

Frame logits are [T, V+1] with the blank at the last index V.  Label ids
handed to the loss are tokenizer ids *minus* the five reserved specials, so
label ``k`` corresponds to vocabulary symbol ``k``.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from . import nn
from .config import ModelConfig
from .encoder import ContractError
from .nn import Params
from .tensor import Tensor, _make, concat, conv2d, gelu


class InfeasibleTargetError(ValueError):
    """The target cannot be aligned to the available number of frames."""


# ------------------------------------------------------------- feature stack
# The 2-D convs are valid (no padding).  Each hidden 3x3 conv halves the
# height, (h - 3) // 2 + 1.  The first also halves the width, (w - 3) // 2 + 1;
# later ones shrink it by 2.  A conv spanning
# the remaining height collapses it to 1, giving one D-vector per frame.
# Residual temporal conv blocks (zero-padded, widths ``ctc_context``) then
# widen each frame's view along the line without changing the frame count:
#     T = (W - 3) // 2 + 1 - 2 * (len(ctc_channels) - 1)
# for an image of width W.


def ctc_frames(cfg: ModelConfig, width: int | None = None) -> int:
    W = cfg.W if width is None else width
    if W < 3:
        return 0
    return (W - 3) // 2 + 1 - 2 * (len(cfg.ctc_channels) - 1)


def _conv_heights(cfg: ModelConfig, H: int | None = None) -> list[int]:
    h = cfg.H if H is None else H
    hs = []
    for _ in cfg.ctc_channels:
        if h < 3:
            raise ContractError(f"image height {cfg.H} too small for {len(cfg.ctc_channels)} conv layers")
        h = (h - 3) // 2 + 1
        hs.append(h)
    return hs


def _he(rng, shape, fan_in, dtype):
    return nn.normal(rng, shape, dtype, std=float(np.sqrt(2.0 / fan_in)))


def init_ctc(cfg: ModelConfig, num_labels: int, rng: np.random.Generator, dtype=np.float64) -> Params:
    """Conv stack producing ``num_labels + 1`` logits per frame (blank last)."""
    p: Params = {}
    c_in = 1
    for i, c in enumerate(cfg.ctc_channels):
        p[f"ctc.conv{i}.k"] = _he(rng, (c, c_in, 3, 3), c_in * 9, dtype)
        p[f"ctc.conv{i}.b"] = nn.zeros((c, 1, 1), dtype)
        c_in = c
    h = _conv_heights(cfg)[-1] if cfg.ctc_channels else cfg.H
    p["ctc.collapse.k"] = _he(rng, (cfg.D, c_in, h, 1), c_in * h, dtype)
    p["ctc.collapse.b"] = nn.zeros((cfg.D, 1, 1), dtype)
    for i, k in enumerate(cfg.ctc_context):
        nn.init_norm(p, f"ctc.ctx{i}.ln", cfg.D, dtype)
        nn.init_linear(p, f"ctc.ctx{i}", k * cfg.D, cfg.D, rng, dtype)
    nn.init_norm(p, "ctc.norm", cfg.D, dtype)
    nn.init_linear(p, "ctc.out", cfg.D, num_labels + 1, rng, dtype)
    return p


def _temporal_conv(x: Tensor, params: Params, name: str, k: int) -> Tensor:
    """Zero-padded 1-D conv over the frame axis of [..., T, D] as one linear map of k stacked frames."""
    left = (k - 1) // 2
    right = k - 1 - left
    T = x.shape[-2]
    pads = []
    if left:
        pads.append(Tensor(np.zeros((*x.shape[:-2], left, x.shape[-1]), dtype=x.dtype)))
    pads.append(x)
    if right:
        pads.append(Tensor(np.zeros((*x.shape[:-2], right, x.shape[-1]), dtype=x.dtype)))
    padded = concat(pads, axis=-2) if len(pads) > 1 else x
    taps = [padded[..., j : j + T, :] for j in range(k)]
    return nn.linear(concat(taps, axis=-1), params, name)


def frame_features(images: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    """[1, H, W] -> [T, V+1] or [B, 1, H, W] -> [B, T, V+1]; see :func:`ctc_frames` for T."""
    W = images.shape[-1]
    if ctc_frames(cfg, W) < 1:
        raise ContractError(f"image width {W} narrower than the receptive field")
    _conv_heights(cfg, images.shape[-2])
    x = 1.0 - images  # ink, so padded background contributes nothing
    for i in range(len(cfg.ctc_channels)):
        x = gelu(conv2d(x, params[f"ctc.conv{i}.k"], stride=(2, 2 if i == 0 else 1)) + params[f"ctc.conv{i}.b"])
    x = conv2d(x, params["ctc.collapse.k"]) + params["ctc.collapse.b"]
    # [.., D, 1, T] -> [.., T, D]
    x = x[..., 0, :].swapaxes(-1, -2)
    for i, k in enumerate(cfg.ctc_context):
        x = x + gelu(_temporal_conv(nn.norm(x, params, f"ctc.ctx{i}.ln"), params, f"ctc.ctx{i}", k))
    return nn.linear(nn.norm(x, params, "ctc.norm"), params, "ctc.out")


# ------------------------------------------------------------------- loss
def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _logsumexp(*xs: np.ndarray) -> np.ndarray:
    stacked = np.stack(xs)
    m = stacked.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def min_frames(target) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extend(target, blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    """s may be entered from s-2 when ext[s] is a label different from ext[s-2]."""
    allow = np.zeros(len(ext), dtype=bool)
    allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def _shift(v: np.ndarray, k: int) -> np.ndarray:
    """v moved k places right (k < 0: left), filled with -inf."""
    out = np.full_like(v, -np.inf)
    if k > 0:
        out[k:] = v[:-k]
    else:
        out[:k] = v[-k:]
    return out


def ctc_alpha_beta(logp: np.ndarray, target) -> tuple[np.ndarray, np.ndarray, float]:
    """Log-space forward and backward variables over the blank-interleaved target.

    Returns (log_alpha [T, S], log_beta [T, S], log p(target | x)).
    """
    T, C = logp.shape
    blank = C - 1
    ext = _extend(target, blank)
    S = len(ext)
    skip = _skip_allowed(ext, blank)
    la = np.full((T, S), -np.inf)
    lb = np.full((T, S), -np.inf)
    emit = logp[:, ext]  # [T, S]
    la[0, 0] = emit[0, 0]
    if S > 1:
        la[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = la[t - 1]
        s1 = _shift(prev, 1)
        s2 = np.where(skip, _shift(prev, 2), -np.inf)
        la[t] = _logsumexp(prev, s1, s2) + emit[t]
    lb[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        lb[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_next = np.zeros(S, dtype=bool)
    skip_next[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = lb[t + 1]
        n1 = _shift(nxt, -1)
        n2 = np.where(skip_next, _shift(nxt, -2), -np.inf)
        lb[t] = _logsumexp(nxt, n1, n2) + emit[t]
    ends = [la[T - 1, S - 1]] + ([la[T - 1, S - 2]] if S > 1 else [])
    log_prob = float(_logsumexp(*[np.asarray(e) for e in ends]))
    return la, lb, log_prob


def _ctc_single(logits: np.ndarray, target) -> tuple[float, np.ndarray]:
    """(negative log-likelihood, d nll / d logits) for one [T, C] logit matrix."""
    T, C = logits.shape
    target = [int(t) for t in target]
    if any(t < 0 or t >= C - 1 for t in target):
        raise ContractError(f"target labels must lie in [0, {C - 1}); blank is {C - 1}")
    need = min_frames(target)
    if T < need:
        raise InfeasibleTargetError(f"target of length {len(target)} needs at least {need} frames, got {T}")
    logp = _log_softmax(logits.astype(np.float64))
    la, lb, log_prob = ctc_alpha_beta(logp, target)
    ext = _extend(target, C - 1)
    # occupancy: gamma[t, s] = alpha * beta / (p * y_t(ext[s]))
    log_occ = la + lb - logp[:, ext] - log_prob
    occ = np.zeros((T, C))
    with np.errstate(under="ignore"):
        np.add.at(occ, (np.arange(T)[:, None], ext[None, :]), np.exp(log_occ))
    grad = np.exp(logp) - occ
    return -log_prob, grad


def ctc_loss(logits: Tensor, target, denom: float | None = None) -> Tensor:
    """Negative log probability of ``target`` summed over all CTC alignments.

    ``logits`` is [T, V+1] with a single label list, or [B, T, V+1] with a
    list of label lists; the batched loss is the sum of per-sample losses
    divided by ``denom`` (default B).
    """
    data = logits.data
    if data.ndim == 2:
        nll, grad = _ctc_single(data, target)
        scale = 1.0 if denom is None else 1.0 / denom
        out = np.asarray(nll * scale, dtype=logits.dtype)
        return _make(out, (logits,), lambda g: ((g * scale * grad).astype(logits.dtype),), "ctc_loss")
    B = data.shape[0]
    if len(target) != B:
        raise ContractError(f"{len(target)} targets for a batch of {B}")
    results = [_ctc_single(data[b], target[b]) for b in range(B)]
    scale = 1.0 / (B if denom is None else denom)
    total = sum(r[0] for r in results) * scale
    grads = np.stack([r[1] for r in results])
    return _make(np.asarray(total, dtype=logits.dtype), (logits,), lambda g: ((g * scale * grads).astype(logits.dtype),), "ctc_loss")


# ---------------------------------------------------------------- oracle
MAX_PATHS = 10**6


def collapse_path(path, blank: int) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(int(s))
        prev = s
    return tuple(out)


@lru_cache(maxsize=64)
def _path_table(T: int, C: int):
    paths = np.array(list(itertools.product(range(C), repeat=T)), dtype=np.int64).reshape(-1, T)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, p in enumerate(paths):
        groups.setdefault(collapse_path(p, C - 1), []).append(i)
    return paths, {k: np.asarray(v) for k, v in groups.items()}


def path_probabilities(logits) -> tuple[np.ndarray, dict]:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    T, C = data.shape
    if C**T > MAX_PATHS:
        raise ContractError(f"{C}**{T} paths exceed the brute-force limit {MAX_PATHS}")
    probs = np.exp(_log_softmax(data.astype(np.float64)))
    paths, groups = _path_table(T, C)
    path_p = np.prod(probs[np.arange(T)[None, :], paths], axis=1)
    return path_p, groups


def ctc_brute_force(logits, target) -> float:
    """Sum of the probabilities of every frame path that collapses to ``target``."""
    path_p, groups = path_probabilities(logits)
    idx = groups.get(tuple(int(t) for t in target))
    return 0.0 if idx is None else float(path_p[idx].sum())


# --------------------------------------------------------------- decoding
def ctc_greedy_decode(logits) -> list[int] | list[list[int]]:
    """Best path: per-frame argmax, merge repeats, remove blanks."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    blank = data.shape[-1] - 1
    if data.ndim == 3:
        return [list(collapse_path(row, blank)) for row in data.argmax(axis=-1)]
    return list(collapse_path(data.argmax(axis=-1), blank))
