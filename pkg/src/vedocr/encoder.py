"""Image encoders: a global-attention ViT-style stack and a shifted-window stack.

Images enter as [1, H, W] or batched [B, 1, H, W] tensors with H and W
already padded to multiples of the patch side P.  Both encoders return an
:class:`EncoderOutput` whose ``states`` are [..., L, D_out]:

* global: L = N + 1 with the CLS state at index 0, D_out = D
* windowed: L = N / 4**s after s merges, D_out = D * 2**s, no CLS
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .config import ConfigError, ModelConfig
from .nn import Params
from .tensor import Tensor, concat, roll, where


class ContractError(ValueError):
    """Input violates an operation's precondition."""


@dataclass(frozen=True)
class ImageSpec:
    H: int
    W: int
    P: int
    D: int
    C: int = 1

    def __post_init__(self):
        if self.H % self.P or self.W % self.P:
            raise ContractError(f"P={self.P} must divide H={self.H} and W={self.W}")

    @property
    def N(self) -> int:
        return self.H * self.W // (self.P * self.P)

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "ImageSpec":
        return cls(cfg.H, cfg.W, cfg.P, cfg.D)


@dataclass
class EncoderOutput:
    states: Tensor
    variant: str

    @property
    def length(self) -> int:
        return self.states.shape[-2]


# --------------------------------------------------------------------- patches
def patchify(image: Tensor, P: int) -> Tensor:
    """[..., 1, H, W] -> [..., N, P*P]; patches and their pixels in row-major order."""
    *lead, C, H, W = image.shape
    if H % P or W % P:
        raise ContractError(f"patch size {P} does not divide image {H}x{W}; pad first")
    gh, gw = H // P, W // P
    x = image.reshape(*lead, C, gh, P, gw, P)
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4)
    return x.transpose(axes).reshape(*lead, gh * gw, C * P * P)


def unpatchify(patches: Tensor, H: int, W: int, P: int) -> Tensor:
    """Inverse of :func:`patchify` for single-channel images."""
    *lead, N, _ = patches.shape
    gh, gw = H // P, W // P
    n = len(lead)
    x = patches.reshape(*lead, gh, gw, P, P)
    axes = tuple(range(n)) + (n, n + 2, n + 1, n + 3)
    return x.transpose(axes).reshape(*lead, 1, H, W)


# ------------------------------------------------------------------ global ViT
def init_global_encoder(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    p: Params = {}
    D, N = cfg.D, cfg.num_patches
    nn.init_linear(p, "enc.patch", cfg.P * cfg.P, D, rng, dtype)
    p["enc.cls"] = nn.normal(rng, (1, D), dtype)
    p["enc.pos"] = nn.normal(rng, (N + 1, D), dtype)
    for i in range(cfg.enc_layers):
        _init_block(p, f"enc.{i}", D, cfg.ffn_mult * D, rng, dtype)
    nn.init_norm(p, "enc.norm", D, dtype)
    return p


def _init_block(p: Params, name: str, D: int, hidden: int, rng, dtype) -> None:
    nn.init_norm(p, f"{name}.ln1", D, dtype)
    nn.init_attention(p, f"{name}.attn", D, rng, dtype)
    nn.init_norm(p, f"{name}.ln2", D, dtype)
    nn.init_ffn(p, f"{name}.ffn", D, hidden, rng, dtype)


def attention_block(x: Tensor, params: Params, name: str, heads: int, mask=None, bias=None) -> Tensor:
    """Pre-norm self-attention + feed-forward block over [..., L, D]."""
    h = nn.norm(x, params, f"{name}.ln1")
    x = x + nn.multi_head_attention(h, h, h, params, f"{name}.attn", heads, mask=mask, bias=bias)
    return x + nn.feed_forward(nn.norm(x, params, f"{name}.ln2"), params, f"{name}.ffn")


def _embed_patches(images: Tensor, params: Params, cfg: ModelConfig, mim_mask: np.ndarray | None) -> Tensor:
    # embed ink (1 - intensity) so blank background patches carry no signal
    tokens = nn.linear(1.0 - patchify(images, cfg.P), params, "enc.patch")
    if mim_mask is not None:
        tokens = where(mim_mask[..., None], params["mim.token"], tokens)
    return tokens


def encode_global(images: Tensor, params: Params, cfg: ModelConfig, mim_mask: np.ndarray | None = None) -> EncoderOutput:
    """Patch-embed, prepend CLS, add absolute positions, run ``enc_layers`` blocks."""
    _check_image(images, cfg)
    tokens = _embed_patches(images, params, cfg, mim_mask)
    cls = params["enc.cls"]
    if tokens.ndim == 3:
        B = tokens.shape[0]
        cls = cls.reshape(1, 1, cfg.D) * np.ones((B, 1, 1), dtype=tokens.dtype)
    x = concat([cls, tokens], axis=-2) + params["enc.pos"]
    for i in range(cfg.enc_layers):
        x = attention_block(x, params, f"enc.{i}", cfg.heads)
    return EncoderOutput(nn.norm(x, params, "enc.norm"), "global")


def _check_image(images: Tensor, cfg: ModelConfig) -> None:
    if images.shape[-3:] != (1, cfg.H, cfg.W):
        raise ContractError(f"image shape {images.shape} does not match [1, {cfg.H}, {cfg.W}]")


# ------------------------------------------------------------ shifted windows
def window_partition(tokens: Tensor, win: int) -> Tensor:
    """[..., h, w, D] -> [..., nw, win*win, D], windows in row-major order."""
    *lead, h, w, D = tokens.shape
    if h % win or w % win:
        raise ContractError(f"window {win} does not divide token grid {h}x{w}")
    n = len(lead)
    x = tokens.reshape(*lead, h // win, win, w // win, win, D)
    axes = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return x.transpose(axes).reshape(*lead, (h // win) * (w // win), win * win, D)


def window_reverse(windows: Tensor, win: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    *lead, nw, _, D = windows.shape
    if h % win or w % win or nw != (h // win) * (w // win):
        raise ContractError(f"{nw} windows of side {win} do not tile {h}x{w}")
    n = len(lead)
    x = windows.reshape(*lead, h // win, w // win, win, win, D)
    axes = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return x.transpose(axes).reshape(*lead, h, w, D)


def shift_region_mask(h: int, w: int, win: int, shift: int) -> np.ndarray:
    """Boolean [nw, win*win, win*win] mask for attention after a cyclic shift.

    Tokens are labelled by the band they occupied before the shift; pairs from
    different bands are forbidden so the wrap-around does not mix image edges.
    """
    labels = np.zeros((h, w), dtype=np.int64)
    if shift > 0:
        bands_h = (slice(0, -win), slice(-win, -shift), slice(-shift, None))
        bands_w = (slice(0, -win), slice(-win, -shift), slice(-shift, None))
        cnt = 0
        for sh in bands_h:
            for sw in bands_w:
                labels[sh, sw] = cnt
                cnt += 1
    lab = labels.reshape(h // win, win, w // win, win).transpose(0, 2, 1, 3).reshape(-1, win * win)
    return lab[:, :, None] == lab[:, None, :]


def relative_position_index(win: int) -> np.ndarray:
    """[win*win, win*win] index into a (2*win-1)**2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(win), np.arange(win), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (win - 1)
    return rel[0] * (2 * win - 1) + rel[1]


def _init_swin_block(p: Params, name: str, D: int, hidden: int, heads: int, win: int, rng, dtype) -> None:
    _init_block(p, name, D, hidden, rng, dtype)
    # zero-initialised so an unshifted full-size window starts out as plain attention
    p[f"{name}.relbias"] = nn.zeros(((2 * win - 1) ** 2, heads), dtype)


def shifted_window_block(
    tokens: Tensor, params: Params, name: str, win: int, shift: int, heads: int
) -> Tensor:
    """Windowed self-attention block over a [..., h, w, D] token grid.

    The grid is rolled by (-shift, -shift), split into win x win windows,
    attended within each window (with the band mask when shifted), merged
    and rolled back, then passed through the feed-forward sublayer.
    """
    if not 0 <= shift < win:
        raise ContractError(f"need 0 <= shift < win, got shift={shift}, win={win}")
    *_, h, w, D = tokens.shape
    y = nn.norm(tokens, params, f"{name}.ln1")
    if shift:
        y = roll(y, (-shift, -shift), (-3, -2))
    windows = window_partition(y, win)
    mask = shift_region_mask(h, w, win, shift) if shift else None
    bias = None
    key = f"{name}.relbias"
    if key in params:
        table = params[key]
        idx = relative_position_index(win)
        bias = nn.embed(idx.reshape(-1), table).reshape(win * win, win * win, -1).transpose(2, 0, 1)
    attn = nn.multi_head_attention(windows, windows, windows, params, f"{name}.attn", heads, mask=mask, bias=bias)
    y = window_reverse(attn, win, h, w)
    if shift:
        y = roll(y, (shift, shift), (-3, -2))
    x = tokens + y
    return x + nn.feed_forward(nn.norm(x, params, f"{name}.ln2"), params, f"{name}.ffn")


def patch_merging(tokens: Tensor, params: Params, name: str) -> Tensor:
    """Concatenate each 2x2 neighbourhood (4D) and project to 2D: [..., h, w, D] -> [..., h/2, w/2, 2D]."""
    *_, h, w, D = tokens.shape
    if h % 2 or w % 2:
        raise ContractError(f"patch merging needs even grid, got {h}x{w}")
    parts = [
        tokens[..., 0::2, 0::2, :],
        tokens[..., 1::2, 0::2, :],
        tokens[..., 0::2, 1::2, :],
        tokens[..., 1::2, 1::2, :],
    ]
    return nn.linear(concat(parts, axis=-1), params, name)


def _stage_plan(cfg: ModelConfig) -> list[tuple[int, int, int, int]]:
    """(grid_h, grid_w, dim, window) per stage."""
    gh, gw = cfg.grid
    D = cfg.D
    plan = []
    for s in range(cfg.merge_stages + 1):
        win = min(cfg.window, gh, gw)
        if gh % win or gw % win:
            raise ConfigError(f"window {win} does not divide stage-{s} grid {gh}x{gw}")
        plan.append((gh, gw, D, win))
        if s < cfg.merge_stages:
            if gh % 2 or gw % 2:
                raise ConfigError(f"stage-{s} grid {gh}x{gw} cannot be merged")
            gh, gw, D = gh // 2, gw // 2, D * 2
    return plan


def windowed_out_dim(cfg: ModelConfig) -> int:
    return cfg.D * 2**cfg.merge_stages


def init_windowed_encoder(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    p: Params = {}
    nn.init_linear(p, "enc.patch", cfg.P * cfg.P, cfg.D, rng, dtype)
    plan = _stage_plan(cfg)
    for s, (gh, gw, D, win) in enumerate(plan):
        heads = cfg.heads * 2**s
        if D % heads:
            raise ConfigError(f"heads {heads} does not divide stage dim {D}")
        for i in range(cfg.enc_layers):
            _init_swin_block(p, f"enc.s{s}.{i}", D, cfg.ffn_mult * D, heads, win, rng, dtype)
        if s < len(plan) - 1:
            nn.init_linear(p, f"enc.s{s}.merge", 4 * D, 2 * D, rng, dtype)
    nn.init_norm(p, "enc.norm", plan[-1][2], dtype)
    return p


def encode_windowed(images: Tensor, params: Params, cfg: ModelConfig, mim_mask: np.ndarray | None = None) -> EncoderOutput:
    """Hierarchical shifted-window encoder; alternating blocks use shift ``cfg.shift``."""
    _check_image(images, cfg)
    tokens = _embed_patches(images, params, cfg, mim_mask)
    gh, gw = cfg.grid
    x = tokens.reshape(*tokens.shape[:-2], gh, gw, cfg.D)
    plan = _stage_plan(cfg)
    for s, (h, w, D, win) in enumerate(plan):
        heads = cfg.heads * 2**s
        for i in range(cfg.enc_layers):
            shift = cfg.shift if (i % 2 == 1 and win < max(h, w)) else 0
            shift = min(shift, win - 1)
            x = shifted_window_block(x, params, f"enc.s{s}.{i}", win, shift, heads)
        if s < len(plan) - 1:
            x = patch_merging(x, params, f"enc.s{s}.merge")
    h, w, D = plan[-1][0], plan[-1][1], plan[-1][2]
    x = x.reshape(*x.shape[:-3], h * w, D)
    return EncoderOutput(nn.norm(x, params, "enc.norm"), "windowed")


# ---------------------------------------------------------------- dispatching
def init_encoder(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    if cfg.variant == "global":
        return init_global_encoder(cfg, rng, dtype)
    if cfg.variant == "windowed":
        return init_windowed_encoder(cfg, rng, dtype)
    raise ConfigError(f"variant {cfg.variant!r} has no transformer encoder")


def encode(images: Tensor, params: Params, cfg: ModelConfig, mim_mask: np.ndarray | None = None) -> EncoderOutput:
    if cfg.variant == "global":
        return encode_global(images, params, cfg, mim_mask)
    if cfg.variant == "windowed":
        return encode_windowed(images, params, cfg, mim_mask)
    raise ConfigError(f"variant {cfg.variant!r} has no transformer encoder")


def encoder_out_dim(cfg: ModelConfig) -> int:
    return cfg.D if cfg.variant == "global" else windowed_out_dim(cfg)


# ------------------------------------------------------------------------ MIM
def init_mim_head(params: Params, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> None:
    """Add the learned mask token and the pixel-prediction head."""
    params["mim.token"] = nn.normal(rng, (cfg.D,), dtype)
    span = cfg.P * (2**cfg.merge_stages if cfg.variant == "windowed" else 1)
    nn.init_linear(params, "mim.head", encoder_out_dim(cfg), span * span, rng, dtype)


def sample_patch_mask(batch: int, n: int, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean [batch, n]; exactly ceil(mask_ratio * n) patches per row, chosen uniformly."""
    k = math.ceil(mask_ratio * n)
    mask = np.zeros((batch, n), dtype=bool)
    for b in range(batch):
        mask[b, rng.choice(n, size=k, replace=False)] = True
    return mask


def mim_loss(images: Tensor, params: Params, cfg: ModelConfig, mask: np.ndarray) -> Tensor:
    """Mean absolute pixel error over the patches flagged in ``mask`` ([B, N])."""
    out = encode(images, params, cfg, mim_mask=mask)
    states = out.states
    if out.variant == "global":
        states = states[:, 1:, :]
        span = cfg.P
    else:
        span = cfg.P * 2**cfg.merge_stages
    pred = unpatchify(nn.linear(states, params, "mim.head"), cfg.H, cfg.W, span)
    gh, gw = cfg.grid
    pix = np.repeat(np.repeat(mask.reshape(-1, 1, gh, gw), cfg.P, axis=2), cfg.P, axis=3)
    weight = pix.astype(images.dtype)
    err = (pred - images).abs() * weight
    return err.sum() * (1.0 / weight.sum())


def mim_pretrain_step(images: Tensor, params: Params, cfg: ModelConfig, mask_ratio: float = 0.5, seed: int = 0):
    """Seeded masked-image-modeling loss for a batch [B, 1, H, W]; returns (loss, mask)."""
    if not 0 < mask_ratio < 1:
        raise ContractError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    if images.ndim == 3:
        images = images.reshape(1, *images.shape)
    rng = np.random.default_rng(seed)
    mask = sample_patch_mask(images.shape[0], cfg.num_patches, mask_ratio, rng)
    return mim_loss(images, params, cfg, mask), mask
