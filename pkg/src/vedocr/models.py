"""Recognizers assembled from the encoder, decoder and CTC pieces.

A :class:`Recognizer` owns a config, a tokenizer and a flat parameter dict,
and exposes the three things the trainer and the CLI need: a loss with an
externally supplied normalizer, the size of that normalizer for a batch, and
text prediction.
"""

from __future__ import annotations

import numpy as np

from . import ctc
from .config import ModelConfig
from .decoder import count_targets, greedy_generate, init_decoder, teacher_forced_loss
from .encoder import encode, encoder_out_dim, init_encoder
from .nn import Params
from .tensor import Tensor, no_grad
from .tokenizer import NUM_SPECIAL, Tokenizer


class Recognizer:
    def __init__(self, cfg: ModelConfig, tokenizer: Tokenizer, params: Params):
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.params = params

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    # The normalizer makes the loss a mean over the whole accumulation window:
    # target tokens for the VED, samples for CTC.
    def loss_denominator(self, texts) -> float:
        raise NotImplementedError

    def loss(self, images: np.ndarray, texts, denom: float | None = None) -> Tensor:
        raise NotImplementedError

    def predict(self, images: np.ndarray, batch: int = 8) -> list[str]:
        out: list[str] = []
        with no_grad():
            for i in range(0, len(images), batch):
                out.extend(self._predict_batch(np.asarray(images[i : i + batch], dtype=self.dtype)))
        return out

    def _predict_batch(self, images: np.ndarray) -> list[str]:
        raise NotImplementedError


class VEDRecognizer(Recognizer):
    """Transformer encoder (global or windowed) + autoregressive decoder."""

    def token_batch(self, texts) -> np.ndarray:
        return self.tokenizer.batch(texts)

    def loss_denominator(self, texts) -> float:
        return float(count_targets(self.token_batch(texts)))

    def loss(self, images, texts, denom=None):
        enc = encode(Tensor(np.asarray(images, dtype=self.dtype)), self.params, self.cfg)
        return teacher_forced_loss(self.token_batch(texts), enc, self.params, self.cfg, denom=denom)

    def _predict_batch(self, images):
        enc = encode(Tensor(images), self.params, self.cfg)
        ids = greedy_generate(enc, self.params, self.cfg, self.cfg.lmax)
        return [self.tokenizer.decode(s) for s in ids]


class CTCRecognizer(Recognizer):
    """Convolutional frame classifier trained with CTC."""

    def labels(self, text: str) -> list[int]:
        return [i - NUM_SPECIAL for i in self.tokenizer.encode(text)]

    def loss_denominator(self, texts) -> float:
        return float(len(texts))

    def loss(self, images, texts, denom=None):
        logits = ctc.frame_features(Tensor(np.asarray(images, dtype=self.dtype)), self.params, self.cfg)
        return ctc.ctc_loss(logits, [self.labels(t) for t in texts], denom=denom)

    def _predict_batch(self, images):
        logits = ctc.frame_features(Tensor(images), self.params, self.cfg)
        out = []
        for seq in ctc.ctc_greedy_decode(logits):
            out.append(self.tokenizer.decode([i + NUM_SPECIAL for i in seq]))
        return out


def init_params(cfg: ModelConfig, tokenizer: Tokenizer, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    if cfg.variant == "ctc":
        return ctc.init_ctc(cfg, len(tokenizer.symbols), rng, dtype)
    params = init_encoder(cfg, rng, dtype)
    params.update(init_decoder(cfg, len(tokenizer), encoder_out_dim(cfg), rng, dtype))
    return params


def build_model(cfg: ModelConfig, tokenizer: Tokenizer, seed: int = 42, params: Params | None = None) -> Recognizer:
    if params is None:
        params = init_params(cfg, tokenizer, seed)
    cls = CTCRecognizer if cfg.variant == "ctc" else VEDRecognizer
    return cls(cfg, tokenizer, params)
