"""Seeded training loops: supervised recognition, MIM and MLM pretraining.

Gradient accumulation follows one rule: every micro-batch loss is divided by
the normalizer of the *whole* accumulation window (target tokens for the
VED, samples for CTC), so summing micro-batch gradients gives exactly the
gradient of the window's mean loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import HyperParams
from .data.manifest import Sample, load_images
from .decoder import mlm_pretrain_step
from .encoder import init_mim_head, mim_loss, sample_patch_mask
from .metrics import corpus_rate, wer
from .models import Recognizer
from .optim import Adam, cosine_lr
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path | None
    metrics_log: Path | None
    best_epoch: int | None
    best_dev_wer: float | None
    history: list[dict] = field(default_factory=list)
    checkpoint_sha256: str | None = None


def lr_at(hp: HyperParams, step: int, total: int) -> float:
    if hp.schedule == "constant":
        return hp.lr
    return cosine_lr(step, total, hp.lr)


def windows(order: Sequence[int], hp: HyperParams) -> list[list[list[int]]]:
    """Split an index order into accumulation windows of micro-batches."""
    out = []
    for start in range(0, len(order), hp.effective_batch):
        chunk = list(order[start : start + hp.effective_batch])
        out.append([chunk[i : i + hp.train_batch] for i in range(0, len(chunk), hp.train_batch)])
    return out


def accumulate_step(model: Recognizer, opt: Adam, images: np.ndarray, texts: Sequence[str],
                    micro: list[list[int]], lr: float) -> tuple[float, float]:
    """Forward/backward every micro-batch of one window, then take one Adam step.

    Returns (window loss, window normalizer).
    """
    window = [i for mb in micro for i in mb]
    denom = model.loss_denominator([texts[i] for i in window])
    opt.zero_grad()
    total = 0.0
    for mb in micro:
        loss = model.loss(images[mb], [texts[i] for i in mb], denom=max(denom, 1.0))
        loss.backward()
        total += float(loss.data)
    opt.step(lr)
    return total, denom


def evaluate_wer(model: Recognizer, images: np.ndarray, texts: Sequence[str], batch: int = 8,
                 mode: str = "per_sample") -> tuple[float, list[str]]:
    """WER in percent plus the hypotheses."""
    hyps = model.predict(images, batch=batch)
    if mode == "corpus":
        return 100.0 * corpus_rate(zip(texts, hyps)), hyps
    return 100.0 * float(np.mean([wer(r, h) for r, h in zip(texts, hyps)])), hyps


def train(model: Recognizer, train_samples: Sequence[Sample], dev_samples: Sequence[Sample],
          hp: HyperParams, out_dir: str | Path | None = None, eval_every: int = 1) -> TrainResult:
    """Train ``model`` in place.

    Writes ``metrics.jsonl`` (one line per epoch: epoch, train_loss, dev_wer,
    lr) and ``model.ckpt`` holding the parameters of the epoch with the
    lowest dev WER (earliest epoch on ties) when ``out_dir`` is given.
    """
    if not train_samples:
        raise TrainError("training set is empty")
    cfg = model.cfg
    images = load_images(train_samples, cfg.H, cfg.W, cfg.P, model.dtype)
    texts = [s.text for s in train_samples]
    dev_images = load_images(dev_samples, cfg.H, cfg.W, cfg.P, model.dtype)
    dev_texts = [s.text for s in dev_samples]
    opt = Adam(model.params, hp.beta1, hp.beta2, hp.eps)
    n = len(texts)
    steps_per_epoch = math.ceil(n / hp.effective_batch)
    total_steps = steps_per_epoch * hp.epochs
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_path = out / "metrics.jsonl" if out is not None else None
    ckpt_path = out / "model.ckpt" if out is not None else None
    if log_path is not None:
        log_path.write_text("", encoding="utf-8")
    history: list[dict] = []
    best_wer: float | None = None
    best_epoch: int | None = None
    best_params: dict[str, np.ndarray] | None = None
    step = 0
    lr = lr_at(hp, 0, max(total_steps, 1))
    for epoch in range(1, hp.epochs + 1):
        order = np.random.default_rng([hp.seed, epoch]).permutation(n)
        loss_sum = denom_sum = 0.0
        for micro in windows(order, hp):
            lr = lr_at(hp, step, total_steps)
            l, d = accumulate_step(model, opt, images, texts, micro, lr)
            loss_sum += l * max(d, 1.0)
            denom_sum += max(d, 1.0)
            step += 1
        rec = {"epoch": epoch, "train_loss": loss_sum / denom_sum, "dev_wer": None, "lr": lr}
        if dev_texts and (epoch % eval_every == 0 or epoch == hp.epochs):
            rec["dev_wer"], _ = evaluate_wer(model, dev_images, dev_texts, hp.eval_batch, hp.wer_mode)
            if best_wer is None or rec["dev_wer"] < best_wer:
                best_wer, best_epoch = rec["dev_wer"], epoch
                best_params = {k: p.data.copy() for k, p in model.params.items()}
        history.append(rec)
        log.info("epoch %d loss %.4f dev_wer %s lr %.3g", epoch, rec["train_loss"], rec["dev_wer"], lr)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
    if best_params is None:
        best_epoch = hp.epochs
    else:
        for k, p in model.params.items():
            p.data[...] = best_params[k]
    sha = None
    if ckpt_path is not None:
        sha = save_checkpoint(ckpt_path, cfg, model.tokenizer, model.params,
                              {"best_epoch": best_epoch, "best_dev_wer": best_wer, "hyperparams": hp.to_dict()})
    return TrainResult(ckpt_path, log_path, best_epoch, best_wer, history, sha)


# ----------------------------------------------------------------- pretraining
@dataclass
class PretrainResult:
    initial_loss: float
    final_loss: float
    history: list[dict]


def _write_log(path: Path | None, history: list[dict]) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def pretrain_mim(model: Recognizer, images: np.ndarray, steps: int, hp: HyperParams, mask_ratio: float = 0.5,
                 log_path: Path | None = None, eval_seed: int = 12345) -> PretrainResult:
    """Masked-image-modeling steps on the encoder of ``model``.

    The reported initial/final losses use one fixed evaluation mask over all
    ``images`` so the two numbers are directly comparable.
    """
    cfg = model.cfg
    rng = np.random.default_rng(hp.seed)
    params = model.params
    if "mim.token" not in params:
        init_mim_head(params, cfg, rng, model.dtype)
    enc_params = {k: v for k, v in params.items() if k.startswith(("enc.", "mim."))}
    opt = Adam(enc_params, hp.beta1, hp.beta2, hp.eps)
    images = np.asarray(images, dtype=model.dtype)
    eval_mask = sample_patch_mask(len(images), cfg.num_patches, mask_ratio, np.random.default_rng(eval_seed))

    def eval_loss() -> float:
        with no_grad():
            return float(mim_loss(Tensor(images), params, cfg, eval_mask).data)

    initial = eval_loss()
    history = []
    n = len(images)
    for step in range(steps):
        idx = rng.choice(n, size=min(hp.effective_batch, n), replace=False)
        mask = sample_patch_mask(len(idx), cfg.num_patches, mask_ratio, rng)
        opt.zero_grad()
        loss = mim_loss(Tensor(images[idx]), params, cfg, mask)
        loss.backward()
        lr = lr_at(hp, step, steps)
        opt.step(lr)
        history.append({"step": step + 1, "loss": float(loss.data), "lr": lr})
    final = eval_loss()
    history.append({"step": steps, "eval_loss_initial": initial, "eval_loss_final": final})
    _write_log(log_path, history)
    return PretrainResult(initial, final, history)


def pretrain_mlm(model: Recognizer, texts: Sequence[str], steps: int, hp: HyperParams, mask_prob: float = 0.15,
                 log_path: Path | None = None, eval_seed: int = 12345) -> PretrainResult:
    """Masked-language-modeling steps on the decoder of ``model`` (no cross-attention)."""
    cfg = model.cfg
    tok = model.tokenizer
    rng = np.random.default_rng(hp.seed)
    params = model.params
    dec_params = {k: v for k, v in params.items() if k.startswith("dec.") and ".cross." not in k and ".ln2." not in k}
    opt = Adam(dec_params, hp.beta1, hp.beta2, hp.eps)
    ids = tok.batch(list(texts))

    def eval_loss() -> float:
        with no_grad():
            return float(mlm_pretrain_step(ids, params, cfg, mask_prob, eval_seed)[0].data)

    initial = eval_loss()
    history = []
    n = len(ids)
    for step in range(steps):
        idx = rng.choice(n, size=min(hp.effective_batch, n), replace=False)
        opt.zero_grad()
        loss, _ = mlm_pretrain_step(ids[idx], params, cfg, mask_prob, int(rng.integers(2**31)))
        loss.backward()
        lr = lr_at(hp, step, steps)
        opt.step(lr)
        history.append({"step": step + 1, "loss": float(loss.data), "lr": lr})
    final = eval_loss()
    history.append({"step": steps, "eval_loss_initial": initial, "eval_loss_final": final})
    _write_log(log_path, history)
    return PretrainResult(initial, final, history)
