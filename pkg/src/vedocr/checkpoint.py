"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"QVED" | version | meta_len | meta JSON (UTF-8) | n_tensors |
    n_tensors x (name_len | name | ndim | dims... | float32 LE values)

The meta JSON carries ``config`` (a ModelConfig dict), ``vocab`` (the symbol
list) and a free-form ``extra`` object.  Keys are sorted and tensors are
written in name order so identical models produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .nn import Params
from .tensor import Tensor
from .tokenizer import Tokenizer

MAGIC = b"QVED"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt checkpoint or one that does not match its config."""


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def encode_checkpoint(cfg: ModelConfig, tokenizer: Tokenizer, params: Params, extra: dict | None = None) -> bytes:
    meta = json.dumps(
        {"config": cfg.to_dict(), "vocab": tokenizer.symbols, "extra": extra or {}},
        sort_keys=True,
        ensure_ascii=False,
    ).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(path: str | Path, cfg: ModelConfig, tokenizer: Tokenizer, params: Params, extra: dict | None = None) -> str:
    """Write the checkpoint and return the SHA-256 of its bytes."""
    blob = encode_checkpoint(cfg, tokenizer, params, extra)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, n: int = 1):
        vals = struct.unpack(f"<{n}I", self.take(4 * n))
        return vals[0] if n == 1 else vals


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a QVED checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32(ndim)) if ndim > 1 else ((r.u32(),) if ndim == 1 else ())
        count = int(np.prod(shape)) if shape else 1
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after tensor table")
    return Checkpoint(ModelConfig.from_dict(meta["config"]), list(meta["vocab"]), tensors, meta.get("extra", {}))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf)


def restore_params(template: Params, tensors: dict[str, np.ndarray], strict: bool = True) -> Params:
    """Copy checkpoint tensors into a freshly initialised parameter dict, validating shapes."""
    if strict:
        missing = sorted(set(template) - set(tensors))
        extra = sorted(set(tensors) - set(template))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in template.items():
        if name not in tensors:
            continue
        src = tensors[name]
        if src.shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {src.shape} != model shape {t.shape}")
        t.data[...] = src.astype(t.dtype)
    return template


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
