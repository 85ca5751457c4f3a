"""Model and training configuration objects, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

VARIANTS = ("global", "windowed", "ctc")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Every default here is a desk-scale choice; none of them is a published
    value.  ``vocab`` is a path to a vocabulary file (relative paths resolve
    against the config file's directory); empty means "use the built-in
    synthetic alphabet".
    """

    variant: str = "global"
    H: int = 16
    W: int = 128
    P: int = 8
    D: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    window: int = 2
    shift: int = 1
    merge_stages: int = 1
    lmax: int = 128
    vocab: str = ""
    ctc_channels: tuple[int, ...] = (32, 64)
    ctc_context: tuple[int, ...] = (5, 5, 5)
    dtype: str = "float32"

    def __post_init__(self):
        self.ctc_channels = tuple(int(c) for c in self.ctc_channels)
        self.ctc_context = tuple(int(k) for k in self.ctc_context)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("H", "W", "P", "D", "heads", "lmax"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.H % self.P or self.W % self.P:
            raise ConfigError(f"P={self.P} must divide H={self.H} and W={self.W}")
        if self.D % self.heads:
            raise ConfigError(f"heads={self.heads} must divide D={self.D}")
        if self.variant == "windowed":
            gh, gw = self.H // self.P, self.W // self.P
            if gh % self.window or gw % self.window:
                raise ConfigError(f"window={self.window} must divide the patch grid {gh}x{gw}")
            if not 0 <= self.shift < self.window:
                raise ConfigError("shift must satisfy 0 <= shift < window")
            if self.merge_stages < 0:
                raise ConfigError("merge_stages must be >= 0")
        if any(k < 1 for k in self.ctc_context):
            raise ConfigError("ctc_context kernel widths must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def grid(self) -> tuple[int, int]:
        return self.H // self.P, self.W // self.P

    @property
    def num_patches(self) -> int:
        return self.H * self.W // (self.P * self.P)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctc_channels"] = list(self.ctc_channels)
        d["ctc_context"] = list(self.ctc_context)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class HyperParams:
    """Optimization settings; defaults reproduce the published training table."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_batch: int = 8
    eval_batch: int = 8
    grad_accum_steps: int = 8
    effective_batch: int = 64
    epochs: int = 50
    seed: int = 42
    schedule: str = "cosine"
    wer_mode: str = "per_sample"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.effective_batch != self.train_batch * self.grad_accum_steps:
            raise ConfigError(
                f"effective_batch={self.effective_batch} != train_batch*grad_accum_steps="
                f"{self.train_batch * self.grad_accum_steps}"
            )
        if self.lr < 0 or self.eps <= 0:
            raise ConfigError("lr must be >= 0 and eps > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.train_batch < 1 or self.eval_batch < 1 or self.grad_accum_steps < 1 or self.epochs < 0:
            raise ConfigError("batch sizes and accumulation steps must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.wer_mode not in ("per_sample", "corpus"):
            raise ConfigError(f"unknown wer_mode {self.wer_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        if "effective_batch" not in d:
            d["effective_batch"] = d.get("train_batch", 8) * d.get("grad_accum_steps", 8)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown HyperParams fields: {sorted(unknown)}")
        return cls(**d)


def _read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return data


def load_model_config(path: str | Path) -> ModelConfig:
    data = _read_json(path)
    if data.get("vocab"):
        data["vocab"] = str((Path(path).parent / data["vocab"]).resolve())
    return ModelConfig.from_dict(data)


def load_hyperparams(path: str | Path) -> HyperParams:
    return HyperParams.from_dict(_read_json(path))


@dataclass
class SynthConfig:
    """Synthetic corpus settings."""

    count: int = 2000
    styles: int = 28
    min_len: int = 2
    max_len: int = 8
    height: int = 32
    seed: int = 42
    diacritic_prob: float = 0.3
    space_prob: float = 0.2
    dataset: str = "synth"
    cluster: str = "HWR"
    alphabet: list[str] = field(default_factory=list)
    diacritics: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.styles < 1:
            raise ConfigError("style roster size must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.height < 8:
            raise ConfigError("height must be at least 8 px")
        if self.cluster not in ("HWR", "OCR"):
            raise ConfigError("cluster must be HWR or OCR")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**d)


def load_synth_config(path: str | Path) -> SynthConfig:
    return SynthConfig.from_dict(_read_json(path))
