"""JSONL sample manifests and deterministic train/dev/test splitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .images import ImageError, read_image

SPLITS = ("train", "dev", "test")
CLUSTERS = ("HWR", "OCR")


class ManifestError(ValueError):
    """Malformed manifest line or a record that violates its invariants."""


@dataclass
class Sample:
    image_path: Path
    text: str
    dataset: str
    cluster: str
    split: str | None = None

    def to_record(self, root: Path) -> dict:
        try:
            rel = self.image_path.relative_to(root)
        except ValueError:
            rel = Path(self.image_path)
        rec = {"image": rel.as_posix(), "text": self.text, "dataset": self.dataset, "cluster": self.cluster}
        if self.split is not None:
            rec["split"] = self.split
        return rec


def _validate(rec: dict, lineno: int, root: Path, check_images: bool) -> Sample:
    for key in ("image", "text", "dataset", "cluster"):
        if key not in rec:
            raise ManifestError(f"line {lineno}: missing field {key!r}")
    text = rec["text"]
    if not isinstance(text, str) or not text:
        raise ManifestError(f"line {lineno}: text must be a non-empty string")
    if rec["cluster"] not in CLUSTERS:
        raise ManifestError(f"line {lineno}: cluster must be HWR or OCR, got {rec['cluster']!r}")
    split = rec.get("split")
    if split is not None and split not in SPLITS:
        raise ManifestError(f"line {lineno}: split must be one of {SPLITS}, got {split!r}")
    path = root / rec["image"]
    if check_images:
        if not path.is_file():
            raise ManifestError(f"line {lineno}: image not found: {path}")
        try:
            read_image(path)
        except ImageError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    return Sample(path, text, str(rec["dataset"]), rec["cluster"], split)


def load_manifest(path: str | Path, check_images: bool = True) -> list[Sample]:
    """Parse a UTF-8 JSONL manifest; image paths are relative to the manifest's directory."""
    path = Path(path)
    root = path.parent
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            samples.append(_validate(rec, lineno, root, check_images))
    return samples


def write_manifest(path: str | Path, samples: Sequence[Sample]) -> None:
    path = Path(path)
    root = path.parent
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(root), ensure_ascii=False) + "\n")


def split_dataset(samples: Sequence[Sample], ratios=(0.8, 0.1, 0.1), seed: int = 42):
    """Return (train, dev, test).

    Samples that already carry a split keep it.  The rest are shuffled with
    ``seed`` and cut by ``ratios`` using floor sizes for dev and test; the
    rounding remainder goes to train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    parts: dict[str, list[Sample]] = {k: [] for k in SPLITS}
    free = []
    for s in samples:
        if s.split in parts:
            parts[s.split].append(s)
        else:
            free.append(s)
    order = np.random.default_rng(seed).permutation(len(free))
    n = len(free)
    n_dev = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train = n - n_dev - n_test
    shuffled = [free[i] for i in order]
    parts["train"].extend(shuffled[:n_train])
    parts["dev"].extend(shuffled[n_train : n_train + n_dev])
    parts["test"].extend(shuffled[n_train + n_dev :])
    return parts["train"], parts["dev"], parts["test"]


def load_images(samples: Sequence[Sample], H: int, W: int, P: int, dtype=np.float64) -> np.ndarray:
    """Preprocessed batch [B, 1, H, W]."""
    from .images import preprocess

    if not samples:
        return np.zeros((0, 1, H, W), dtype=dtype)
    return np.stack([preprocess(read_image(s.image_path), H, W, P) for s in samples]).astype(dtype)
