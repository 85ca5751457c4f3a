"""Grayscale image I/O and model-input preprocessing.

Images in memory are float arrays in [0, 1] with background 1.0 (white) and
ink toward 0.0.  The on-disk format is binary PGM (P5, maxval 255); PNG and
other formats are read through Pillow when it is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

BACKGROUND = 1.0


class ImageError(ValueError):
    """Unreadable or malformed image file."""


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def encode_pgm(img: np.ndarray) -> bytes:
    px = to_bytes(img)
    if px.ndim != 2:
        raise ImageError(f"PGM needs a 2-D image, got shape {px.shape}")
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(img))


def _pgm_tokens(buf: bytes):
    """Yield (token, end_offset) for the four header fields, skipping comments."""
    pos = 0
    n = len(buf)
    for _ in range(4):
        while pos < n:
            c = buf[pos : pos + 1]
            if c == b"#":
                while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        yield buf[start:pos], pos


def decode_pgm(buf: bytes) -> np.ndarray:
    toks = list(_pgm_tokens(buf))
    if len(toks) < 4 or toks[0][0] != b"P5":
        raise ImageError("not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t[0]) for t in toks[1:4])
    except ValueError as exc:
        raise ImageError("malformed PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ImageError(f"bad PGM dimensions {w}x{h} / maxval {maxval}")
    start = toks[3][1] + 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dtype.itemsize
    body = buf[start : start + need]
    if len(body) != need:
        raise ImageError(f"PGM data truncated: expected {need} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if buf[:2] == b"P5":
        return decode_pgm(buf)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise ImageError(f"{path}: only PGM is supported without Pillow") from exc
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)

    def coords(n_in, n_out):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0, n_in - 1)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def preprocess(img: np.ndarray, H: int, W: int, P: int) -> np.ndarray:
    """Fit ``img`` inside (H, W) keeping aspect ratio, pad right/bottom with background.

    Returns a float array [1, H, W] in [0, 1].
    """
    if H % P or W % P:
        raise ValueError(f"target {H}x{W} is not divisible by patch size {P}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ImageError(f"expected a non-empty 2-D grayscale image, got shape {img.shape}")
    if img.max() > 1.0:
        img = img / 255.0
    h, w = img.shape
    scale = min(H / h, W / w)
    nh = min(H, max(1, int(round(h * scale))))
    nw = min(W, max(1, int(round(w * scale))))
    out = np.full((H, W), BACKGROUND)
    out[:nh, :nw] = resize_bilinear(img, nh, nw)
    out = np.clip(out, 0.0, 1.0)
    assert out.shape[0] * out.shape[1] // (P * P) == (H // P) * (W // P)
    return out[None]
