"""Procedural cursive-script line renderer and synthetic corpus generator.

There is no font engine here.  Each base letter is a short list of stroke
primitives (lines, arcs, dots) in glyph units where the baseline is y = 0 and
one unit is the x-height.  A :class:`GlyphStyle` stands in for a font: it
sets stroke width, slant, baseline curvature, joining-stroke thickness,
diacritic offset and jitter.  Lines are laid out right to left, neighbouring
letters inside a word are connected by a baseline stroke, and combining marks
are drawn above or below the letter they follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..config import SynthConfig
from ..tokenizer import BASE_GLYPHS, DIACRITICS, SPACE
from .images import write_pgm
from .manifest import Sample, write_manifest

# primitives: ("line", x0, y0, x1, y1) | ("arc", cx, cy, r, a0, a1) | ("dot", x, y)
# angles in radians, counter-clockwise, y up.
PI = math.pi
GLYPH_ATLAS: dict[str, tuple[float, list[tuple]]] = {
    "ا": (0.35, [("line", 0.18, 0.0, 0.18, 1.3)]),
    "ب": (1.0, [("arc", 0.5, 0.3, 0.45, PI, 2 * PI), ("dot", 0.5, -0.45)]),
    "ج": (0.9, [("line", 0.1, 0.8, 0.8, 0.8), ("arc", 0.45, 0.3, 0.5, 0.5 * PI, 1.5 * PI), ("dot", 0.5, 0.3)]),
    "د": (0.6, [("line", 0.15, 0.8, 0.5, 0.3), ("line", 0.5, 0.3, 0.1, 0.0)]),
    "ه": (0.7, [("arc", 0.35, 0.35, 0.33, 0.0, 2 * PI)]),
    "و": (0.7, [("arc", 0.45, 0.45, 0.22, 0.0, 2 * PI), ("line", 0.25, 0.35, 0.05, -0.55)]),
    "ز": (0.6, [("arc", 0.0, 0.3, 0.5, -0.5 * PI, 0.45 * PI), ("dot", 0.3, 1.0)]),
    "ح": (0.9, [("line", 0.1, 0.8, 0.8, 0.8), ("arc", 0.45, 0.3, 0.5, 0.5 * PI, 1.5 * PI)]),
    "ط": (0.9, [("arc", 0.45, 0.25, 0.3, 0.0, PI), ("line", 0.15, 0.25, 0.75, 0.25), ("line", 0.35, 0.25, 0.35, 1.3)]),
    "ي": (1.0, [("arc", 0.5, 0.4, 0.4, 1.1 * PI, 2.0 * PI), ("dot", 0.35, -0.45), ("dot", 0.65, -0.45)]),
    "ك": (0.9, [("line", 0.8, 0.0, 0.8, 1.3), ("line", 0.1, 0.0, 0.8, 0.0), ("line", 0.3, 0.35, 0.6, 0.6)]),
    "ل": (0.7, [("line", 0.55, 0.0, 0.55, 1.3), ("arc", 0.35, 0.1, 0.25, PI, 2 * PI)]),
    "م": (0.6, [("arc", 0.35, 0.25, 0.22, 0.0, 2 * PI), ("line", 0.15, 0.2, 0.15, -0.6)]),
    "ن": (0.9, [("arc", 0.45, 0.35, 0.4, PI, 2 * PI), ("dot", 0.45, 0.9)]),
    "س": (1.2, [("line", 0.1, 0.0, 0.1, 0.4), ("line", 0.45, 0.0, 0.45, 0.4), ("line", 0.8, 0.0, 0.8, 0.4), ("line", 0.1, 0.0, 1.1, 0.0)]),
    "ع": (0.7, [("arc", 0.45, 0.75, 0.25, 0.3 * PI, 1.3 * PI), ("arc", 0.4, 0.0, 0.35, 0.6 * PI, 1.6 * PI)]),
    "ف": (1.0, [("arc", 0.75, 0.35, 0.2, 0.0, 2 * PI), ("line", 0.05, 0.15, 0.75, 0.15), ("dot", 0.75, 0.95)]),
    "ص": (1.3, [("arc", 0.85, 0.3, 0.3, 0.0, 2 * PI), ("line", 0.1, 0.0, 0.85, 0.0), ("line", 0.1, 0.0, 0.1, 0.3)]),
}

# Glyph-relative anchor: marks above sit ``offset`` px over the letter's top
# edge, marks below sit under its bottom edge.
DIACRITIC_SHAPES: dict[str, tuple[str, list[tuple]]] = {
    "َ": ("above", [("line", -0.2, 0.0, 0.2, 0.15)]),
    "ُ": ("above", [("arc", 0.0, 0.12, 0.12, 0.0, 2 * PI), ("line", 0.0, 0.0, -0.15, -0.15)]),
    "ِ": ("below", [("line", -0.2, 0.0, 0.2, 0.15)]),
    "ْ": ("above", [("arc", 0.0, 0.1, 0.14, 0.0, 2 * PI)]),
}

GAP = 0.35  # glyph units between joined letters
SPACE_ADVANCE = 1.0
MARGIN = 0.5
TOP = 2.0  # units above the baseline
BOTTOM = 1.2  # units below the baseline


class RenderError(ValueError):
    """Text contains a symbol the renderer has no strokes for."""


@dataclass(frozen=True)
class GlyphStyle:
    style_id: int
    stroke_width: float
    slant: float
    curvature: float
    join_thickness: float
    diacritic_offset: float
    jitter: float

    @classmethod
    def from_id(cls, style_id: int) -> "GlyphStyle":
        """Deterministic style parameters for ``style_id`` (the desk-scale analog of a font)."""
        rng = np.random.default_rng([0x5EED, style_id])
        return cls(
            style_id=style_id,
            stroke_width=round(float(rng.uniform(1.2, 2.4)), 4),
            slant=round(float(rng.uniform(-0.3, 0.3)), 4),
            curvature=round(float(rng.uniform(-0.15, 0.15)), 4),
            join_thickness=round(float(rng.uniform(0.8, 1.8)), 4),
            diacritic_offset=round(float(rng.uniform(1.5, 3.5)), 4),
            jitter=round(float(rng.uniform(0.0, 0.06)), 4),
        )


def style_roster(n: int = 28) -> list[GlyphStyle]:
    return [GlyphStyle.from_id(i) for i in range(n)]


def _polyline(prim: tuple, steps: int = 12) -> tuple[np.ndarray | None, bool]:
    kind = prim[0]
    if kind == "line":
        return np.array([[prim[1], prim[2]], [prim[3], prim[4]]], dtype=np.float64), False
    if kind == "arc":
        _, cx, cy, r, a0, a1 = prim
        n = max(3, int(steps * abs(a1 - a0) / PI) + 1)
        a = np.linspace(a0, a1, n)
        return np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], axis=1), False
    if kind == "dot":
        return np.array([[prim[1], prim[2]]], dtype=np.float64), True
    raise ValueError(f"unknown primitive {kind!r}")


def _glyph_extent(prims: Sequence[tuple]) -> tuple[float, float]:
    ys = []
    for p in prims:
        pts, _ = _polyline(p)
        ys.extend(pts[:, 1])
    return min(ys), max(ys)


class _Canvas:
    def __init__(self, h: int, w: int):
        self.ink = np.zeros((h, w))
        yy, xx = np.mgrid[0:h, 0:w]
        self.px = xx + 0.5
        self.py = yy + 0.5

    def segment(self, p0: np.ndarray, p1: np.ndarray, width: float) -> None:
        r = width / 2 + 1.0
        h, w = self.ink.shape
        x0 = max(int(math.floor(min(p0[0], p1[0]) - r)), 0)
        x1 = min(int(math.ceil(max(p0[0], p1[0]) + r)) + 1, w)
        y0 = max(int(math.floor(min(p0[1], p1[1]) - r)), 0)
        y1 = min(int(math.ceil(max(p0[1], p1[1]) + r)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            return
        px = self.px[y0:y1, x0:x1]
        py = self.py[y0:y1, x0:x1]
        d = p1 - p0
        L2 = float(d @ d)
        if L2 == 0.0:
            dist = np.hypot(px - p0[0], py - p0[1])
        else:
            t = np.clip(((px - p0[0]) * d[0] + (py - p0[1]) * d[1]) / L2, 0.0, 1.0)
            dist = np.hypot(px - (p0[0] + t * d[0]), py - (p0[1] + t * d[1]))
        cov = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
        region = self.ink[y0:y1, x0:x1]
        np.maximum(region, cov, out=region)

    def polyline(self, pts: np.ndarray, width: float) -> None:
        if len(pts) == 1:
            self.segment(pts[0], pts[0], width)
        for a, b in zip(pts[:-1], pts[1:]):
            self.segment(a, b, width)

    def image(self) -> np.ndarray:
        return 1.0 - self.ink


def _layout(text: str) -> list[tuple[str, list[str]]]:
    """Group text into (base-or-space, [marks]) clusters."""
    clusters: list[tuple[str, list[str]]] = []
    for ch in text:
        if ch in DIACRITIC_SHAPES:
            if not clusters or clusters[-1][0] == SPACE:
                raise RenderError(f"diacritic {ch!r} must follow a letter")
            clusters[-1][1].append(ch)
        elif ch in GLYPH_ATLAS or ch == SPACE:
            clusters.append((ch, []))
        else:
            raise RenderError(f"symbol {ch!r} is not in the renderer's alphabet")
    return clusters


def text_width_units(text: str) -> float:
    total = 2 * MARGIN
    prev_letter = False
    for base, _ in _layout(text):
        if base == SPACE:
            total += SPACE_ADVANCE
            prev_letter = False
        else:
            total += (GAP if prev_letter else 0.0) + GLYPH_ATLAS[base][0]
            prev_letter = True
    return total


def render_sample(text: str, style: GlyphStyle, height: int = 32, seed: int = 0) -> np.ndarray:
    """Render ``text`` right to left; returns a float image (background 1.0, ink toward 0.0)."""
    clusters = _layout(text)
    unit = height / (TOP + BOTTOM)
    width = max(1, int(math.ceil(text_width_units(text) * unit)))
    canvas = _Canvas(height, width)
    rng = np.random.default_rng([seed, style.style_id])
    base_px = TOP * unit

    def to_px(pts: np.ndarray, x_right: float) -> np.ndarray:
        # glyph-local x grows to the left from the glyph's right edge
        x = x_right - pts[:, 0] * unit
        y = pts[:, 1] * unit
        x = x + style.slant * y
        bend = style.curvature * unit * math.sin(PI * min(max(x_right / width, 0.0), 1.0))
        return np.stack([x, base_px - y - bend], axis=1)

    def jitter(pts: np.ndarray) -> np.ndarray:
        if style.jitter == 0.0:
            return pts
        return pts + rng.normal(0.0, style.jitter, size=pts.shape)

    x_right = width - MARGIN * unit
    prev_left: float | None = None
    for base, marks in clusters:
        if base == SPACE:
            x_right -= SPACE_ADVANCE * unit
            prev_left = None
            continue
        adv, prims = GLYPH_ATLAS[base]
        if prev_left is not None:
            x_right -= GAP * unit
            join = to_px(np.array([[0.0, 0.0], [-GAP, 0.0]]), x_right)
            canvas.polyline(join, style.join_thickness)
        for prim in prims:
            pts, is_dot = _polyline(prim)
            pts = jitter(pts)
            w = style.stroke_width * (1.6 if is_dot else 1.0)
            canvas.polyline(to_px(pts, x_right), w)
        lo, hi = _glyph_extent(prims)
        centre = adv / 2
        above_n = below_n = 0
        for m in marks:
            where, mprims = DIACRITIC_SHAPES[m]
            off = style.diacritic_offset / unit
            if where == "above":
                anchor = hi + off + 0.15 + 0.35 * above_n
                above_n += 1
                sign = 1.0
            else:
                anchor = lo - off - 0.15 - 0.35 * below_n
                below_n += 1
                sign = -1.0
            for prim in mprims:
                pts, _ = _polyline(prim)
                pts = pts * np.array([1.0, sign]) + np.array([centre, anchor])
                canvas.polyline(to_px(jitter(pts), x_right), style.stroke_width * 0.8)
        x_right -= adv * unit
        prev_left = x_right
    return canvas.image()


# ------------------------------------------------------------------ corpus
def alphabet_for(config: SynthConfig) -> tuple[list[str], list[str]]:
    bases = list(config.alphabet) or list(BASE_GLYPHS)
    marks = list(config.diacritics) if config.diacritics else list(DIACRITICS)
    for ch in bases:
        if ch not in GLYPH_ATLAS:
            raise RenderError(f"no strokes for base symbol {ch!r}")
    for ch in marks:
        if ch not in DIACRITIC_SHAPES:
            raise RenderError(f"no strokes for diacritic {ch!r}")
    return bases, marks


def sample_text(rng: np.random.Generator, bases: Sequence[str], marks: Sequence[str], config: SynthConfig) -> str:
    """Letters drawn uniformly; a mark follows a letter with ``diacritic_prob``; word breaks with ``space_prob``."""
    n = int(rng.integers(config.min_len, config.max_len + 1))
    out = []
    for i in range(n):
        if i > 0 and rng.random() < config.space_prob:
            out.append(SPACE)
        out.append(bases[int(rng.integers(len(bases)))])
        if marks and rng.random() < config.diacritic_prob:
            out.append(marks[int(rng.integers(len(marks)))])
    return "".join(out)


def generate_corpus(config: SynthConfig, out_dir: str | Path) -> Path:
    """Render ``config.count`` samples into ``out_dir``; returns the manifest path.

    Styles are assigned round-robin over the roster; everything else is drawn
    from a generator seeded with ``config.seed``.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    bases, marks = alphabet_for(config)
    roster = style_roster(config.styles)
    rng = np.random.default_rng(config.seed)
    samples = []
    for i in range(config.count):
        text = sample_text(rng, bases, marks, config)
        style = roster[i % len(roster)]
        seed = int(rng.integers(2**31))
        img = render_sample(text, style, config.height, seed)
        path = img_dir / f"{i:06d}.pgm"
        write_pgm(path, img)
        samples.append(Sample(path, text, config.dataset, config.cluster))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, samples)
    return manifest


def augment_line(
    sample: Sample,
    roster: Sequence[GlyphStyle],
    k: int = 4,
    seed: int = 0,
    out_dir: str | Path | None = None,
    height: int = 32,
) -> list[Sample]:
    """Re-render ``sample.text`` in ``k`` distinct, randomly chosen styles."""
    if k > len(roster):
        raise ValueError(f"k={k} exceeds roster size {len(roster)}")
    if k <= 0:
        return []
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(roster), size=k, replace=False)
    out_dir = Path(out_dir) if out_dir is not None else sample.image_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = sample.image_path.stem
    result = []
    for j, idx in enumerate(picks):
        style = roster[int(idx)]
        img = render_sample(sample.text, style, height, int(rng.integers(2**31)))
        path = out_dir / f"{stem}_aug{j}_s{style.style_id}.pgm"
        write_pgm(path, img)
        result.append(Sample(path, sample.text, sample.dataset, sample.cluster, sample.split))
    return result
