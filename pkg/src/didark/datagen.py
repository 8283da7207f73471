"""Paired dataset ingestion, stats subsets, and the synthetic glyph-pair generator."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .degrade import DegradeParams, simulate_lowlight
from .errors import ArgumentError, IngestionError
from .imagecore import Image, center_crop, read_png, srgb_to_linear, write_png
from .normalize import NormStats, fit_stats

log = logging.getLogger(__name__)

Pair = tuple[Image, Image]


def _pngs(d: Path) -> set[str]:
    return {p.name for p in d.iterdir() if p.is_file() and p.suffix.lower() == ".png"}


def load_paired_dataset(root: str | Path, size: int = 256) -> list[Pair]:
    """Read ``root/low/*.png`` and ``root/high/*.png`` matched by name, center-cropped to ``size``."""
    root = Path(root)
    low_dir, high_dir = root / "low", root / "high"
    for d in (low_dir, high_dir):
        if not d.is_dir():
            raise IngestionError(f"missing directory {d}")
    low, high = _pngs(low_dir), _pngs(high_dir)
    orphans = sorted((low - high) | (high - low))
    if orphans:
        where = ["low/" + n for n in sorted(low - high)] + ["high/" + n for n in sorted(high - low)]
        raise IngestionError(f"unmatched files: {', '.join(where)}")
    pairs = []
    for name in sorted(low, key=lambda n: n.encode("utf-8")):
        a, b = read_png(low_dir / name), read_png(high_dir / name)
        if a.shape != b.shape:
            raise IngestionError(f"{name}: low {a.shape[:2]} and high {b.shape[:2]} sizes differ")
        if min(a.height, a.width) < size:
            log.warning("skipping %s: %dx%d is smaller than %d", name, a.height, a.width, size)
            continue
        pairs.append((center_crop(a, size), center_crop(b, size)))
    return pairs


def sample_stats_subset(dataset: Sequence[Pair], n: int = 30, rng: np.random.Generator | None = None) -> list[Pair]:
    """``n`` distinct pairs drawn without replacement."""
    if len(dataset) <= n:
        if len(dataset) < n:
            log.warning("dataset has %d pairs, fewer than %d; using all of them", len(dataset), n)
        return list(dataset)
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.choice(len(dataset), size=n, replace=False)
    return [dataset[i] for i in sorted(idx)]


def fit_pair_stats(pairs: Sequence[Pair]) -> dict[str, NormStats]:
    return {
        "lowlight": fit_stats([srgb_to_linear(lo) for lo, _ in pairs], "lowlight"),
        "welllit": fit_stats([srgb_to_linear(hi) for _, hi in pairs], "welllit"),
    }


# --- synthetic glyphs -------------------------------------------------------


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    t = np.zeros((size, size))
    for _ in range(2):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        t += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c1, c2 = rng.uniform(0.3, 0.85, size=3), rng.uniform(0.3, 0.85, size=3)
    return c1 * (1 - t[..., None]) + c2 * t[..., None]


def _stroke_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    width = rng.integers(1, 5)
    kind = rng.integers(3)
    if kind == 0:  # rectangle outline
        h, w = rng.integers(size // 16, size // 3, size=2)
        r0, c0 = rng.integers(0, size - h), rng.integers(0, size - w)
        inside = (yy >= r0) & (yy < r0 + h) & (xx >= c0) & (xx < c0 + w)
        core = (yy >= r0 + width) & (yy < r0 + h - width) & (xx >= c0 + width) & (xx < c0 + w - width)
        return inside & ~core
    if kind == 1:  # straight bar
        p0 = rng.uniform(0, size, size=2)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(size / 10, size / 2)
        d = np.array([np.cos(angle), np.sin(angle)])
        rel_x, rel_y = xx - p0[0], yy - p0[1]
        along = rel_x * d[0] + rel_y * d[1]
        across = np.abs(-rel_x * d[1] + rel_y * d[0])
        return (along >= 0) & (along <= length) & (across <= width / 2)
    # ring segment
    cx, cy = rng.uniform(0, size, size=2)
    radius = rng.uniform(size / 20, size / 5)
    start = rng.uniform(0, 2 * np.pi)
    span = rng.uniform(np.pi / 2, 2 * np.pi)
    r = np.hypot(xx - cx, yy - cy)
    ang = np.mod(np.arctan2(yy - cy, xx - cx) - start, 2 * np.pi)
    return (np.abs(r - radius) <= width / 2) & (ang <= span)


def generate_well_lit(rng: np.random.Generator, size: int = 256) -> Image:
    img = _background(rng, size)
    for _ in range(int(rng.integers(3, 9))):
        mask = _stroke_mask(rng, size)
        under = img[mask].mean() if mask.any() else img.mean()
        if under > 0.5:
            color = rng.uniform(0.0, 0.15, size=3)
        else:
            color = rng.uniform(0.85, 1.0, size=3)
        img[mask] = color
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.0)
    img = img + 0.02 * texture[..., None]
    return Image(np.clip(img, 0.0, 1.0))


def generate_glyph_pair(rng: np.random.Generator, size: int = 256,
                        degrade: DegradeParams = DegradeParams()) -> Pair:
    """Synthetic (low, high) pair: smooth background with high-contrast strokes, then dimmed and noised."""
    if size < 32 or size % 32:
        raise ArgumentError(f"size must be a positive multiple of 32, got {size}")
    high = generate_well_lit(rng, size)
    low = simulate_lowlight(high, degrade, rng)
    return low, high


def write_glyph_dataset(out: str | Path, count: int, seed: int = 0, degrade: DegradeParams = DegradeParams(),
                        size: int = 256) -> Path:
    """Write ``low/NNNN.png`` (8-bit), ``high/NNNN.png`` (16-bit) and ``manifest.json``."""
    out = Path(out)
    for i in range(count):
        low, high = generate_glyph_pair(np.random.default_rng([seed, i]), size, degrade)
        write_png(low, out / "low" / f"{i:04d}.png", bits=8)
        write_png(high, out / "high" / f"{i:04d}.png", bits=16)
    manifest = {"seed": seed, "count": count, "size": size, "degrade": degrade.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
