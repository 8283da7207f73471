"""Reconstruction metrics, text-recognition metrics, and exposure consistency."""

from __future__ import annotations

import re
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ArgumentError
from .imagecore import Domain, Image, luma

PSNR_CAP = 100.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    for img in (a, b):
        if isinstance(img, Image) and img.domain != Domain.SRGB:
            raise ArgumentError("metrics are computed on srgb images")
    a = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid (unpadded) window positions, averaged across channels."""
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < win:
        raise ArgumentError(f"image smaller than the {win}x{win} SSIM window")
    w = _gaussian_window(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h = win // 2

    def filt(x):
        return ndimage.correlate(x, w, mode="constant")[h:-h, h:-h]

    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = filt(x), filt(y)
        vx = filt(x * x) - mx * mx
        vy = filt(y * y) - my * my
        cxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def levenshtein(s1: str, s2: str) -> int:
    """Unit-cost edit distance (two-row dynamic program)."""
    if len(s1) < len(s2):
        s1, s2 = s2, s1
    prev = list(range(len(s2) + 1))
    for i, c1 in enumerate(s1, 1):
        cur = [i]
        for j, c2 in enumerate(s2, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (c1 != c2)))
        prev = cur
    return prev[-1]


def ned(s1: str, s2: str) -> float:
    return levenshtein(s1, s2) / max(len(s1), len(s2), 1)


_NON_ALNUM = re.compile(r"[^0-9a-z]")


def normalize_word(s: str) -> str:
    return _NON_ALNUM.sub("", s.lower())


def _check_lists(preds: Sequence[str], gts: Sequence[str]) -> None:
    if len(preds) != len(gts):
        raise ArgumentError(f"{len(preds)} predictions for {len(gts)} ground-truth words")


def word_accuracy(preds: Sequence[str], gts: Sequence[str]) -> float:
    """Percent of case-insensitive, alphanumeric-filtered exact matches."""
    _check_lists(preds, gts)
    if not gts:
        return 0.0
    hits = sum(normalize_word(p) == normalize_word(g) for p, g in zip(preds, gts))
    return 100.0 * hits / len(gts)


def one_minus_ned(preds: Sequence[str], gts: Sequence[str]) -> float:
    """Mean of 1 - NED over pairs, on the same normalized words as word_accuracy."""
    _check_lists(preds, gts)
    if not gts:
        return 0.0
    return float(np.mean([1.0 - ned(normalize_word(p), normalize_word(g)) for p, g in zip(preds, gts)]))


def patch_means(img, patch: int = 32) -> np.ndarray:
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    h, w = data.shape[:2]
    if h % patch or w % patch:
        raise ArgumentError(f"{h}x{w} is not divisible by patch size {patch}")
    y = luma(data)
    return y.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3))


def exposure_consistency(img, patch: int = 32) -> float:
    """Std of per-patch mean Rec. 709 luma."""
    return float(np.std(patch_means(img, patch)))
