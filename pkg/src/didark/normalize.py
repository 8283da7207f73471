"""Tail-normalization for right-tailed low-light intensities.

Linear intensities are fourth-rooted, Z-scored with pooled statistics, and
halved, which maps them close to N(0, 0.5) inside [-1, 1].
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DomainError, FitError
from .imagecore import Domain, Image

log = logging.getLogger(__name__)

ROOT = 4.0
DOMAINS = ("lowlight", "welllit")


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float
    domain: str = "lowlight"
    sample_count: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise FitError(f"sigma must be positive, got {self.sigma}")
        if self.mu < 0:
            raise FitError(f"mu must be nonnegative, got {self.mu}")
        if self.domain not in DOMAINS:
            raise FitError(f"unknown stats domain {self.domain!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["mu"]), float(d["sigma"]), str(d["domain"]), int(d.get("sample_count", 0)))


def fit_stats(sample: Iterable[Image], domain: str = "lowlight") -> NormStats:
    """Pooled mean and population std of fourth-rooted linear intensities."""
    arrays = []
    for img in sample:
        if img.domain != Domain.LINEAR:
            raise DomainError(f"fit_stats needs linear images, got {img.domain.value}")
        arrays.append(img.data.ravel())
    if not arrays:
        raise FitError("cannot fit statistics on an empty sample")
    roots = np.concatenate(arrays) ** (1.0 / ROOT)
    mu, sigma = float(roots.mean()), float(roots.std())
    if not sigma > 1e-12:
        raise FitError("sample has zero variance after the fourth root")
    return NormStats(mu, sigma, domain, len(arrays))


def normalize_array(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Unclamped forward transform."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise DomainError("tail normalization needs nonnegative intensities")
    return (x ** (1.0 / ROOT) - stats.mu) / stats.sigma / 2.0


def denormalize_array(v: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.clip(np.maximum(0.0, 2.0 * np.asarray(v) * stats.sigma + stats.mu) ** ROOT, 0.0, 1.0)


def clamp_fraction(img: Image, stats: NormStats) -> float:
    """Fraction of values that tail_normalize clamps to [-1, 1]."""
    v = normalize_array(img.data, stats)
    return float(np.mean(np.abs(v) > 1.0))


def tail_normalize(img: Image, stats: NormStats) -> Image:
    if img.domain != Domain.LINEAR:
        raise DomainError(f"tail_normalize needs a linear image, got {img.domain.value}")
    v = normalize_array(img.data, stats)
    if log.isEnabledFor(logging.DEBUG):
        log.debug("tail_normalize clamp rate %.4f%%", 100.0 * np.mean(np.abs(v) > 1.0))
    return Image(v, Domain.NORMALIZED)


def tail_denormalize(img: Image, stats: NormStats) -> Image:
    if img.domain != Domain.NORMALIZED:
        raise DomainError(f"tail_denormalize needs a normalized image, got {img.domain.value}")
    return Image(denormalize_array(img.data, stats), Domain.LINEAR)


def save_stats(stats: dict[str, NormStats], path: str | Path) -> None:
    """Write ``{"lowlight": ..., "welllit": ...}`` as JSON."""
    payload = {k: v.to_dict() for k, v in sorted(stats.items())}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_stats(path: str | Path) -> dict[str, NormStats]:
    payload = json.loads(Path(path).read_text())
    return {k: NormStats.from_dict(v) for k, v in payload.items()}
