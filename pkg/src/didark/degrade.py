"""Low-light capture simulation and paired training augmentations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import cv2
import numpy as np

from .errors import ArgumentError
from .imagecore import Domain, Image, _require, hsv_to_rgb, rgb_to_hsv


@dataclass(frozen=True)
class DegradeParams:
    brightness: float = 0.4
    noise_level: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.brightness <= 1.0:
            raise ArgumentError(f"brightness must lie in (0, 1], got {self.brightness}")
        if self.noise_level < 0:
            raise ArgumentError(f"noise level must be >= 0, got {self.noise_level}")

    def to_dict(self) -> dict:
        return asdict(self)


def dim(img: Image, brightness: float) -> Image:
    """Scale the HSV value channel by ``brightness``."""
    if not 0.0 < brightness <= 1.0:
        raise ArgumentError(f"brightness must lie in (0, 1], got {brightness}")
    hsv = rgb_to_hsv(img).data.copy()
    hsv[..., 2] *= brightness
    return hsv_to_rgb(Image(hsv, Domain.HSV))


def noise_params(level: float) -> tuple[float, float]:
    """Map a scalar noise level to (read std, shot gain)."""
    return level / 4.0, level**2


def noise_variance(x: np.ndarray, level: float) -> np.ndarray:
    read, shot = noise_params(level)
    return read**2 + shot * np.asarray(x)


def sample_poisson_gaussian(x: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Heteroscedastic Gaussian approximation of Poisson-Gaussian noise, unclamped."""
    if level < 0:
        raise ArgumentError(f"noise level must be >= 0, got {level}")
    x = np.asarray(x, dtype=np.float64)
    if level == 0:
        return x.copy()
    return x + np.sqrt(noise_variance(x, level)) * rng.standard_normal(x.shape)


def add_poisson_gaussian(img: Image, level: float, rng: np.random.Generator) -> Image:
    _require(img, Domain.SRGB)
    return Image(sample_poisson_gaussian(img.data, level, rng), Domain.SRGB)


def simulate_lowlight(img: Image, params: DegradeParams, rng: np.random.Generator | None = None) -> Image:
    """Dim in HSV, convert back, then add noise."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    return add_poisson_gaussian(dim(img, params.brightness), params.noise_level, rng)


def gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with a normalized kernel and mirrored borders."""
    radius = max(1, int(np.ceil(4.0 * sigma)))
    data = np.asarray(data)
    if data.dtype != np.float32:
        data = data.astype(np.float64)
    return cv2.GaussianBlur(data, (2 * radius + 1,) * 2, sigma, borderType=cv2.BORDER_REFLECT_101)


def scale_value_saturation(data: np.ndarray, value: float, saturation: float) -> np.ndarray:
    """Scale hexcone V and S in RGB directly, clamping both to [0, 1].

    With V = max(rgb) and S = 1 - min(rgb)/V, hue is preserved by
    rgb' = V' - (S'/S) (V' / V) (V - rgb).
    """
    r, g, b = data[..., 0:1], data[..., 1:2], data[..., 2:3]
    v = np.maximum(np.maximum(r, g), b)
    lo = np.minimum(np.minimum(r, g), b)
    safe_v = np.where(v > 0, v, 1.0)
    sat = np.where(v > 0, (v - lo) / safe_v, 0.0)
    v_new = np.minimum(v * value, 1.0)
    s_new = np.minimum(sat * saturation, 1.0)
    ratio = np.where(sat > 0, s_new / np.where(sat > 0, sat, 1.0), 0.0)
    return v_new - ratio * (v_new / safe_v) * (v - data)


def augment_arrays(low: np.ndarray, high: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`augment`; preserves float32 inputs."""
    if low.shape != high.shape:
        raise ArgumentError(f"pair sizes differ: {low.shape} vs {high.shape}")
    if rng.random() < 0.5:
        sigma = rng.uniform(0.3, 1.0)

        def filt(d):
            return gaussian_blur(d, sigma)
    else:
        amount = rng.uniform(0.2, 0.8)

        def filt(d):
            return d + amount * (d - gaussian_blur(d, 1.0))
    value = rng.uniform(0.9, 1.1)
    saturation = rng.uniform(0.9, 1.1)
    out = []
    for d in (low, high):
        d = np.clip(filt(d), 0.0, 1.0)
        out.append(np.clip(scale_value_saturation(d, value, saturation), 0.0, 1.0).astype(d.dtype, copy=False))
    return out[0], out[1]


def augment(pair: tuple[Image, Image], rng: np.random.Generator) -> tuple[Image, Image]:
    """Apply one random blur-or-sharpen plus brightness/saturation jitter to both images alike.

    Blur sigma is drawn from [0.3, 1.0]; unsharp-mask amount from [0.2, 0.8];
    value and saturation scales from [0.9, 1.1].
    """
    low, high = pair
    _require(low, Domain.SRGB)
    _require(high, Domain.SRGB)
    a, b = augment_arrays(low.data, high.data, rng)
    return Image(a), Image(b)
