"""Image container, color transforms, resampling, and patch grids.

All images are float64 arrays of shape (H, W, 3).  Quantization to 8 or 16
bits only happens in :func:`read_png` / :func:`write_png`.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from matplotlib import colors as mcolors

from .errors import ArgumentError, DomainError

PATCH_SIZE = 32


class Domain(str, enum.Enum):
    SRGB = "srgb"
    LINEAR = "linear"
    NORMALIZED = "normalized"
    HSV = "hsv"


_RANGES = {
    Domain.SRGB: (0.0, 1.0),
    Domain.LINEAR: (0.0, 1.0),
    Domain.NORMALIZED: (-1.0, 1.0),
    Domain.HSV: (0.0, 1.0),
}


@dataclass(frozen=True)
class Image:
    """An H x W x 3 image tagged with its color domain.

    Values are clamped to the domain's range on construction, so an
    ``Image`` is always valid for its tag.
    """

    data: np.ndarray
    domain: Domain = Domain.SRGB

    def __post_init__(self):
        domain = Domain(self.domain)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ArgumentError(f"expected an (H, W, 3) array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("image contains non-finite values")
        lo, hi = _RANGES[domain]
        data = np.clip(data, lo, hi)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "domain", domain)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Image":
        return Image(data, self.domain)


def _require(img: Image, domain: Domain) -> None:
    if not isinstance(img, Image):
        raise DomainError(f"expected an Image tagged {domain.value}, got {type(img).__name__}")
    if img.domain != domain:
        raise DomainError(f"expected {domain.value} image, got {img.domain.value}")


# --- color transforms -------------------------------------------------------


def srgb_decode(c: np.ndarray) -> np.ndarray:
    """IEC 61966-2-1 inverse transfer on raw values in [0, 1]; keeps float32 input as float32."""
    c = np.asarray(c)
    if c.dtype != np.float32:
        c = c.astype(np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4).astype(c.dtype, copy=False)


def srgb_encode(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, None)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def srgb_to_linear(img: Image) -> Image:
    _require(img, Domain.SRGB)
    return Image(srgb_decode(img.data), Domain.LINEAR)


def linear_to_srgb(img: Image) -> Image:
    _require(img, Domain.LINEAR)
    return Image(srgb_encode(img.data), Domain.SRGB)


def rgb_to_hsv(img: Image) -> Image:
    """Hexcone HSV with hue expressed as a fraction of a turn in [0, 1)."""
    _require(img, Domain.SRGB)
    return Image(mcolors.rgb_to_hsv(img.data), Domain.HSV)


def hsv_to_rgb(img: Image) -> Image:
    _require(img, Domain.HSV)
    return Image(mcolors.hsv_to_rgb(img.data), Domain.SRGB)


def luma(data: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of an (..., 3) array."""
    return data @ np.array([0.2126, 0.7152, 0.0722])


# --- resampling -------------------------------------------------------------


@functools.lru_cache(maxsize=128)
def _resample_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix along one axis."""
    w = np.zeros((n_out, n_in))
    if n_in == n_out:
        return np.eye(n_in)
    scale = n_in / n_out
    if n_out < n_in:
        if n_in % n_out == 0:
            f = n_in // n_out
            for i in range(n_out):
                w[i, i * f:(i + 1) * f] = 1.0 / f
        else:
            # triangle filter stretched by the scale factor (anti-aliased bilinear)
            for i in range(n_out):
                center = (i + 0.5) * scale - 0.5
                j = np.arange(n_in)
                k = np.maximum(0.0, 1.0 - np.abs(j - center) / scale)
                w[i] = k / k.sum()
    elif method == "nearest":
        for i in range(n_out):
            w[i, min(int((i + 0.5) * scale), n_in - 1)] = 1.0
    else:
        for i in range(n_out):
            x = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
            i0 = int(np.floor(x))
            i1 = min(i0 + 1, n_in - 1)
            t = x - i0
            w[i, i0] += 1.0 - t
            w[i, i1] += t
    w.setflags(write=False)
    return w


def _taps(n_in: int, n_out: int, method: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-tap (index0, index1, weight1) form of the upsampling matrix."""
    scale = n_in / n_out
    if method == "nearest":
        i0 = np.minimum(((np.arange(n_out) + 0.5) * scale).astype(int), n_in - 1)
        return i0, i0, np.zeros(n_out)
    x = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def _resample_axis(data: np.ndarray, n_out: int, axis: int, method: str) -> np.ndarray:
    n_in = data.shape[axis]
    if n_in == n_out:
        return data
    if n_out < n_in and n_in % n_out == 0:
        f = n_in // n_out
        shape = data.shape[:axis] + (n_out, f) + data.shape[axis + 1:]
        return data.reshape(shape).mean(axis=axis + 1)
    if n_out > n_in:
        i0, i1, t = _taps(n_in, n_out, method)
        t = t.astype(data.dtype)
        a = np.take(data, i0, axis=axis)
        if method == "nearest":
            return a
        b = np.take(data, i1, axis=axis)
        t = t.reshape((-1,) + (1,) * (data.ndim - axis - 1))
        return a + t * (b - a)
    w = _resample_matrix(n_in, n_out, method).astype(data.dtype)
    return np.moveaxis(np.tensordot(w, data, axes=([1], [axis])), 0, axis)


def resample_array(
    data: np.ndarray, target: int | tuple[int, int], direction: str, method: str = "bilinear"
) -> np.ndarray:
    """Resample the two leading axes of ``data`` to ``target``.

    Downsampling box-averages over integral factors and uses a stretched
    triangle filter otherwise.  Upsampling is bilinear with half-pixel
    centers and edge clamping, or pixel replication with ``method="nearest"``.
    """
    if direction not in ("down", "up"):
        raise ArgumentError(f"direction must be 'down' or 'up', got {direction!r}")
    if method not in ("bilinear", "nearest"):
        raise ArgumentError(f"unknown method {method!r}")
    th, tw = (target, target) if np.isscalar(target) else target
    th, tw = int(th), int(tw)
    h, w = data.shape[:2]
    if th < 1 or tw < 1:
        raise ArgumentError("target size must be >= 1")
    if direction == "down" and (th > h or tw > w):
        raise ArgumentError(f"cannot downsample {h}x{w} to larger {th}x{tw}")
    if direction == "up" and (th < h or tw < w):
        raise ArgumentError(f"cannot upsample {h}x{w} to smaller {th}x{tw}")
    data = np.asarray(data)
    if data.dtype not in (np.float32, np.float64):
        data = data.astype(np.float64)
    out = _resample_axis(data, th, 0, method)
    return _resample_axis(out, tw, 1, method)


def resample_matrix(n_in: int, n_out: int, method: str = "bilinear") -> np.ndarray:
    """Dense per-axis interpolation matrix; ``resample_array`` applies it separably."""
    return _resample_matrix(n_in, n_out, method)


def resample(img: Image, target: int | tuple[int, int], direction: str, method: str = "bilinear") -> Image:
    return img.with_data(resample_array(img.data, target, direction, method))


def lowpass_array(data: np.ndarray, factor: int = 2) -> np.ndarray:
    """Box-down then replicate-up by ``factor``: the projection onto block-constant images."""
    h, w = data.shape[:2]
    if h % factor or w % factor:
        raise ArgumentError(f"{h}x{w} not divisible by low-pass factor {factor}")
    small = resample_array(data, (h // factor, w // factor), "down")
    return resample_array(small, (h, w), "up", method="nearest")


# --- cropping and patch grids ----------------------------------------------


def crop_origin(height: int, width: int, size: int) -> tuple[int, int]:
    return (height - size) // 2, (width - size) // 2


def center_crop(img: Image, size: int = 256) -> Image:
    if size < 1 or size > min(img.height, img.width):
        raise ArgumentError(f"crop size {size} does not fit a {img.height}x{img.width} image")
    r, c = crop_origin(img.height, img.width, size)
    return img.with_data(img.data[r:r + size, c:c + size])


@dataclass
class PatchGrid:
    """Row-major, non-overlapping tiling of an image into square patches.

    ``patches`` has shape (M, p, p, C).  ``domain`` is set when the grid was
    cut from an :class:`Image`, in which case :func:`stitch` returns one.
    """

    patches: np.ndarray
    rows: int
    cols: int
    patch_size: int = PATCH_SIZE
    domain: Domain | None = None
    origins: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.origins:
            p = self.patch_size
            self.origins = [(r * p, c * p) for r in range(self.rows) for c in range(self.cols)]

    def __len__(self) -> int:
        return len(self.patches)


def patchify(img: Image | np.ndarray, patch_size: int = PATCH_SIZE) -> PatchGrid:
    domain = img.domain if isinstance(img, Image) else None
    data = img.data if isinstance(img, Image) else np.asarray(img)
    h, w, ch = data.shape
    if h % patch_size or w % patch_size:
        raise ArgumentError(f"{h}x{w} is not a multiple of the {patch_size}px patch size")
    rows, cols = h // patch_size, w // patch_size
    patches = (
        data.reshape(rows, patch_size, cols, patch_size, ch)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, patch_size, patch_size, ch)
        .copy()
    )
    return PatchGrid(patches, rows, cols, patch_size, domain)


def stitch(grid: PatchGrid) -> Image | np.ndarray:
    p = grid.patch_size
    patches = np.asarray(grid.patches)
    if patches.shape[0] != grid.rows * grid.cols or patches.shape[1:3] != (p, p):
        raise ArgumentError(
            f"incomplete grid: {patches.shape[0]} patches for {grid.rows}x{grid.cols} of size {p}"
        )
    ch = patches.shape[3]
    data = (
        patches.reshape(grid.rows, grid.cols, p, p, ch)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid.rows * p, grid.cols * p, ch)
    )
    if grid.domain is not None:
        return Image(data, grid.domain)
    return data


# --- file I/O ---------------------------------------------------------------


def read_png(path: str | Path) -> Image:
    """Read an 8- or 16-bit RGB(A) or gray PNG as an sRGB image."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"cannot read image {path}")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    else:
        raw = raw[:, :, 2::-1]  # BGR(A) -> RGB
    return Image(raw.astype(np.float64) / scale, Domain.SRGB)


def write_png(img: Image, path: str | Path, bits: int = 8) -> None:
    if img.domain != Domain.SRGB:
        raise DomainError("only srgb images are written to PNG; convert first")
    if bits not in (8, 16):
        raise ArgumentError("bits must be 8 or 16")
    peak, dtype = (255, np.uint8) if bits == 8 else (65535, np.uint16)
    q = np.round(img.data * peak).astype(dtype)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[:, :, ::-1])):
        raise OSError(f"cannot write image {path}")
