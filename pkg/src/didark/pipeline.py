"""Multi-scale training examples and cascaded patch inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .denoiser import Denoiser, denoise
from .diffusion import DiffusionConfig, IlvrGuide, heun_sample
from .errors import ArgumentError, NumericError
from .imagecore import (
    PATCH_SIZE,
    Domain,
    Image,
    PatchGrid,
    center_crop,
    linear_to_srgb,
    patchify,
    resample,
    resample_array,
    srgb_to_linear,
    stitch,
)
from .normalize import NormStats, tail_denormalize, tail_normalize

log = logging.getLogger(__name__)

NUM_SCALES = 4
FULL_SIZE = 256


def gamma(s: int) -> int:
    """Operating resolution of scale ``s``: 32, 64, 128 or 256."""
    if not isinstance(s, (int, np.integer)) or not 0 <= s < NUM_SCALES:
        raise ArgumentError(f"scale index must be an integer in 0..3, got {s!r}")
    return 2 ** (int(s) + 5)


def _array(img) -> np.ndarray:
    return img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def down(x: np.ndarray, k: int) -> np.ndarray:
    return resample_array(x, k, "down")


def up(x: np.ndarray, k: int) -> np.ndarray:
    return resample_array(x, k, "up")


class TrainingExample(NamedTuple):
    cond: np.ndarray  # (32, 32, 9)
    target: np.ndarray  # (32, 32, 3)
    scale: int
    origin: tuple[int, int]
    eta_sigma: float


def build_training_example(x, y, s: int, eta_sigma_max: float, rng: np.random.Generator) -> TrainingExample:
    """Assemble one (conditioning, target) pair at scale ``s``.

    ``x`` and ``y`` are aligned 256x256 normalized-domain low/well-lit images.
    The target is the well-lit image at the scale's resolution, cropped with
    the same window as the conditioning stack.
    """
    x, y = _array(x), _array(y)
    if x.shape != (FULL_SIZE, FULL_SIZE, 3) or y.shape != x.shape:
        raise ArgumentError(f"expected two {FULL_SIZE}x{FULL_SIZE}x3 images, got {x.shape} and {y.shape}")
    if eta_sigma_max < 0:
        raise ArgumentError("eta_sigma_max must be >= 0")
    k = gamma(s)
    p = PATCH_SIZE
    if s == 0:
        cx = down(x, p)
        return TrainingExample(np.concatenate([cx, cx, cx], axis=2), down(y, p), 0, (0, 0), 0.0)
    r, c = (int(v) for v in rng.integers(0, k - p + 1, size=2))
    eta_sigma = float(rng.uniform(0.0, eta_sigma_max)) if eta_sigma_max > 0 else 0.0
    eta = eta_sigma * rng.standard_normal((p, p, 3))
    win = (slice(r, r + p), slice(c, c + p))
    cx = down(x, k)[win]
    cy1 = up(down(y, gamma(s - 1)), k)[win] + eta
    cy2 = up(down(y, p), k)[win] + eta
    target = down(y, k)[win]
    return TrainingExample(np.concatenate([cx, cy1, cy2], axis=2), target, s, (r, c), eta_sigma)


def build_inference_conditioning(x, y_prev, y_first, s: int) -> PatchGrid:
    """Channel-stack [c_x, c_y1, c_y2] at scale ``s`` and cut it into 32x32 patches."""
    x, y_prev, y_first = _array(x), _array(y_prev), _array(y_first)
    if s < 1:
        raise ArgumentError("inference conditioning is built for scales 1..3; scale 0 uses triplicated input")
    k = gamma(s)
    if x.shape[:2] != (FULL_SIZE, FULL_SIZE):
        raise ArgumentError(f"low-light input must be {FULL_SIZE}x{FULL_SIZE}, got {x.shape[:2]}")
    if y_prev.shape[:2] != (gamma(s - 1),) * 2:
        raise ArgumentError(f"previous prediction must be {gamma(s - 1)}px, got {y_prev.shape[:2]}")
    if y_first.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
        raise ArgumentError(f"first estimate must be {PATCH_SIZE}px, got {y_first.shape[:2]}")
    stack = np.concatenate([down(x, k), up(y_prev, k), up(y_first, k)], axis=2)
    return patchify(stack)


# --- inference --------------------------------------------------------------


def patch_seed(seed: int, sample: int, s: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, sample, s, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _to_nchw(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def _to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def sample_patches(model: Denoiser, cond: np.ndarray, config: DiffusionConfig, gens: list[torch.Generator],
                   ilvr: bool = False, record: list[float] | None = None) -> np.ndarray:
    """Run the sampler on a batch of (M, 32, 32, 9) conditioning patches.

    With ``ilvr`` the reference for each patch is its own c_y1 channels.
    """
    c = _to_nchw(cond).to(torch.float32)

    def fn(x, sigma):
        return denoise(model, x, c, sigma)

    guide = None
    if ilvr and config.ilvr_steps > 0:
        ref = _to_nchw(cond[..., 3:6]).to(torch.float64)
        guide = IlvrGuide(ref, config.ilvr_steps, gens, record=record is not None)
    out = heun_sample(fn, (len(cond), 3, PATCH_SIZE, PATCH_SIZE), config, gens, guide)
    if record is not None and guide is not None:
        record.extend(guide.deviations)
    return _to_nhwc(out)


def prepare_input(img: Image, size: int = FULL_SIZE) -> Image:
    """Center-crop to ``size``, or crop to a square and upsample when the image is smaller."""
    if min(img.height, img.width) >= size:
        return center_crop(img, size)
    side = min(img.height, img.width)
    return resample(center_crop(img, side), size, "up")


@dataclass
class Cascade:
    """Trained model plus everything needed to run the four-scale reconstruction."""

    model: Denoiser
    diffusion: DiffusionConfig
    lowlight: NormStats
    welllit: NormStats
    batch_size: int = 64

    def _sample(self, cond: np.ndarray, seed: int, sample: int, s: int, ilvr: bool,
                record: list[float] | None) -> np.ndarray:
        out = []
        for start in range(0, len(cond), self.batch_size):
            chunk = cond[start:start + self.batch_size]
            gens = [torch.Generator().manual_seed(patch_seed(seed, sample, s, start + i)) for i in range(len(chunk))]
            try:
                out.append(sample_patches(self.model, chunk, self.diffusion, gens, ilvr, record))
            except NumericError as exc:
                raise NumericError(f"scale {s}, patches {start}..{start + len(chunk) - 1}: {exc}") from exc
        return np.concatenate(out, axis=0)

    def reconstruct_normalized(self, x: np.ndarray, seed: int, sample: int = 0, ilvr: bool = True,
                               record: list[float] | None = None) -> list[np.ndarray]:
        """All four scale predictions (32..256) for one normalized 256x256 input."""
        p = PATCH_SIZE
        cx = down(x, p)
        y0 = self._sample(np.concatenate([cx, cx, cx], axis=2)[None], seed, sample, 0, False, None)[0]
        y0 = np.clip(y0, -1.0, 1.0)
        preds = [y0]
        for s in range(1, NUM_SCALES):
            grid = build_inference_conditioning(x, preds[-1], y0, s)
            grid.patches = self._sample(grid.patches, seed, sample, s, ilvr, record)
            preds.append(np.clip(stitch(grid), -1.0, 1.0))
        return preds

    def __call__(self, img: Image, seed: int = 0, ilvr: bool = True, samples: int = 1) -> list[Image]:
        if samples < 1:
            raise ArgumentError("samples must be >= 1")
        x = tail_normalize(srgb_to_linear(prepare_input(img)), self.lowlight).data
        outs = []
        for k in range(samples):
            y = self.reconstruct_normalized(x, seed, k, ilvr)[-1]
            outs.append(linear_to_srgb(tail_denormalize(Image(y, Domain.NORMALIZED), self.welllit)))
        return outs


def cascade_infer(img: Image, checkpoint, seed: int = 0, ilvr: bool = True, samples: int = 1) -> list[Image]:
    """Reconstruct a well-lit 256x256 sRGB image (``samples`` of them) from a low-light one."""
    return checkpoint.cascade()(img, seed=seed, ilvr=ilvr, samples=samples)
