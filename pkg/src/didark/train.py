"""Loss composition, the optimization loop, and the checkpoint file format."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, NamedTuple, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .degrade import augment_arrays
from .denoiser import DenoiserConfig, Denoiser, get_params, init_params, param_shapes, set_params
from .diffusion import DiffusionConfig, loss_weight, sample_training_sigma
from .errors import ArgumentError, CheckpointError, NumericError
from .imagecore import Image, srgb_decode
from .normalize import NormStats
from .pipeline import NUM_SCALES, Cascade, build_training_example

log = logging.getLogger(__name__)

MAGIC = b"DIDC"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 8e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 160
    iterations: int = 3000
    lambda_perceptual: float = 5.0
    eta_sigma_max: float = 0.1
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ArgumentError("learning_rate, batch_size and iterations must be positive")
        if self.lambda_perceptual < 0 or self.eta_sigma_max < 0 or self.checkpoint_every < 0:
            raise ArgumentError("lambda_perceptual, eta_sigma_max and checkpoint_every must be >= 0")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ArgumentError("adam_betas must be two values in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


DESK_TRAIN = TrainConfig(batch_size=16)


# --- losses -----------------------------------------------------------------


class Perceptual(Protocol):
    """Per-sample perceptual distance: nonnegative, zero on identical inputs, differentiable."""

    def __call__(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor: ...


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0


def sobel_magnitude(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    c = x.shape[1]
    kx = _SOBEL_X.to(x.dtype)
    k = torch.stack([kx, kx.T])[:, None].repeat(c, 1, 1, 1)
    g = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k, groups=c)
    gx, gy = g[:, 0::2], g[:, 1::2]
    return torch.sqrt(gx**2 + gy**2 + eps)


def sobel_perceptual(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """L1 between Sobel gradient magnitudes at full and half resolution."""
    total = 0.0
    for scale in (1, 2):
        a, b = (pred, target) if scale == 1 else (F.avg_pool2d(pred, 2), F.avg_pool2d(target, 2))
        total = total + (sobel_magnitude(a) - sobel_magnitude(b)).abs().mean(dim=(1, 2, 3))
    return total


class LossComponents(NamedTuple):
    total: torch.Tensor
    edm: torch.Tensor
    mse: torch.Tensor
    perceptual: torch.Tensor


def total_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    sigma: torch.Tensor,
    perceptual: Perceptual | None = sobel_perceptual,
    lambda_perceptual: float = 5.0,
    sigma_data: float = 0.5,
) -> LossComponents:
    """EDM-weighted MSE + plain MSE + weighted perceptual term, batch-averaged."""
    if pred.shape != target.shape:
        raise ArgumentError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    sigma = torch.as_tensor(sigma, dtype=pred.dtype).reshape(-1).expand(pred.shape[0])
    per_sample = ((pred - target) ** 2).mean(dim=(1, 2, 3))
    edm = (loss_weight(sigma, sigma_data) * per_sample).mean()
    mse = per_sample.mean()
    if perceptual is None or lambda_perceptual == 0:
        perc = torch.zeros((), dtype=pred.dtype)
    else:
        perc = perceptual(pred, target).mean()
    return LossComponents(edm + mse + lambda_perceptual * perc, edm, mse, perc)


# --- data -------------------------------------------------------------------


@dataclass
class PairDataset:
    """sRGB 256x256 (low, high) pairs plus the stats that normalize each side.

    Pixel data is kept as float32 for the per-iteration augmentation path.
    """

    pairs: Sequence[tuple[Image, Image]]
    lowlight: NormStats
    welllit: NormStats

    def __post_init__(self):
        self._arrays = [(lo.data.astype(np.float32), hi.data.astype(np.float32)) for lo, hi in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)

    def normalized(self, index: int, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Optionally augment pair ``index``, then linearize and tail-normalize both sides."""
        low, high = self._arrays[index]
        if rng is not None:
            low, high = augment_arrays(low, high, rng)
        x = np.clip(_normalize32(srgb_decode(low), self.lowlight), -1.0, 1.0)
        y = np.clip(_normalize32(srgb_decode(high), self.welllit), -1.0, 1.0)
        return x, y


def _normalize32(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.sqrt(np.sqrt(x)) - np.float32(stats.mu)) * np.float32(0.5 / stats.sigma)


def draw_batch(dataset: PairDataset, diffusion: DiffusionConfig, cfg: TrainConfig, iteration: int):
    """Build the (noisy, cond, target, sigma) tensors of one iteration deterministically."""
    conds, targets, noisy, sigmas, scales = [], [], [], [], []
    for b in range(cfg.batch_size):
        rng = np.random.default_rng([cfg.seed, iteration, b])
        idx = int(rng.integers(len(dataset)))
        x, y = dataset.normalized(idx, rng if cfg.augment else None)
        s = int(rng.integers(NUM_SCALES))
        ex = build_training_example(x, y, s, cfg.eta_sigma_max, rng)
        sigma = float(sample_training_sigma(diffusion, rng))
        n = rng.standard_normal(ex.target.shape)
        conds.append(ex.cond)
        targets.append(ex.target)
        noisy.append(ex.target + sigma * n)
        sigmas.append(sigma)
        scales.append(s)

    def t(a):
        return torch.from_numpy(np.stack(a).transpose(0, 3, 1, 2).astype(np.float32))

    return t(noisy), t(conds), t(targets), torch.tensor(sigmas, dtype=torch.float32), scales


# --- checkpoint -------------------------------------------------------------


@dataclass
class Checkpoint:
    denoiser: DenoiserConfig
    diffusion: DiffusionConfig
    train: TrainConfig
    stats: dict[str, NormStats]
    params: "OrderedDict[str, np.ndarray]"
    iteration: int = 0
    rng_digest: str = ""
    version: int = FORMAT_VERSION

    def build_model(self) -> Denoiser:
        model = init_params(self.denoiser, 0)
        set_params(model, self.params)
        model.eval()
        return model

    def cascade(self, batch_size: int = 64) -> Cascade:
        return Cascade(self.build_model(), self.diffusion, self.stats["lowlight"], self.stats["welllit"], batch_size)


def _header(ckpt: Checkpoint) -> dict:
    return {
        "denoiser": ckpt.denoiser.to_dict(),
        "diffusion": ckpt.diffusion.to_dict(),
        "train": ckpt.train.to_dict(),
        "stats": {k: v.to_dict() for k, v in sorted(ckpt.stats.items())},
        "iteration": ckpt.iteration,
        "rng_digest": ckpt.rng_digest,
        "manifest": [[k, list(v.shape)] for k, v in ckpt.params.items()],
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(header)), header]
    for arr in ckpt.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


def _config(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise CheckpointError(section, f"unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(section, str(exc)) from exc


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("magic", "not a checkpoint file (bad magic bytes)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError("version", f"unsupported format version {version}")
    if 12 + header_len > len(blob):
        raise CheckpointError("header", "truncated config block")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("header", f"unreadable config block: {exc}") from exc
    try:
        denoiser = _config(DenoiserConfig, header["denoiser"], "denoiser")
        diffusion = _config(DiffusionConfig, header["diffusion"], "diffusion")
        train = _config(TrainConfig, header["train"], "train")
        stats = {k: NormStats.from_dict(v) for k, v in header["stats"].items()}
        manifest = [(str(k), tuple(int(n) for n in shape)) for k, shape in header["manifest"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError("header", f"malformed config block: {exc!r}") from exc
    if set(stats) != {"lowlight", "welllit"}:
        raise CheckpointError("stats", f"expected lowlight and welllit stats, got {sorted(stats)}")
    expected = list(param_shapes(denoiser).items())
    if manifest != expected:
        raise CheckpointError("manifest", "parameter manifest does not match the denoiser config")
    offset = 12 + header_len
    total = sum(int(np.prod(shape)) for _, shape in manifest) * 4
    if len(blob) - offset != total:
        raise CheckpointError("payload", f"expected {total} parameter bytes, found {len(blob) - offset}")
    params = OrderedDict()
    for name, shape in manifest:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError("payload", f"non-finite values in {name}")
        params[name] = arr
        offset += 4 * n
    return Checkpoint(denoiser, diffusion, train, stats, params, int(header.get("iteration", 0)),
                      str(header.get("rng_digest", "")), version)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


# --- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[tuple[int, float, float, float, float]] = field(default_factory=list)


def _iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, 0x7EED]).generate_state(1, dtype=np.uint64)[0] >> 1)


def train_loop(
    dataset: PairDataset,
    denoiser_cfg: DenoiserConfig,
    diffusion_cfg: DiffusionConfig,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    perceptual: Perceptual | None = sobel_perceptual,
    progress: Callable[[int, LossComponents], None] | None = None,
) -> TrainResult:
    """Adam on the composite loss over random-scale patches; deterministic given the seed.

    The loss log gets one ``iteration,total,edm,mse,perceptual`` line per step.
    """
    if len(dataset) == 0:
        raise ArgumentError("cannot train on an empty dataset")
    if denoiser_cfg.sigma_data != diffusion_cfg.sigma_data:
        raise ArgumentError("denoiser and diffusion configs disagree on sigma_data")
    model = init_params(denoiser_cfg, train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate, betas=train_cfg.adam_betas)
    stats = {"lowlight": dataset.lowlight, "welllit": dataset.welllit}
    losses = []
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")
        log_file.write("iteration,total,edm,mse,perceptual\n")

    def snapshot(iteration: int) -> Checkpoint:
        digest = hashlib.sha256(torch.get_rng_state().numpy().tobytes()).hexdigest()[:16]
        return Checkpoint(denoiser_cfg, diffusion_cfg, train_cfg, stats, get_params(model), iteration, digest)

    try:
        with torch.random.fork_rng(devices=[]):
            model.train()
            for it in range(train_cfg.iterations):
                torch.manual_seed(_iteration_seed(train_cfg.seed, it))
                noisy, cond, target, sigma, _ = draw_batch(dataset, diffusion_cfg, train_cfg, it)
                pred = model(noisy, cond, sigma)
                comp = total_loss(pred, target, sigma, perceptual, train_cfg.lambda_perceptual,
                                  diffusion_cfg.sigma_data)
                if not torch.isfinite(comp.total):
                    raise NumericError(f"non-finite loss at iteration {it}")
                opt.zero_grad(set_to_none=True)
                comp.total.backward()
                opt.step()
                row = (it, *(float(v.detach()) for v in comp))
                losses.append(row)
                if log_file is not None:
                    log_file.write("%d,%.8g,%.8g,%.8g,%.8g\n" % row)
                if progress is not None:
                    progress(it, comp)
                every = train_cfg.checkpoint_every
                if checkpoint_path is not None and every and (it + 1) % every == 0 and it + 1 < train_cfg.iterations:
                    save_checkpoint(snapshot(it + 1), checkpoint_path)
            ckpt = snapshot(train_cfg.iterations)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return TrainResult(ckpt, losses)
