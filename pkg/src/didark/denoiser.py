"""Conditional U-Net denoiser wrapped in EDM preconditioning.

The network sees 12 input channels: the (c_in-scaled) noisy 3-channel target
followed by the 9 conditioning channels.  Tensors are NCHW.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import precond_coefficients
from .errors import ArgumentError, NumericError


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 128
    channel_multipliers: tuple[int, ...] = (2, 2, 2)
    res_blocks_per_resolution: int = 4
    dropout: float = 0.10
    in_channels: int = 12
    out_channels: int = 3
    sigma_embedding_dim: int = 0  # 0 -> base_channels
    sigma_data: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers", tuple(int(m) for m in self.channel_multipliers))
        if self.base_channels < 1 or self.res_blocks_per_resolution < 1 or not self.channel_multipliers:
            raise ArgumentError("base_channels, res blocks and multipliers must be positive")
        if self.in_channels != self.out_channels + 9:
            raise ArgumentError("in_channels must be out_channels + 9 conditioning channels")
        if not 0.0 <= self.dropout < 1.0:
            raise ArgumentError("dropout must lie in [0, 1)")
        for c in self.level_channels:
            if c % 4:
                raise ArgumentError(f"level width {c} must be divisible by 4 for group norm")
        if self.embedding_dim % 2:
            raise ArgumentError("sigma embedding dim must be even")

    @property
    def level_channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_multipliers]

    @property
    def embedding_dim(self) -> int:
        return self.sigma_embedding_dim or self.base_channels

    @property
    def min_spatial_divisor(self) -> int:
        return 2 ** (len(self.channel_multipliers) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d


PAPER_DENOISER = DenoiserConfig()
DESK_DENOISER = DenoiserConfig(base_channels=32, res_blocks_per_resolution=1)


def group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(32, channels // 4), channels, eps=1e-6)


class PositionalEmbedding(nn.Module):
    def __init__(self, dim: int, max_positions: int = 10000):
        super().__init__()
        freqs = (1.0 / max_positions) ** (torch.arange(dim // 2, dtype=torch.float64) / (dim // 2))
        self.register_buffer("freqs", freqs.float(), persistent=False)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        a = t[:, None] * self.freqs.to(t.dtype)[None, :]
        return torch.cat([a.cos(), a.sin()], dim=1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int, dropout: float):
        super().__init__()
        self.norm0 = group_norm(cin)
        self.conv0 = nn.Conv2d(cin, cout, 3, padding=1)
        self.affine = nn.Linear(emb_dim, cout)
        self.norm1 = group_norm(cout)
        self.dropout = nn.Dropout(dropout)
        self.conv1 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x, emb):
        h = self.conv0(F.silu(self.norm0(x)))
        h = h + self.affine(emb)[:, :, None, None]
        h = self.conv1(self.dropout(F.silu(self.norm1(h))))
        s = x if self.skip is None else self.skip(x)
        return (h + s) * math.sqrt(0.5)


class UNet(nn.Module):
    """Encoder/decoder with one skip per resolution level."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.level_channels
        e = cfg.embedding_dim
        self.embed = PositionalEmbedding(e)
        self.map0 = nn.Linear(e, 4 * e)
        self.map1 = nn.Linear(4 * e, 4 * e)
        self.conv_in = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)
        self.down = nn.ModuleList()
        c = ch[0]
        for width in ch:
            blocks = nn.ModuleList()
            for _ in range(cfg.res_blocks_per_resolution):
                blocks.append(ResBlock(c, width, 4 * e, cfg.dropout))
                c = width
            self.down.append(blocks)
        self.up = nn.ModuleList()
        for level in reversed(range(len(ch))):
            blocks = nn.ModuleList()
            for j in range(cfg.res_blocks_per_resolution):
                cin = c + ch[level] if j == 0 else ch[level]
                blocks.append(ResBlock(cin, ch[level], 4 * e, cfg.dropout))
                c = ch[level]
            self.up.append(blocks)
        self.norm_out = group_norm(c)
        self.conv_out = nn.Conv2d(c, cfg.out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, c_noise: torch.Tensor) -> torch.Tensor:
        emb = F.silu(self.map1(F.silu(self.map0(self.embed(c_noise)))))
        h = self.conv_in(x)
        skips = []
        last = len(self.down) - 1
        for level, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            if level < last:
                h = F.avg_pool2d(h, 2)
        for j, blocks in enumerate(self.up):
            if j > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = torch.cat([h, skips[last - j]], dim=1)
            for block in blocks:
                h = block(h, emb)
        return self.conv_out(F.silu(self.norm_out(h)))


class Denoiser(nn.Module):
    """D(x; sigma) = c_skip x + c_out F(c_in x, cond, c_noise)."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.net = UNet(cfg)

    def forward(self, noisy: torch.Tensor, cond: torch.Tensor, sigma) -> torch.Tensor:
        n, c, h, w = noisy.shape
        if c != self.cfg.out_channels or cond.shape != (n, self.cfg.in_channels - c, h, w):
            raise ArgumentError(f"bad input shapes noisy={tuple(noisy.shape)} cond={tuple(cond.shape)}")
        d = self.cfg.min_spatial_divisor
        if h % d or w % d:
            raise ArgumentError(f"spatial size {h}x{w} must be divisible by {d}")
        sigma = torch.as_tensor(sigma, dtype=noisy.dtype).reshape(-1)
        if sigma.numel() == 1:
            sigma = sigma.expand(n)
        if (sigma <= 0).any():
            raise ArgumentError("sigma must be positive")
        c_skip, c_out, c_in, c_noise = precond_coefficients(sigma, self.cfg.sigma_data)
        f = self.net(torch.cat([c_in[:, None, None, None] * noisy, cond], dim=1), c_noise)
        return c_skip[:, None, None, None] * noisy + c_out[:, None, None, None] * f


def init_params(cfg: DenoiserConfig, seed: int = 0) -> Denoiser:
    """Build a denoiser with fan-in scaled weights and a zeroed output projection."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Denoiser(cfg)
    nn.init.zeros_(model.net.conv_out.weight)
    nn.init.zeros_(model.net.conv_out.bias)
    return model


def param_shapes(cfg: DenoiserConfig) -> "OrderedDict[str, tuple[int, ...]]":
    with torch.device("meta"):
        model = Denoiser(cfg)
    return OrderedDict((k, tuple(p.shape)) for k, p in model.named_parameters())


def get_params(model: nn.Module) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, p.detach().cpu().numpy().copy()) for k, p in model.named_parameters())


def set_params(model: nn.Module, params: dict[str, np.ndarray]) -> None:
    named = dict(model.named_parameters())
    if set(named) != set(params):
        raise ArgumentError("parameter names do not match the model")
    with torch.no_grad():
        for k, p in named.items():
            v = torch.as_tensor(np.asarray(params[k]))
            if tuple(v.shape) != tuple(p.shape):
                raise ArgumentError(f"shape mismatch for {k}: {tuple(v.shape)} vs {tuple(p.shape)}")
            p.copy_(v.to(p.dtype))


@torch.no_grad()
def denoise(model: Denoiser, noisy: torch.Tensor, cond: torch.Tensor, sigma) -> torch.Tensor:
    """Evaluation-mode forward pass; raises on non-finite output."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = model(noisy.to(dtype), cond.to(dtype), sigma)
    model.train(was_training)
    if not torch.isfinite(out).all():
        raise NumericError("denoiser produced non-finite output")
    return out


LossFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class GradResult:
    loss: float
    grads: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def forward_with_grad(
    model: Denoiser,
    noisy: torch.Tensor,
    cond: torch.Tensor,
    target: torch.Tensor,
    sigma: torch.Tensor,
    loss_fn: LossFn,
    scale: float = 1.0,
) -> GradResult:
    """Training-mode forward pass, scalar loss, and reverse-mode parameter gradients.

    ``loss_fn(pred, target, sigma)`` returns a scalar tensor.
    """
    model.train()
    model.zero_grad(set_to_none=True)
    pred = model(noisy, cond, sigma)
    loss = scale * loss_fn(pred, target, sigma)
    loss.backward()
    grads = OrderedDict()
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        grads[name] = g.detach().cpu().numpy().copy()
    return GradResult(float(loss.detach()), grads)
