"""EDM schedules, preconditioning coefficients, loss weight, Heun sampler and ILVR."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ArgumentError, NumericError


@dataclass(frozen=True)
class DiffusionConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    num_steps: int = 18
    p_mean: float = -1.2
    p_std: float = 1.2
    ilvr_steps: int = 6

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ArgumentError("need 0 < sigma_min < sigma_max")
        if self.num_steps < 2:
            raise ArgumentError("num_steps must be >= 2")
        if not 0 <= self.ilvr_steps <= self.num_steps:
            raise ArgumentError("ilvr_steps must lie in [0, num_steps]")
        if self.sigma_data <= 0 or self.p_std <= 0:
            raise ArgumentError("sigma_data and p_std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def sigma_steps(config: DiffusionConfig) -> np.ndarray:
    """rho-spaced noise levels sigma_0 > ... > sigma_{N-1}, followed by 0."""
    n = config.num_steps
    inv = 1.0 / config.rho
    i = np.arange(n, dtype=np.float64)
    s = (config.sigma_max**inv + i / (n - 1) * (config.sigma_min**inv - config.sigma_max**inv)) ** config.rho
    s[0], s[-1] = config.sigma_max, config.sigma_min
    return np.append(s, 0.0)


def sample_training_sigma(config: DiffusionConfig, rng: np.random.Generator, size=None):
    z = rng.standard_normal(size)
    return np.exp(config.p_mean + config.p_std * z)


def loss_weight(sigma, sigma_data: float = 0.5):
    sigma = np.asarray(sigma, dtype=np.float64) if not torch.is_tensor(sigma) else sigma
    if (sigma <= 0).any():
        raise ArgumentError("loss weight needs sigma > 0")
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def precond_coefficients(sigma, sigma_data: float = 0.5):
    """(c_skip, c_out, c_in, c_noise) of the EDM parameterization."""
    lib = torch if torch.is_tensor(sigma) else np
    sigma2 = sigma**2
    sd2 = sigma_data**2
    c_skip = sd2 / (sigma2 + sd2)
    c_out = sigma * sigma_data / lib.sqrt(sigma2 + sd2)
    c_in = 1.0 / lib.sqrt(sigma2 + sd2)
    c_noise = lib.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


# --- sampling ---------------------------------------------------------------

Generators = torch.Generator | Sequence[torch.Generator]


def randn(shape: Sequence[int], gens: Generators, dtype=torch.float64) -> torch.Tensor:
    """Standard normal draws, one generator per leading-axis row when a list is given."""
    if isinstance(gens, torch.Generator):
        return torch.randn(tuple(shape), generator=gens, dtype=dtype)
    if len(gens) != shape[0]:
        raise ArgumentError(f"{len(gens)} generators for batch of {shape[0]}")
    return torch.stack([torch.randn(tuple(shape[1:]), generator=g, dtype=dtype) for g in gens])


def lowpass(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Box-down then replicate-up on NCHW tensors; idempotent."""
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ArgumentError(f"{h}x{w} not divisible by low-pass factor {factor}")
    small = F.avg_pool2d(x, factor)
    return small.repeat_interleave(factor, dim=-2).repeat_interleave(factor, dim=-1)


def ilvr_blend(x: torch.Tensor, reference: torch.Tensor, sigma: float, gens: Generators,
               factor: int = 2) -> tuple[torch.Tensor, torch.Tensor]:
    """Swap the low band of ``x`` for that of the reference noised to ``sigma``.

    Returns the blended state and the noised reference it was pinned to.
    """
    if x.shape != reference.shape:
        raise ArgumentError(f"state {tuple(x.shape)} and reference {tuple(reference.shape)} differ")
    ref = reference.to(x.dtype)
    if sigma > 0:
        ref = ref + sigma * randn(x.shape, gens, dtype=x.dtype)
    return x - lowpass(x, factor) + lowpass(ref, factor), ref


@dataclass
class IlvrGuide:
    """Low-frequency guidance toward ``reference`` for the first ``steps`` sampler steps.

    When ``record`` is set, ``deviations`` collects the max-abs gap between
    the low bands of the state and the noised reference after each blend.
    """

    reference: torch.Tensor
    steps: int
    gens: Generators
    factor: int = 2
    record: bool = False
    deviations: list[float] = field(default_factory=list)

    def __call__(self, x: torch.Tensor, sigma: float) -> torch.Tensor:
        out, ref = ilvr_blend(x, self.reference, sigma, self.gens, self.factor)
        if self.record:
            gap = (lowpass(out, self.factor) - lowpass(ref, self.factor)).abs().max()
            self.deviations.append(float(gap))
        return out


def heun_sample(
    denoise_fn: Callable[[torch.Tensor, float], torch.Tensor],
    shape: Sequence[int],
    config: DiffusionConfig,
    gens: Generators,
    guidance: IlvrGuide | None = None,
) -> torch.Tensor:
    """Deterministic 2nd-order sampler with zero churn.

    ``denoise_fn(x, sigma)`` returns D(x; sigma) for the fixed conditioning.
    The state is kept in float64.
    """
    sigmas = sigma_steps(config)
    x = randn(shape, gens) * sigmas[0]
    for i in range(config.num_steps):
        s_cur, s_next = float(sigmas[i]), float(sigmas[i + 1])
        d_cur = (x - denoise_fn(x, s_cur).to(x.dtype)) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            d_next = (x_next - denoise_fn(x_next, s_next).to(x.dtype)) / s_next
            x_next = x + (s_next - s_cur) * (0.5 * d_cur + 0.5 * d_next)
        if guidance is not None and i < guidance.steps:
            x_next = guidance(x_next, s_next)
        if not torch.isfinite(x_next).all():
            raise NumericError(f"non-finite sampler state at step {i}")
        x = x_next
    return x
