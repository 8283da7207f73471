"""Low-light image reconstruction with a multi-scale conditional diffusion model."""

from .degrade import DegradeParams, simulate_lowlight
from .denoiser import DESK_DENOISER, PAPER_DENOISER, DenoiserConfig
from .diffusion import DiffusionConfig, heun_sample
from .errors import (
    ArgumentError,
    CheckpointError,
    DidError,
    DomainError,
    FitError,
    IngestionError,
    NumericError,
)
from .imagecore import Domain, Image, patchify, read_png, stitch, write_png
from .normalize import NormStats, fit_stats, tail_denormalize, tail_normalize
from .pipeline import Cascade, cascade_infer, gamma
from .train import DESK_TRAIN, TrainConfig, load_checkpoint, save_checkpoint, train_loop

__version__ = "0.1.0"
