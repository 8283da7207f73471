"""Flat JSON run configuration mapped onto the denoiser, diffusion and training configs."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .diffusion import DiffusionConfig
from .errors import ArgumentError
from .train import TrainConfig

SECTIONS = (DenoiserConfig, DiffusionConfig, TrainConfig)


def known_keys() -> set[str]:
    return {f.name for cls in SECTIONS for f in fields(cls)}


def parse_run_config(values: dict) -> tuple[DenoiserConfig, DiffusionConfig, TrainConfig]:
    """Split one flat mapping into the three configs.

    Keys present in several configs (``sigma_data``) apply to all of them.
    Missing keys keep their defaults; unknown keys raise.
    """
    if not isinstance(values, dict):
        raise ArgumentError("config must be a JSON object of key/value pairs")
    unknown = sorted(set(values) - known_keys())
    if unknown:
        raise ArgumentError(f"unknown config keys: {', '.join(unknown)}")
    built = []
    for cls in SECTIONS:
        names = {f.name for f in fields(cls)}
        try:
            built.append(cls(**{k: v for k, v in values.items() if k in names}))
        except TypeError as exc:
            raise ArgumentError(f"bad value in config: {exc}") from exc
    return tuple(built)


def load_run_config(path: str | Path) -> tuple[DenoiserConfig, DiffusionConfig, TrainConfig]:
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: not valid JSON ({exc})") from exc
    return parse_run_config(values)
