"""Configuration management for triple-disentangle."""

from .settings import CONFIG_VERSION, DatasetConfig, ExperimentConfig, RunSettings
from .presets import PRESETS, get_preset, preset_names
from .sweep import expand_grid, load_grid

__all__ = [
    "CONFIG_VERSION",
    "DatasetConfig",
    "ExperimentConfig",
    "RunSettings",
    "PRESETS",
    "get_preset",
    "preset_names",
    "expand_grid",
    "load_grid",
]
