"""Configuration, checkpoints, experiment commands and the command line."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig

__all__ = ["CheckpointError", "ConfigError", "ExperimentConfig", "load_checkpoint", "save_checkpoint"]
