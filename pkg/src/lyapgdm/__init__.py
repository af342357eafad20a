"""Lyapunov drift-plus-penalty optimization for UAV data collection,
solved with a diffusion-policy DDPG agent plus conventional baselines."""

from .config import ExperimentConfig, RunConfig, parse_config, serialize_config
from .diffusion import DiffusionConfig, NoiseSchedule, make_schedule
from .env import Action, ConfigError, EnvConfig, EnvState
from .lyapunov import (
    DppWeights,
    VirtualQueueBank,
    drift_plus_penalty,
    lyapunov_drift,
    lyapunov_value,
    reward_from_dpp,
    virtual_queue_update,
)
from .trainer import TrainerConfig, train_run

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ConfigError",
    "DiffusionConfig",
    "DppWeights",
    "EnvConfig",
    "EnvState",
    "ExperimentConfig",
    "NoiseSchedule",
    "RunConfig",
    "TrainerConfig",
    "VirtualQueueBank",
    "drift_plus_penalty",
    "lyapunov_drift",
    "lyapunov_value",
    "make_schedule",
    "parse_config",
    "reward_from_dpp",
    "serialize_config",
    "train_run",
    "virtual_queue_update",
    "__version__",
]
