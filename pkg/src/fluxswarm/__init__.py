"""Pulsatile channel flow with an immersed micro-robot swarm, and a multi-objective PPO trainer."""

from .env import EnvConfig, EpisodeStatus, FlowConfig, Status, SwarmEnv, VectorEnv
from .estimator import BaselinePolicy, SwarmPPO
from .exceptions import (CourantViolation, FieldBlowup, FluxSwarmError, NonFiniteGradient, ParseError,
                         SolverDivergence, StabilityViolation, ValidationError)
from .flow import FlowSolver, FluidProps, GridSpec, InflowWaveform
from .ppo import PPOConfig, Trainer, compute_gae, evaluate, pcgrad_merge
from .swarm import SwarmConfig

__version__ = "0.1.0"

__all__ = [
    "BaselinePolicy", "CourantViolation", "EnvConfig", "EpisodeStatus", "FieldBlowup", "FlowConfig",
    "FlowSolver", "FluidProps", "FluxSwarmError", "GridSpec", "InflowWaveform", "NonFiniteGradient",
    "PPOConfig", "ParseError", "SolverDivergence", "StabilityViolation", "Status", "SwarmConfig",
    "SwarmEnv", "SwarmPPO", "Trainer", "ValidationError", "VectorEnv", "compute_gae", "evaluate",
    "pcgrad_merge",
]
