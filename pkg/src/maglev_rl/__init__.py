"""Gap control of a single levitation magnet: plant model, linear baselines,
numpy actor-critic learners (DDPG, TD3) and an experiment harness."""

from .plant import PlantParams, PlantState, equilibrium, linearize
from .env import CostWeights, EpisodeConfig, MaglevEnv
from .agents import Agent, AgentConfig, Policy, ReplayBuffer
from .config import RunConfig, load_config

__version__ = "0.1.0"

__all__ = ["PlantParams", "PlantState", "equilibrium", "linearize", "CostWeights",
           "EpisodeConfig", "MaglevEnv", "Agent", "AgentConfig", "Policy", "ReplayBuffer",
           "RunConfig", "load_config"]
