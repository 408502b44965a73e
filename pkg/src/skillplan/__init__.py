"""Skill-conditioned diffusion planning with discrete, language-grounded skill codes."""
from .agent import Agent, build_agent, load_agent
from .config import Config, PlannerConfig, TrainConfig, load_config, parse_config

__all__ = ["Agent", "Config", "PlannerConfig", "TrainConfig", "build_agent", "load_agent",
           "load_config", "parse_config"]
__version__ = "0.1.0"
