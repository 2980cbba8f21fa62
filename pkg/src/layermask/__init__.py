"""Vertical federated learning with secret-shared layer masking against label inference."""

from .config import RunConfig
from .framework import run, sweep_budget

__all__ = ["RunConfig", "run", "sweep_budget"]
__version__ = "0.1.0"
