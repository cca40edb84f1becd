"""Seedable simulator of data availability sampling dissemination."""

from .config import InvalidConfig, SimConfig, SweepSpec, derive_seed, expand_sweep, load_config, validate
from .engine import World, build_world, run_to_completion, simulate, step
from .metrics import RunMetrics, theoretical_total

__all__ = [
    "InvalidConfig",
    "RunMetrics",
    "SimConfig",
    "SweepSpec",
    "World",
    "build_world",
    "derive_seed",
    "expand_sweep",
    "load_config",
    "run_to_completion",
    "simulate",
    "step",
    "theoretical_total",
    "validate",
]
