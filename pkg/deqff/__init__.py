from .config import ConfigError, RunConfig, SimConfig, load_config, save_config
from .deq import SolverConfig, deq_forward
from .eqnet import ForceField, LayerConfig
from .graph import AtomicSystem, GraphConfig

__all__ = [
    "AtomicSystem",
    "ConfigError",
    "ForceField",
    "GraphConfig",
    "LayerConfig",
    "RunConfig",
    "SimConfig",
    "SolverConfig",
    "deq_forward",
    "load_config",
    "save_config",
]
