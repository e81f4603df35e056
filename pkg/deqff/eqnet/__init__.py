from .blocks import (
    AttentionLayer,
    Embedding,
    EnergyHead,
    EquivariantLinear,
    EquivariantRMSNorm,
    ForceHead,
    Gate,
    RadialMLP,
    attention_weights,
)
from .config import LayerConfig
from .model import ForceField, GraphContext, explicit_forward

__all__ = [
    "AttentionLayer",
    "Embedding",
    "EnergyHead",
    "EquivariantLinear",
    "EquivariantRMSNorm",
    "ForceField",
    "ForceHead",
    "Gate",
    "GraphContext",
    "LayerConfig",
    "RadialMLP",
    "attention_weights",
    "explicit_forward",
]
