from dataclasses import dataclass
from logging import getLogger
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn

from ..graph import AtomicSystem, EdgeList, GraphConfig, build_neighbor_list, envelope, radial_embed
from ..irreps import DTYPE, IrrepsLayout, IrrepsTensor, spherical_harmonics
from .blocks import AttentionLayer, Embedding, EnergyHead, ForceHead, initialize
from .config import LayerConfig

logger = getLogger(__name__)


@dataclass(frozen=True)
class GraphContext:
    """Everything the network reads from the geometry of one system."""

    n_atoms: int
    species: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    sh: IrrepsTensor
    rbf: torch.Tensor
    env: torch.Tensor
    edges: EdgeList

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @classmethod
    def from_system(cls, system: AtomicSystem, graph: GraphConfig, l_max: int) -> "GraphContext":
        edges = build_neighbor_list(system, graph.r_cut, graph.max_neighbors)
        sh_layout = IrrepsLayout(tuple((l, 1) for l in range(l_max + 1)))
        if edges.n_edges:
            unit = edges.r_vec / edges.dist[:, None]
            sh_blocks = [b[:, None, :] for b in spherical_harmonics(l_max, unit, check_norm=False)]
            sh = IrrepsTensor.from_blocks(sh_layout, sh_blocks)
            rbf = torch.from_numpy(radial_embed(edges.dist, graph.basis()))
            env = torch.from_numpy(envelope(edges.dist, graph.r_cut))
        else:
            sh = IrrepsTensor(sh_layout, torch.zeros(0, sh_layout.dim, dtype=DTYPE))
            rbf = torch.zeros(0, graph.num_basis, dtype=DTYPE)
            env = torch.zeros(0, dtype=DTYPE)
        return cls(
            n_atoms=system.n_atoms,
            species=torch.from_numpy(system.atomic_numbers.astype(np.int64)),
            src=torch.from_numpy(edges.src),
            dst=torch.from_numpy(edges.dst),
            sh=sh,
            rbf=rbf,
            env=env,
            edges=edges,
        )


class ForceField(nn.Module):
    """Embedding, a stack of attention layers and the energy/force heads.

    For ``kind = deq`` the stack is the weight-tied map g_theta applied at
    every solver iteration; for ``kind = explicit`` it is run once.
    """

    def __init__(self, layer: LayerConfig, graph: GraphConfig):
        super().__init__()
        self.layer_config = layer
        self.graph_config = graph
        self.layout = layer.layout
        num_basis = graph.num_basis
        self.embedding = Embedding(layer, num_basis)
        self.layers = nn.ModuleList([AttentionLayer(layer, num_basis) for _ in range(layer.num_layers)])
        self.energy_head = EnergyHead(layer)
        self.force_head = ForceHead(layer, num_basis)
        # per-atom energy offset, in eV
        self.register_buffer("energy_shift", torch.zeros((), dtype=DTYPE))
        self.reset_parameters(layer.seed)

    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        initialize(self, generator)

    def prepare(self, system: AtomicSystem) -> GraphContext:
        return GraphContext.from_system(system, self.graph_config, self.layer_config.l_max)

    def embed(self, ctx: GraphContext) -> torch.Tensor:
        return self.embedding(ctx)

    def trunk(
        self, h: torch.Tensor, ctx: GraphContext, keep: Optional[torch.Tensor] = None, depth: Optional[int] = None
    ) -> torch.Tensor:
        for layer in self.layers[: depth or len(self.layers)]:
            h = layer(h, ctx, keep)
        return h

    def heads(self, h: torch.Tensor, ctx: GraphContext) -> Tuple[torch.Tensor, torch.Tensor]:
        energy = self.energy_head(h) + ctx.n_atoms * self.energy_shift
        forces = self.force_head(h, ctx)
        return energy, forces

    def forward(self, system: AtomicSystem) -> Tuple[torch.Tensor, torch.Tensor]:
        return explicit_forward(system, self)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def explicit_forward(
    system: AtomicSystem, model: ForceField, num_layers: Optional[int] = None, ctx: Optional[GraphContext] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """h0 = embed, L sequential attention layers, heads on h^L.

    Returns:
        (E, F): scalar energy (eV) and (N, 3) forces (eV/Å), with autograd
        history
    """
    L = len(model.layers) if num_layers is None else num_layers
    if L < 1:
        raise ValueError(f"Explicit stack needs at least one layer, got L={L}")
    if L > len(model.layers):
        raise ValueError(f"Model holds {len(model.layers)} layers, L={L} requested")
    ctx = ctx if ctx is not None else model.prepare(system)
    h = model.trunk(model.embed(ctx), ctx, depth=L)
    return model.heads(h, ctx)
