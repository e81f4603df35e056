"""
Equivariant building blocks: per-degree linears, RMS norm, gated
nonlinearity, radial MLP, the attention-weighted message-passing layer, the
embedding block and the two output heads.

Node features are flat (N, dim) tensors in the uniform layout
(l = 0..l_max, ``channels`` each); the degree-0 block is the first
``channels`` entries.
"""

import math
from typing import Optional

import torch
from torch import nn

from ..irreps import DTYPE, IrrepsLayout, IrrepsTensor, tensor_product, tensor_product_paths, y1_to_vector
from .config import LayerConfig

RMS_EPS = 1e-10


def uniform_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator, gain: float = 1.0):
    bound = gain * math.sqrt(1.0 / max(fan_in, 1))
    with torch.no_grad():
        tensor.copy_(
            (torch.rand(tensor.shape, generator=generator, dtype=tensor.dtype) * 2.0 - 1.0) * bound
        )


class EquivariantLinear(nn.Module):
    """Channel mixing within each degree; optional bias on degree 0 only."""

    def __init__(self, in_layout: IrrepsLayout, out_layout: IrrepsLayout, bias: bool = False, gain: float = 1.0):
        super().__init__()
        self.in_layout = in_layout
        self.out_layout = out_layout
        self.gain = gain
        in_mul = in_layout.degree_map()
        out_mul = out_layout.degree_map()
        if set(in_mul) != set(out_mul):
            raise ValueError(f"Degree sets differ: {in_layout} vs {out_layout}")
        self.weights = nn.ParameterDict(
            {
                f"l{l}": nn.Parameter(torch.empty(out_mul[l], in_mul[l], dtype=DTYPE))
                for l in sorted(in_mul)
            }
        )
        self.bias = nn.Parameter(torch.empty(out_mul[0], dtype=DTYPE)) if bias and 0 in out_mul else None

    def reset_parameters(self, generator: torch.Generator):
        for w in self.weights.values():
            uniform_(w, w.shape[1], generator, self.gain)
        if self.bias is not None:
            uniform_(self.bias, self.in_layout.degree_map()[0], generator, self.gain)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        blocks = []
        for (l, _), block in zip(self.in_layout.entries, self.in_layout.split(x)):
            out = torch.einsum("oc,...cm->...om", self.weights[f"l{l}"], block)
            if l == 0 and self.bias is not None:
                out = out + self.bias[:, None]
            blocks.append(out)
        return self.out_layout.merge(blocks)


class EquivariantRMSNorm(nn.Module):
    """Per-degree RMS normalization of block norms with per-channel gains."""

    def __init__(self, layout: IrrepsLayout):
        super().__init__()
        self.layout = layout
        self.gains = nn.ParameterDict(
            {f"l{l}": nn.Parameter(torch.ones(mul, dtype=DTYPE)) for l, mul in layout.entries}
        )

    def reset_parameters(self, generator: torch.Generator):
        with torch.no_grad():
            for g in self.gains.values():
                g.fill_(1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        blocks = []
        for (l, _), block in zip(self.layout.entries, self.layout.split(x)):
            ms = block.pow(2).sum(dim=-1).mean(dim=-1) / (2 * l + 1)
            scale = torch.rsqrt(ms + RMS_EPS)
            blocks.append(block * scale[..., None, None] * self.gains[f"l{l}"][:, None])
        return self.layout.merge(blocks)


class Gate(nn.Module):
    """SiLU on scalars; degree>0 blocks scaled by sigmoid of extra scalars."""

    def __init__(self, l_max: int, channels: int):
        super().__init__()
        self.l_max = l_max
        self.channels = channels
        self.in_layout = IrrepsLayout(
            ((0, channels + channels * l_max),) + tuple((l, channels) for l in range(1, l_max + 1))
        )
        self.out_layout = IrrepsLayout.uniform(l_max, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        blocks = self.in_layout.split(x)
        scalars = blocks[0][..., 0]
        C = self.channels
        out = [nn.functional.silu(scalars[..., :C])[..., None]]
        gates = torch.sigmoid(scalars[..., C:])
        for l in range(1, self.l_max + 1):
            out.append(blocks[l] * gates[..., (l - 1) * C : l * C, None])
        return self.out_layout.merge(out)


class RadialMLP(nn.Module):
    def __init__(self, num_basis: int, hidden: int, out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(num_basis, hidden, dtype=DTYPE),
            nn.SiLU(),
            nn.Linear(hidden, out, dtype=DTYPE),
        )

    def forward(self, rbf: torch.Tensor) -> torch.Tensor:
        return self.net(rbf)


def attention_weights(
    logits: torch.Tensor,
    envelope: torch.Tensor,
    dst: torch.Tensor,
    n_nodes: int,
    keep: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Softmax over incoming edges of each target, each term scaled by its
    cutoff envelope; dropped edges get weight 0.

    Args:
        logits: (E, H)
        envelope: (E,)
        dst: (E,) target node of every edge
        n_nodes: number of nodes
        keep: optional (E,) bool mask

    Returns:
        (E, H) weights; for every target with a surviving edge they sum to 1
    """
    E, H = logits.shape
    if E == 0:
        return logits
    scale = envelope if keep is None else envelope * keep.to(envelope.dtype)
    index = dst[:, None].expand(E, H)
    peak = torch.zeros(n_nodes, H, dtype=logits.dtype).scatter_reduce(
        0, index, logits, reduce="amax", include_self=False
    )
    num = torch.exp(logits - peak[dst]) * scale[:, None]
    den = torch.zeros(n_nodes, H, dtype=logits.dtype).index_add(0, dst, num)[dst]
    return torch.where(den > 0, num / torch.where(den > 0, den, torch.ones_like(den)), torch.zeros_like(num))


class AttentionLayer(nn.Module):
    """h'_t = h_t + out(gate(mid(sum_s a_ts v_ts)))

    v_ts is the Clebsch-Gordan product of the mixed pair features
    f(h_t, h_s) = W_dst h_t + W_src h_s (concatenation followed by a linear)
    with the edge harmonics, weighted per path by a radial MLP. Attention
    logits z_ts = k^T LeakyReLU(W [h0_t, h0_s]) use degree-0 features only.
    """

    def __init__(self, cfg: LayerConfig, num_basis: int):
        super().__init__()
        self.cfg = cfg
        self.layout = cfg.layout
        self.sh_layout = IrrepsLayout(tuple((l, 1) for l in range(cfg.l_max + 1)))
        self.paths = tensor_product_paths(self.layout, self.sh_layout, self.layout)
        C = cfg.channels
        gate = Gate(cfg.l_max, C)
        self.norm = EquivariantRMSNorm(self.layout)
        self.src_mix = EquivariantLinear(self.layout, self.layout)
        self.dst_mix = EquivariantLinear(self.layout, self.layout)
        self.radial = RadialMLP(num_basis, cfg.radial_hidden, len(self.paths) * C)
        self.attn_in = nn.Linear(2 * C, cfg.attn_hidden, dtype=DTYPE)
        self.attn_k = nn.Parameter(torch.empty(cfg.attn_hidden, cfg.num_heads, dtype=DTYPE))
        self.mid = EquivariantLinear(self.layout, gate.in_layout)
        self.gate = gate
        self.out = EquivariantLinear(self.layout, self.layout, gain=cfg.residual_gain)

    def reset_parameters(self, generator: torch.Generator):
        uniform_(self.attn_k, self.attn_k.shape[0], generator)

    def forward(
        self,
        h: torch.Tensor,
        ctx,
        keep: Optional[torch.Tensor] = None,
        return_attention: bool = False,
    ):
        C = self.cfg.channels
        n = h.shape[0]
        h_n = self.norm(h)
        x = self.src_mix(h_n)[ctx.src] + self.dst_mix(h_n)[ctx.dst]
        w = self.radial(ctx.rbf).view(ctx.n_edges, len(self.paths), C) * ctx.env[:, None, None]
        v = tensor_product(IrrepsTensor(self.layout, x), ctx.sh, w, self.layout, self.paths).data

        s0 = h_n[:, :C]
        pair = torch.cat([s0[ctx.dst], s0[ctx.src]], dim=-1)
        logits = nn.functional.leaky_relu(self.attn_in(pair), self.cfg.leaky_slope) @ self.attn_k
        a = attention_weights(logits, ctx.env, ctx.dst, n, keep)
        a_ch = a.repeat_interleave(C // self.cfg.num_heads, dim=1)

        m = self.layout.merge([b * a_ch[:, :, None] for b in self.layout.split(v)])
        agg = torch.zeros(n, self.layout.dim, dtype=h.dtype).index_add(0, ctx.dst, m)
        out = h + self.out(self.gate(self.mid(agg)))
        if return_attention:
            return out, a
        return out


class Embedding(nn.Module):
    """x~_i = linear(one-hot(z_i)) + alpha * sum_s v(1, 1, r_is)."""

    def __init__(self, cfg: LayerConfig, num_basis: int):
        super().__init__()
        self.cfg = cfg
        self.layout = cfg.layout
        self.sh_layout = IrrepsLayout(tuple((l, 1) for l in range(cfg.l_max + 1)))
        self.one_layout = IrrepsLayout(((0, cfg.channels),))
        self.paths = tensor_product_paths(self.one_layout, self.sh_layout, self.layout)
        self.species = nn.Linear(cfg.max_atomic_number, cfg.channels, dtype=DTYPE)
        self.radial = RadialMLP(num_basis, cfg.radial_hidden, len(self.paths) * cfg.channels)
        self.alpha = nn.Parameter(torch.empty((), dtype=DTYPE))

    def reset_parameters(self, generator: torch.Generator):
        with torch.no_grad():
            self.alpha.fill_(1.0 / math.sqrt(self.cfg.avg_neighbors))

    def forward(self, ctx) -> torch.Tensor:
        C = self.cfg.channels
        n = ctx.n_atoms
        if n and int(ctx.species.max()) > self.cfg.max_atomic_number:
            raise ValueError(
                f"Atomic number {int(ctx.species.max())} exceeds max_atomic_number "
                f"{self.cfg.max_atomic_number}"
            )
        onehot = nn.functional.one_hot(ctx.species - 1, self.cfg.max_atomic_number).to(DTYPE)
        scalars = self.species(onehot)
        blocks = [scalars[:, :, None]] + [
            torch.zeros(n, C, 2 * l + 1, dtype=DTYPE) for l in range(1, self.cfg.l_max + 1)
        ]
        x = self.layout.merge(blocks)
        if ctx.n_edges == 0:
            return x
        ones = IrrepsTensor(self.one_layout, torch.ones(ctx.n_edges, C, dtype=DTYPE))
        w = self.radial(ctx.rbf).view(ctx.n_edges, len(self.paths), C) * ctx.env[:, None, None]
        v = tensor_product(ones, ctx.sh, w, self.layout, self.paths).data
        u = torch.zeros(n, self.layout.dim, dtype=DTYPE).index_add(0, ctx.dst, v)
        return x + self.alpha * u


class EnergyHead(nn.Module):
    """E = sum_i MLP(h0_i) + n_atoms * per-atom shift."""

    def __init__(self, cfg: LayerConfig):
        super().__init__()
        self.cfg = cfg
        self.norm = EquivariantRMSNorm(cfg.layout)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.channels, cfg.energy_hidden, dtype=DTYPE),
            nn.SiLU(),
            nn.Linear(cfg.energy_hidden, 1, dtype=DTYPE),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        s0 = self.norm(h)[:, : self.cfg.channels]
        return self.mlp(s0).sum()


class ForceHead(nn.Module):
    """One extra attention layer, then a single-channel degree-1 read-out."""

    def __init__(self, cfg: LayerConfig, num_basis: int):
        super().__init__()
        self.cfg = cfg
        self.layer = AttentionLayer(cfg, num_basis)
        self.readout = nn.Parameter(torch.empty(1, cfg.channels, dtype=DTYPE))

    def reset_parameters(self, generator: torch.Generator):
        uniform_(self.readout, self.cfg.channels, generator)

    def forward(self, h: torch.Tensor, ctx) -> torch.Tensor:
        if self.cfg.l_max < 1:
            raise ValueError("Force read-out needs l_max >= 1")
        h = self.layer(h, ctx)
        block = self.cfg.layout.split(h)[1]
        return y1_to_vector(torch.einsum("oc,ncm->nom", self.readout, block)[:, 0, :])


def initialize(module: nn.Module, generator: torch.Generator) -> None:
    """uniform(-a, a), a = sqrt(1/fan_in) for every array, in module order."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            uniform_(m.weight, m.in_features, generator)
            if m.bias is not None:
                uniform_(m.bias, m.in_features, generator)
        elif hasattr(m, "reset_parameters") and m is not module:
            m.reset_parameters(generator)
