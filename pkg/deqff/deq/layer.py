"""
The fixed-point layer: z* = f_theta(z*, x~) with
f_theta(z, x~) = g_theta(input_inject(z, x~)), g_theta being the weight-tied
attention stack of a ``ForceField``.
"""

import time
from dataclasses import dataclass, field
from logging import getLogger
from typing import List, Optional, Tuple

import torch

from ..eqnet import ForceField, GraphContext
from ..graph import AtomicSystem
from ..irreps import DTYPE
from .config import SolverConfig
from .solvers import solve

logger = getLogger(__name__)

INJECT_EPS = 1e-12


def input_inject(z: torch.Tensor, x_tilde: torch.Tensor) -> torch.Tensor:
    """(z + x~) rescaled per node to the norm of x~; x~ where ||z + x~|| < 1e-12."""
    if z.shape != x_tilde.shape:
        raise ValueError(f"Shape mismatch: z {tuple(z.shape)} vs injection {tuple(x_tilde.shape)}")
    s = z + x_tilde
    s_norm = s.norm(dim=-1, keepdim=True)
    x_norm = x_tilde.norm(dim=-1, keepdim=True)
    degenerate = s_norm < INJECT_EPS
    scaled = s * (x_norm / torch.where(degenerate, torch.ones_like(s_norm), s_norm))
    return torch.where(degenerate, x_tilde, scaled)


def f_theta(
    model: ForceField,
    z: torch.Tensor,
    x_tilde: torch.Tensor,
    ctx: GraphContext,
    keep: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    return model.trunk(input_inject(z, x_tilde), ctx, keep)


def dropout_mask(n_edges: int, rate: float, generator: torch.Generator) -> Optional[torch.Tensor]:
    """Per-edge keep mask, held fixed for every iteration of one solve."""
    if rate <= 0:
        return None
    return torch.rand(n_edges, generator=generator, dtype=DTYPE) >= rate


@dataclass
class SolverStats:
    steps: int
    nfev: int
    residual: float
    converged: bool
    tolerance: float
    reused: bool
    wall_time: float
    trace: List[float] = field(default_factory=list)

    def to_row(self) -> dict:
        return {
            "steps": self.steps,
            "nfev": self.nfev,
            "residual": self.residual,
            "converged": self.converged,
            "tolerance": self.tolerance,
            "reused": self.reused,
        }


@dataclass
class DEQOutput:
    energy: torch.Tensor
    forces: torch.Tensor
    z: torch.Tensor
    stats: SolverStats
    x_tilde: torch.Tensor
    ctx: GraphContext
    samples: List[torch.Tensor] = field(default_factory=list)
    keep: Optional[torch.Tensor] = None


def _initial_state(
    reuse: Optional[torch.Tensor], n_atoms: int, dim: int
) -> Tuple[torch.Tensor, bool]:
    zeros = torch.zeros(n_atoms, dim, dtype=DTYPE)
    if reuse is None:
        return zeros, False
    if tuple(reuse.shape) != (n_atoms, dim):
        logger.info(
            "Stored fixed point has shape %s, system needs %s; starting from zeros",
            tuple(reuse.shape),
            (n_atoms, dim),
        )
        return zeros, False
    if not torch.isfinite(reuse).all():
        logger.info("Stored fixed point is not finite; starting from zeros")
        return zeros, False
    return reuse.detach().to(DTYPE), True


def deq_forward(
    system: AtomicSystem,
    model: ForceField,
    cfg: SolverConfig,
    reuse: Optional[torch.Tensor] = None,
    training: bool = False,
    keep: Optional[torch.Tensor] = None,
    tol: Optional[float] = None,
    ctx: Optional[GraphContext] = None,
) -> DEQOutput:
    """Solve for z* and apply the heads.

    The solve starts from zeros when training or when no (valid) previous
    fixed point is given, with tolerance ``eps_train``; a reused start is
    solved to ``eps_reuse``. ``tol`` overrides both.

    Args:
        system: atoms to evaluate
        model: network holding g_theta, the embedding and the heads
        cfg: solver settings
        reuse: z* of the previous MD/relaxation step, indexed by atom
        training: zero start at eps_train and record correction samples
        keep: per-edge dropout mask for this solve
        tol: explicit tolerance
        ctx: precomputed graph context for ``system``

    Returns:
        DEQOutput with detached energy/forces/z* and solver statistics
    """
    ctx = ctx if ctx is not None else model.prepare(system)
    with torch.no_grad():
        x_tilde = model.embed(ctx)
        z0, reused = _initial_state(None if training else reuse, ctx.n_atoms, model.layout.dim)
        tolerance = tol if tol is not None else (cfg.eps_reuse if reused else cfg.eps_train)
        start = time.perf_counter()
        result = solve(lambda z: f_theta(model, z, x_tilde, ctx, keep), z0, cfg, tol=tolerance, sample=training)
        wall_time = time.perf_counter() - start
        energy, forces = model.heads(result.z, ctx)

    if not result.converged and not training:
        logger.warning(
            "Fixed-point solve stopped at %d steps with residual %.3e > %.1e",
            result.step,
            result.residual,
            tolerance,
        )
    stats = SolverStats(
        steps=result.step,
        nfev=result.nfev,
        residual=result.residual,
        converged=result.converged,
        tolerance=tolerance,
        reused=reused,
        wall_time=wall_time,
        trace=result.trace,
    )
    return DEQOutput(
        energy=energy,
        forces=forces,
        z=result.z,
        stats=stats,
        x_tilde=x_tilde,
        ctx=ctx,
        samples=result.samples,
        keep=keep,
    )
