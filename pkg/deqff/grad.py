"""
Training gradients for the fixed-point layer.

Given z* = f_theta(z*, x~) and a loss L(heads(z*)), the implicit function
theorem gives

    dL/dtheta = g* df/dtheta,   g* = g* df/dz* + dL/dz*

so the backward pass solves a second (adjoint) fixed-point problem instead of
differentiating through the forward iterations. Every vector-Jacobian
product is taken by autograd over a single application of f_theta (or of the
heads) at the point in question; nothing from the forward solve is kept.
"""

from collections import Counter
from dataclasses import dataclass, field
from logging import getLogger
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

import torch

from .deq import SolverConfig, f_theta, retain, solve
from .eqnet import ForceField, GraphContext

logger = getLogger(__name__)

Grads = Dict[str, torch.Tensor]
# (E, F) -> (loss value, dL/dE, dL/dF)
HeadLoss = Callable[[torch.Tensor, torch.Tensor], Tuple[float, torch.Tensor, torch.Tensor]]


class AdjointNotConvergedError(RuntimeError):
    pass


class AdjointHooks(Protocol):
    def vjp_z(self, z: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        ...

    def vjp_theta(self, z: torch.Tensor, u: torch.Tensor) -> Grads:
        ...

    def heads(self, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        ...

    def vjp_heads(self, z: torch.Tensor, d_energy: torch.Tensor, d_forces: torch.Tensor) -> Tuple[torch.Tensor, Grads]:
        ...


@dataclass
class GradReport:
    grads: Grads = field(default_factory=dict)
    adjoint_steps: int = 0
    adjoint_residual: float = 0.0
    corrections: int = 0

    def __add__(self, other: "GradReport") -> "GradReport":
        grads = {k: v.clone() for k, v in self.grads.items()}
        for k, v in other.grads.items():
            grads[k] = grads[k] + v if k in grads else v.clone()
        return GradReport(
            grads=grads,
            adjoint_steps=self.adjoint_steps + other.adjoint_steps,
            adjoint_residual=max(self.adjoint_residual, other.adjoint_residual),
            corrections=self.corrections + other.corrections,
        )

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self.grads.values())

    def norm(self) -> float:
        if not self.grads:
            return 0.0
        return float(torch.sqrt(sum((g.double() ** 2).sum() for g in self.grads.values())))


class ModelAdjointHooks:
    """Vector-Jacobian products of one ``ForceField`` evaluated on one graph.

    The linearization of f_theta (and of the heads) at the most recent point
    is cached, so repeated products at z* during the adjoint solve reuse a
    single set of activations.
    """

    def __init__(self, model: ForceField, ctx: GraphContext, keep: Optional[torch.Tensor] = None):
        self.model = model
        self.ctx = ctx
        self.keep = keep
        self.params = {name: p for name, p in model.named_parameters() if p.requires_grad}
        self.calls: Counter = Counter()
        self._map_point: Optional[torch.Tensor] = None
        self._map_cache: Optional[Tuple[torch.Tensor, torch.Tensor]] = None
        self._head_point: Optional[torch.Tensor] = None
        self._head_cache: Optional[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = None

    def _linearize(self, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if self._map_point is not z:
            self.calls["linearize"] += 1
            z_leaf = z.detach().requires_grad_(True)
            with torch.enable_grad():
                x_tilde = self.model.embed(self.ctx)
                out = f_theta(self.model, z_leaf, x_tilde, self.ctx, self.keep)
            self._map_point = z
            self._map_cache = (z_leaf, retain(out))
        return self._map_cache

    def _linearize_heads(self, z: torch.Tensor):
        if self._head_point is not z:
            z_leaf = z.detach().requires_grad_(True)
            with torch.enable_grad():
                energy, forces = self.model.heads(z_leaf, self.ctx)
            self._head_point = z
            self._head_cache = (z_leaf, energy, forces)
        return self._head_cache

    def _grad(self, outputs, inputs: List[torch.Tensor], cotangents) -> List[torch.Tensor]:
        grads = torch.autograd.grad(outputs, inputs, cotangents, retain_graph=True, allow_unused=True)
        return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]

    def vjp_z(self, z: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        self.calls["vjp_z"] += 1
        z_leaf, out = self._linearize(z)
        return self._grad(out, [z_leaf], u)[0]

    def vjp_theta(self, z: torch.Tensor, u: torch.Tensor) -> Grads:
        self.calls["vjp_theta"] += 1
        _, out = self._linearize(z)
        names = list(self.params)
        grads = self._grad(out, [self.params[n] for n in names], u)
        return dict(zip(names, grads))

    def heads(self, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        _, energy, forces = self._linearize_heads(z)
        return energy.detach(), forces.detach()

    def vjp_heads(self, z: torch.Tensor, d_energy: torch.Tensor, d_forces: torch.Tensor) -> Tuple[torch.Tensor, Grads]:
        self.calls["vjp_heads"] += 1
        z_leaf, energy, forces = self._linearize_heads(z)
        names = list(self.params)
        grads = self._grad(
            [energy, forces],
            [z_leaf] + [self.params[n] for n in names],
            [torch.as_tensor(d_energy, dtype=energy.dtype).reshape(energy.shape), d_forces],
        )
        return grads[0], dict(zip(names, grads[1:]))

    def release(self) -> None:
        self._map_point = self._map_cache = None
        self._head_point = self._head_cache = None


def ift_backward(z_star: torch.Tensor, dl_dz: torch.Tensor, hooks: AdjointHooks, cfg: SolverConfig) -> GradReport:
    """Solve g = vjp_z(g) + dL/dz* with Anderson at eps_train, then vjp_theta(g)."""
    if not torch.isfinite(dl_dz).all():
        raise ValueError("dL/dz* contains non-finite entries")
    result = solve(
        lambda g: hooks.vjp_z(z_star, g) + dl_dz,
        dl_dz.detach().clone(),
        cfg,
        tol=cfg.eps_train,
        solver="anderson",
    )
    if not result.converged:
        raise AdjointNotConvergedError(
            f"Adjoint solve stopped at {result.step} steps with residual {result.residual:.3e} "
            f"(tolerance {cfg.eps_train:.1e})"
        )
    grads = hooks.vjp_theta(z_star, result.z)
    return GradReport(grads=grads, adjoint_steps=result.step, adjoint_residual=result.residual)


def phantom_1step(z_star: torch.Tensor, dl_dz: torch.Tensor, hooks: AdjointHooks) -> GradReport:
    """dL/dtheta ~ dL/dz* df/dtheta: the Neumann series truncated after its first term."""
    return GradReport(grads=hooks.vjp_theta(z_star, dl_dz))


def correction_gradients(samples: Iterable[torch.Tensor], loss_fn: HeadLoss, hooks: AdjointHooks) -> GradReport:
    """Treat every sampled iterate as if it were the final fixed point.

    Each term backpropagates the full loss through the heads and one phantom
    application of f_theta at that iterate, with unit weight.
    """
    report = GradReport()
    for z in samples:
        energy, forces = hooks.heads(z)
        _, d_energy, d_forces = loss_fn(energy, forces)
        dl_dz, head_grads = hooks.vjp_heads(z, d_energy, d_forces)
        report = report + GradReport(grads=head_grads, corrections=1) + phantom_1step(z, dl_dz, hooks)
    return report
