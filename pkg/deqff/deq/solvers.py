"""
Fixed-point solvers for z = f(z): Picard iteration, Anderson acceleration and
limited-memory good Broyden.

All solvers share one stopping rule. The relative residual of an evaluated
iterate is ||f(z) - z|| / max(||z||, eps_floor) (flat 2-norm); the solve stops
as soon as it drops below the tolerance or after ``max_steps`` updates. An
unconverged solve returns the evaluated iterate with the lowest residual.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from logging import getLogger
from typing import Callable, Deque, Dict, List, Optional

import torch

from .config import SolverConfig, SolverDivergenceError
from .memory import retain

logger = getLogger(__name__)

FixedPointMap = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class FixedPointResult:
    z: torch.Tensor
    step: int
    nfev: int
    residual: float
    converged: bool
    trace: List[float] = field(default_factory=list)
    samples: List[torch.Tensor] = field(default_factory=list)


class TrajectorySampler:
    """Constant-memory record of solver iterates for the correction loss.

    Keeps iterates whose index is a multiple of ``stride``; the stride doubles
    before an iterate would make the store exceed ``samples + 1`` entries, so
    no more than ``samples + 1`` copies are ever alive.
    """

    def __init__(self, samples: int):
        self.samples = samples
        self.capacity = samples + 1
        self.stride = 1
        self.store: Dict[int, torch.Tensor] = {}

    def observe(self, index: int, z: torch.Tensor) -> None:
        if self.samples == 0 or index % self.stride:
            return
        while len(self.store) >= self.capacity:
            self.stride *= 2
            self.store = {i: t for i, t in self.store.items() if i % self.stride == 0}
            if index % self.stride:
                return
        self.store[index] = retain(z.detach().clone())

    def select(self, n_steps: int) -> List[torch.Tensor]:
        """Stored iterates nearest to ceil(k * n / (samples + 1)), k = 1..samples."""
        if n_steps < 1 or not self.store:
            return []
        picked: List[int] = []
        for k in range(1, self.samples + 1):
            target = math.ceil(k * n_steps / (self.samples + 1))
            index = min(self.store, key=lambda i: (abs(i - target), i))
            if index not in picked:
                picked.append(index)
        return [self.store[i] for i in picked]


class _Progress:
    def __init__(self, cfg: SolverConfig, tol: float, sample: bool):
        if tol <= 0:
            raise ValueError(f"Tolerance must be positive, got {tol}")
        self.cfg = cfg
        self.tol = tol
        self.sampler = TrajectorySampler(cfg.correction_samples) if sample else None
        self.step = 0
        self.nfev = 0
        self.trace: List[float] = []
        self.initial: Optional[float] = None
        self.best: Optional[torch.Tensor] = None
        self.best_residual = math.inf
        self.converged = False

    def observe(self, z: torch.Tensor, fz: torch.Tensor) -> bool:
        """Record one evaluation; True when the solve should stop."""
        self.nfev += 1
        diff = (fz - z).norm().item()
        residual = diff / max(z.norm().item(), self.cfg.eps_floor)
        self.trace.append(residual)
        if not math.isfinite(residual):
            raise SolverDivergenceError(self.step, residual)
        if self.initial is None:
            self.initial = diff
        elif self.initial > 0 and diff > self.cfg.divergence_ratio * self.initial:
            raise SolverDivergenceError(self.step, residual)
        if self.sampler is not None and self.step > 0:
            self.sampler.observe(self.step, z)
        if residual < self.best_residual:
            self.best = retain(z)
            self.best_residual = residual
        if residual < self.tol:
            self.converged = True
            return True
        return self.step >= self.cfg.max_steps

    def result(self, shape) -> FixedPointResult:
        return FixedPointResult(
            z=self.best.reshape(shape),
            step=self.step,
            nfev=self.nfev,
            residual=self.best_residual,
            converged=self.converged,
            trace=self.trace,
            samples=[s.reshape(shape) for s in self.sampler.select(self.step)] if self.sampler else [],
        )


def _flat(fn: FixedPointMap, shape) -> FixedPointMap:
    return lambda v: fn(v.reshape(shape)).reshape(-1)


def picard_solve(
    fn: FixedPointMap, z0: torch.Tensor, cfg: SolverConfig, tol: Optional[float] = None, sample: bool = False
) -> FixedPointResult:
    progress = _Progress(cfg, tol or cfg.eps_train, sample)
    z = z0
    fz = fn(z)
    while not progress.observe(z, fz):
        progress.step += 1
        z = fz
        fz = fn(z)
    return progress.result(z0.shape)


def _anderson_update(xs: Deque[torch.Tensor], fs: Deque[torch.Tensor], beta: float, ridge: float) -> torch.Tensor:
    X = torch.stack(list(xs))
    F = torch.stack(list(fs))
    n = X.shape[0]
    if n == 1:
        return beta * F[0] + (1.0 - beta) * X[0]
    G = F - X
    gram = G @ G.T
    trace = gram.trace().item()
    lam = ridge * trace / n if trace > 0 else ridge
    # min a^T gram a  s.t.  sum(a) = 1, as a bordered linear system
    H = torch.zeros(n + 1, n + 1, dtype=X.dtype)
    H[0, 1:] = 1.0
    H[1:, 0] = 1.0
    H[1:, 1:] = gram + lam * torch.eye(n, dtype=X.dtype)
    rhs = torch.zeros(n + 1, dtype=X.dtype)
    rhs[0] = 1.0
    try:
        alpha = torch.linalg.solve(H, rhs)[1:]
    except RuntimeError:
        alpha = None
    if alpha is None or not torch.isfinite(alpha).all():
        logger.debug("Anderson least-squares system singular; taking a plain step")
        return F[-1]
    return beta * (alpha @ F) + (1.0 - beta) * (alpha @ X)


def anderson_solve(
    fn: FixedPointMap, z0: torch.Tensor, cfg: SolverConfig, tol: Optional[float] = None, sample: bool = False
) -> FixedPointResult:
    """Anderson acceleration over a window of the last ``anderson_memory`` iterates.

    z+ = beta * sum_j a_j f(z_j) + (1 - beta) * sum_j a_j z_j, with a the
    minimizer of ||sum_j a_j (f(z_j) - z_j)|| subject to sum_j a_j = 1.
    """
    progress = _Progress(cfg, tol or cfg.eps_train, sample)
    f = _flat(fn, z0.shape)
    xs: Deque[torch.Tensor] = deque(maxlen=cfg.anderson_memory)
    fs: Deque[torch.Tensor] = deque(maxlen=cfg.anderson_memory)
    z = z0.reshape(-1)
    fz = f(z)
    while True:
        xs.append(retain(z))
        fs.append(retain(fz))
        if progress.observe(z, fz):
            break
        progress.step += 1
        z = _anderson_update(xs, fs, cfg.anderson_mixing, cfg.ridge)
        fz = f(z)
    return progress.result(z0.shape)


def _apply_inverse(us: Deque[torch.Tensor], vs: Deque[torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    # H = -I + sum_i u_i v_i^T
    out = -x
    for u, v in zip(us, vs):
        out = out + u * (v @ x)
    return out


def _apply_inverse_t(us: Deque[torch.Tensor], vs: Deque[torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    out = -x
    for u, v in zip(us, vs):
        out = out + v * (u @ x)
    return out


def broyden_solve(
    fn: FixedPointMap, z0: torch.Tensor, cfg: SolverConfig, tol: Optional[float] = None, sample: bool = False
) -> FixedPointResult:
    """Good Broyden on g(z) = f(z) - z with a low-rank inverse Jacobian.

    H starts at -I (the inverse Jacobian of g for a map that ignores z), so
    the first update is a plain step; each update adds one rank-1 term and the
    oldest term is dropped beyond ``broyden_memory``.
    """
    progress = _Progress(cfg, tol or cfg.eps_train, sample)
    f = _flat(fn, z0.shape)
    us: Deque[torch.Tensor] = deque(maxlen=cfg.broyden_memory)
    vs: Deque[torch.Tensor] = deque(maxlen=cfg.broyden_memory)
    z = z0.reshape(-1)
    fz = f(z)
    g = fz - z
    while not progress.observe(z, fz):
        progress.step += 1
        dz = -_apply_inverse(us, vs, g)
        z_next = z + dz
        fz_next = f(z_next)
        g_next = fz_next - z_next
        h_dg = _apply_inverse(us, vs, g_next - g)
        denom = (dz @ h_dg).item()
        if abs(denom) > 1e-300:
            u = (dz - h_dg) / denom
            v = _apply_inverse_t(us, vs, dz)
            us.append(retain(u))
            vs.append(retain(v))
        z, fz, g = z_next, fz_next, g_next
    return progress.result(z0.shape)


SOLVER_FUNCTIONS = {
    "anderson": anderson_solve,
    "broyden": broyden_solve,
    "picard": picard_solve,
}


def solve(
    fn: FixedPointMap,
    z0: torch.Tensor,
    cfg: SolverConfig,
    tol: Optional[float] = None,
    sample: bool = False,
    solver: Optional[str] = None,
) -> FixedPointResult:
    name = solver or cfg.solver
    try:
        solver_fn = SOLVER_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"Unknown solver {name!r}; expected one of {sorted(SOLVER_FUNCTIONS)}") from None
    return solver_fn(fn, z0, cfg, tol=tol, sample=sample)
