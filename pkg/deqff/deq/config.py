from dataclasses import dataclass

SOLVERS = ("anderson", "broyden", "picard")


class SolverDivergenceError(RuntimeError):
    """Raised when the residual of a fixed-point solve blows up."""

    def __init__(self, step: int, residual: float):
        self.step = step
        self.residual = residual
        super().__init__(f"Fixed-point solve diverged at step {step} (residual {residual:.3e})")


@dataclass(frozen=True)
class SolverConfig:
    solver: str = "anderson"
    eps_train: float = 1e-4
    eps_reuse: float = 1e-1
    max_steps: int = 40
    anderson_memory: int = 5
    anderson_mixing: float = 1.0
    broyden_memory: int = 40
    correction_samples: int = 3
    ridge: float = 1e-8
    divergence_ratio: float = 1e4
    eps_floor: float = 1e-8

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if not 0 < self.eps_train <= self.eps_reuse:
            raise ValueError(
                f"Tolerances must satisfy 0 < eps_train <= eps_reuse, got {self.eps_train} / {self.eps_reuse}"
            )
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.anderson_memory < 1 or self.broyden_memory < 1:
            raise ValueError("Solver memories must be >= 1")
        if not 0 < self.anderson_mixing <= 1:
            raise ValueError(f"anderson_mixing must lie in (0, 1], got {self.anderson_mixing}")
        if self.correction_samples < 0:
            raise ValueError(f"correction_samples must be >= 0, got {self.correction_samples}")
        if self.ridge < 0 or self.eps_floor <= 0 or self.divergence_ratio <= 1:
            raise ValueError("ridge >= 0, eps_floor > 0 and divergence_ratio > 1 required")
