from .config import SolverConfig, SolverDivergenceError
from .layer import DEQOutput, SolverStats, deq_forward, dropout_mask, f_theta, input_inject
from .memory import BufferCounter, retain, track_buffers
from .solvers import (
    FixedPointResult,
    TrajectorySampler,
    anderson_solve,
    broyden_solve,
    picard_solve,
    solve,
)

__all__ = [
    "BufferCounter",
    "DEQOutput",
    "FixedPointResult",
    "SolverConfig",
    "SolverDivergenceError",
    "SolverStats",
    "TrajectorySampler",
    "anderson_solve",
    "broyden_solve",
    "deq_forward",
    "dropout_mask",
    "f_theta",
    "input_inject",
    "picard_solve",
    "retain",
    "solve",
    "track_buffers",
]
