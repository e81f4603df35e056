from logging import getLogger
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..deq import SolverConfig, SolverStats, deq_forward
from ..eqnet import ForceField, explicit_forward
from ..graph import AtomicSystem
from .oracle import OraclePotential, oracle_eval

logger = getLogger(__name__)


class OracleCalculator:
    def __init__(self, potential: OraclePotential):
        self.potential = potential
        self.last_stats: Optional[SolverStats] = None

    def __call__(self, system: AtomicSystem) -> Tuple[float, np.ndarray]:
        return oracle_eval(system, self.potential)

    def reset(self) -> None:
        pass


class ModelCalculator:
    """Energy/forces from a trained model.

    With ``reuse`` the fixed point of the previous call warm-starts the next
    solve (at ``eps_reuse``); the first call after ``reset`` always starts
    from zeros at ``eps_train``.
    """

    def __init__(self, model: ForceField, solver: SolverConfig, reuse: bool = False, tol: Optional[float] = None):
        self.model = model
        self.solver = solver
        self.reuse = reuse
        self.tol = tol
        self.z: Optional[torch.Tensor] = None
        self.last_stats: Optional[SolverStats] = None
        self.history: List[SolverStats] = []

    @property
    def is_deq(self) -> bool:
        return self.model.layer_config.kind == "deq"

    def __call__(self, system: AtomicSystem) -> Tuple[float, np.ndarray]:
        if not self.is_deq:
            with torch.no_grad():
                energy, forces = explicit_forward(system, self.model)
            return float(energy), forces.numpy().copy()
        out = deq_forward(
            system,
            self.model,
            self.solver,
            reuse=self.z if self.reuse else None,
            tol=self.tol,
        )
        self.z = out.z
        self.last_stats = out.stats
        self.history.append(out.stats)
        return float(out.energy), out.forces.numpy().copy()

    def reset(self) -> None:
        self.z = None
        self.last_stats = None
        self.history = []

