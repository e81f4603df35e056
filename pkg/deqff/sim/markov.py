"""
Markov deviation of fixed-point reuse: how far forces predicted with a warm
start drift from forces predicted from scratch along the same trajectory.

Per atom   d_i = ||F_i^reuse - F_i|| / (0.5 (||F_i^reuse|| + ||F_i||))
Per frame  mean over atoms; overall mean over frames.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import Tuple

import numpy as np
import pandas as pd

from ..deq import SolverConfig
from ..eqnet import ForceField
from .calculator import ModelCalculator
from .trajectory import Trajectory

logger = getLogger(__name__)

NORM_FLOOR = 1e-10


@dataclass
class MarkovReport:
    delta_f_rel: float
    excluded: int
    per_frame: pd.DataFrame


def relative_force_deviation(forces: np.ndarray, forces_reuse: np.ndarray) -> Tuple[np.ndarray, int]:
    """Per-atom relative deviations; atoms where both norms are below 1e-10 are dropped."""
    forces = np.asarray(forces, dtype=np.float64)
    forces_reuse = np.asarray(forces_reuse, dtype=np.float64)
    if forces.shape != forces_reuse.shape:
        raise ValueError(f"Force shapes differ: {forces.shape} vs {forces_reuse.shape}")
    a = np.linalg.norm(forces, axis=1)
    b = np.linalg.norm(forces_reuse, axis=1)
    keep = ~((a < NORM_FLOOR) & (b < NORM_FLOOR))
    diff = np.linalg.norm(forces_reuse - forces, axis=1)
    return diff[keep] / (0.5 * (a[keep] + b[keep])), int((~keep).sum())


def markov_deviation(model: ForceField, trajectory: Trajectory, solver: SolverConfig) -> MarkovReport:
    cold = ModelCalculator(model, solver, reuse=False)
    warm = ModelCalculator(model, solver, reuse=True)
    rows = []
    excluded = 0
    for i, frame in enumerate(trajectory):
        _, forces = cold(frame.system)
        _, forces_reuse = warm(frame.system)
        values, dropped = relative_force_deviation(forces, forces_reuse)
        excluded += dropped
        rows.append(
            {
                "frame": i,
                "delta_f_rel": float(values.mean()) if len(values) else np.nan,
                "steps": cold.last_stats.steps if cold.last_stats else 0,
                "steps_reuse": warm.last_stats.steps if warm.last_stats else 0,
                "excluded": dropped,
            }
        )
    per_frame = pd.DataFrame(rows, columns=["frame", "delta_f_rel", "steps", "steps_reuse", "excluded"])
    valid = per_frame["delta_f_rel"].dropna()
    delta = float(valid.mean()) if len(valid) else 0.0
    if excluded:
        logger.info("%d atoms with vanishing forces excluded from the deviation", excluded)
    return MarkovReport(delta_f_rel=delta, excluded=excluded, per_frame=per_frame)
