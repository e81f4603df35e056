import time
from dataclasses import dataclass, field, replace
from logging import getLogger
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from ..deq import SolverConfig, SolverDivergenceError
from ..eqnet import ForceField
from ..graph import AtomicSystem
from .calculator import ModelCalculator, OracleCalculator
from .dynamics import velocity_verlet_step
from .trajectory import Frame, Trajectory

logger = getLogger(__name__)

MAX_DISPLACEMENT = 0.2

Calculator = Union[ModelCalculator, OracleCalculator]


def _stats_row(calculator: Calculator, frame: int) -> dict:
    stats = calculator.last_stats
    row = {"frame": frame}
    if stats is not None:
        row.update(stats.to_row())
    return row


def run_md(
    calculator: Calculator,
    system0: AtomicSystem,
    n_steps: int,
    dt: float,
    log_every: int = 100,
) -> Trajectory:
    """NVE velocity Verlet trajectory of ``n_steps`` steps (n_steps + 1 frames).

    A model calculator with reuse threads z* from step to step. If a solve
    diverges the trajectory is cut before the failing frame.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if system0.velocities is None:
        raise ValueError("Initial system needs velocities (see maxwell_boltzmann)")
    calculator.reset()
    system = system0.with_default_masses()
    energy, forces = calculator(system)
    trajectory = Trajectory(dt=dt)
    trajectory.append(Frame(system=system, energy=energy, forces=forces, info={"frame": "0"}))
    trajectory.stats.append(_stats_row(calculator, 0))

    for step in range(1, n_steps + 1):
        try:
            system, energy, forces = velocity_verlet_step(system, forces, dt, calculator)
        except SolverDivergenceError as e:
            logger.error("MD stopped: solver diverged at frame %d (%s)", step, e)
            trajectory.metadata["truncated_at"] = str(step)
            break
        trajectory.append(Frame(system=system, energy=energy, forces=forces, info={"frame": str(step)}))
        trajectory.stats.append(_stats_row(calculator, step))
        if step % log_every == 0:
            logger.info("md step %d/%d energy %.6f eV", step, n_steps, energy)
    return trajectory


@dataclass
class RelaxResult:
    system: AtomicSystem
    energies: List[float] = field(default_factory=list)
    solver_steps: List[int] = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.energies)

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.solver_steps)) if self.solver_steps else 0.0


def relax(
    calculator: Calculator,
    system0: AtomicSystem,
    n_steps: int,
    step_size: float,
    f_max: float,
    max_displacement: float = MAX_DISPLACEMENT,
) -> RelaxResult:
    """Steepest descent along the forces, each atom moving at most ``max_displacement`` Å per step.

    Up to ``n_steps`` moves; the returned system is always the last one
    evaluated, so ``energies[-1]`` is its energy.
    """
    if step_size <= 0:
        raise ValueError(f"step_size must be positive, got {step_size}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    calculator.reset()
    result = RelaxResult(system=system0)
    system = system0
    start = time.perf_counter()
    for moves in range(n_steps + 1):
        try:
            energy, forces = calculator(system)
        except SolverDivergenceError as e:
            logger.error("Relaxation stopped after %d steps: %s", result.iterations, e)
            break
        result.system = system
        result.energies.append(energy)
        if calculator.last_stats is not None:
            result.solver_steps.append(calculator.last_stats.steps)
        norms = np.linalg.norm(forces, axis=1)
        if norms.max(initial=0.0) < f_max:
            result.converged = True
            break
        if moves == n_steps:
            break
        disp = step_size * forces
        lengths = np.linalg.norm(disp, axis=1)
        scale = np.minimum(1.0, max_displacement / np.where(lengths > 0, lengths, 1.0))
        system = system.replace(positions=system.positions + disp * scale[:, None])
    result.wall_time = time.perf_counter() - start
    return result


ABLATION_COLUMNS = ["FP reuse", "eps FP reuse", "Time [s]", "# Solver steps", "# Solver steps std", "Final energy [eV]"]


def relax_ablation(
    model: ForceField,
    systems: Sequence[AtomicSystem],
    solver: SolverConfig,
    n_steps: int,
    step_size: float,
    f_max: float,
) -> pd.DataFrame:
    """No reuse / reuse at eps_train / reuse at eps_reuse, one row each."""
    settings = [
        ("no", solver.eps_train, ModelCalculator(model, solver, reuse=False)),
        ("yes", solver.eps_train, ModelCalculator(model, replace(solver, eps_reuse=solver.eps_train), reuse=True)),
        ("yes", solver.eps_reuse, ModelCalculator(model, solver, reuse=True)),
    ]
    rows = []
    for label, eps, calculator in settings:
        steps, times, energies = [], [], []
        for system in systems:
            result = relax(calculator, system, n_steps, step_size, f_max)
            steps.extend(result.solver_steps)
            times.append(result.wall_time)
            energies.append(result.energies[-1] if result.energies else np.nan)
        row = [
            label,
            eps,
            float(np.mean(times)) if times else 0.0,
            float(np.mean(steps)) if steps else 0.0,
            float(np.std(steps)) if steps else 0.0,
            float(np.mean(energies)) if energies else np.nan,
        ]
        rows.append(dict(zip(ABLATION_COLUMNS, row)))
        logger.info("relaxation ablation %s eps=%.0e: %.2f steps", label, eps, row[3])
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)
