"""
Evaluation statistics: MAE, per-system minmax normalization across models and
its average, solver-step histograms and forward-pass timing.
"""

import time
from dataclasses import asdict, dataclass
from logging import getLogger
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from .deq import SolverConfig, deq_forward
from .eqnet import ForceField, explicit_forward
from .sim.trajectory import Trajectory

logger = getLogger(__name__)

WARMUP_CALLS = 10


def mae(pred, gt) -> float:
    """Mean absolute error over every component."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"Shapes differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("Cannot take the MAE of an empty series")
    return float(np.mean(np.abs(pred - gt)))


def force_mae_per_atom(pred, gt) -> float:
    """Mean over atoms of the Euclidean norm of the force error."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ValueError(f"Shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def minmax_normalize(values: pd.Series, system: str = "") -> pd.Series:
    """(x - min) / (max - min): best model 0, worst 1."""
    values = pd.Series(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise ValueError(f"Non-finite errors for system {system!r}")
    if hi == lo:
        raise ValueError(f"All models have the same error on system {system!r}; range is zero")
    return (values - lo) / (hi - lo)


def normalize_table(errors: pd.DataFrame) -> pd.DataFrame:
    """Rows are systems, columns models; every row rescaled to [0, 1]."""
    return errors.apply(lambda row: minmax_normalize(row, system=str(row.name)), axis=1)


def aggregate(normalized: pd.DataFrame) -> pd.Series:
    """Per-model mean over systems."""
    if normalized.empty:
        raise ValueError("Nothing to aggregate")
    return normalized.mean(axis=0)


@dataclass
class StepHistogram:
    table: pd.DataFrame
    mean: float
    median: float


def step_histogram(steps: Sequence[int]) -> StepHistogram:
    """Share of samples (percent) that needed each number of solver steps."""
    steps = np.asarray(list(steps), dtype=np.int64)
    if steps.size == 0:
        raise ValueError("No solver steps recorded")
    values, counts = np.unique(steps, return_counts=True)
    percent = 100.0 * counts / counts.sum()
    table = pd.DataFrame(
        {
            "steps": values,
            "count": counts,
            "percent": percent,
            "log10_percent": np.log10(percent),
        }
    )
    return StepHistogram(table=table, mean=float(steps.mean()), median=float(np.median(steps)))


@dataclass
class EvalReport:
    system: str
    model: str
    n_frames: int
    force_mae: float
    force_mae_atom: float
    energy_mae: float
    mean_steps: float
    median_steps: float
    mean_time: float

    def to_row(self) -> dict:
        return asdict(self)


def evaluate(
    model: ForceField,
    trajectory: Trajectory,
    solver: SolverConfig,
    tol: Optional[float] = None,
    reuse: bool = False,
    system: str = "system",
    name: str = "model",
    warmup: int = WARMUP_CALLS,
    predictions: Optional[List[np.ndarray]] = None,
) -> Tuple[EvalReport, pd.DataFrame]:
    """Predict every labelled frame; timing covers the forward solve and heads only.

    Predicted forces are appended to ``predictions`` when a list is given.
    """
    frames = [f for f in trajectory if f.labelled]
    if not frames:
        raise ValueError("Trajectory has no labelled frames")
    is_deq = model.layer_config.kind == "deq"

    def forward(frame, ctx, previous):
        if not is_deq:
            with torch.no_grad():
                energy, forces = explicit_forward(frame.system, model, ctx=ctx)
            return float(energy), forces.numpy(), None, None
        out = deq_forward(frame.system, model, solver, reuse=previous, tol=tol, ctx=ctx)
        return float(out.energy), out.forces.numpy(), out.z, out.stats

    first_ctx = model.prepare(frames[0].system)
    for _ in range(warmup):
        forward(frames[0], first_ctx, None)

    rows = []
    previous = None
    for i, frame in enumerate(frames):
        ctx = model.prepare(frame.system)
        start = time.perf_counter()
        energy, forces, z, stats = forward(frame, ctx, previous if reuse else None)
        elapsed = time.perf_counter() - start
        if predictions is not None:
            predictions.append(forces)
        previous = z
        rows.append(
            {
                "frame": i,
                "energy_pred": energy,
                "energy_true": frame.energy,
                "energy_abs_err": abs(energy - frame.energy),
                "force_mae": mae(forces, frame.forces),
                "force_mae_atom": force_mae_per_atom(forces, frame.forces),
                "steps": stats.steps if stats else 0,
                "residual": stats.residual if stats else 0.0,
                "time": elapsed,
            }
        )
    samples = pd.DataFrame(rows)
    report = EvalReport(
        system=system,
        model=name,
        n_frames=len(frames),
        force_mae=float(samples["force_mae"].mean()),
        force_mae_atom=float(samples["force_mae_atom"].mean()),
        energy_mae=float(samples["energy_abs_err"].mean()),
        mean_steps=float(samples["steps"].mean()),
        median_steps=float(samples["steps"].median()),
        mean_time=float(samples["time"].mean()),
    )
    logger.info(
        "%s on %s: force MAE %.4f eV/Å, energy MAE %.4f eV, %.2f steps",
        name,
        system,
        report.force_mae,
        report.energy_mae,
        report.mean_steps,
    )
    return report, samples


SWEEP_COLUMNS = ["tolerance", "force_mae", "force_dev", "mean_time", "mean_steps"]


def tolerance_sweep(
    model: ForceField, trajectory: Trajectory, solver: SolverConfig, tolerances: Sequence[float]
) -> pd.DataFrame:
    """Evaluate at every tolerance, tightest first, every solve from zeros.

    ``force_dev`` is the force MAE against the predictions at the tightest
    tolerance, so it is 0 on the first row.
    """
    tolerances = sorted(float(t) for t in tolerances)
    if not tolerances:
        raise ValueError("No tolerances given")
    if tolerances[0] <= 0:
        raise ValueError(f"Tolerances must be positive, got {tolerances[0]}")
    reference: Optional[List[np.ndarray]] = None
    rows = []
    for tol in tolerances:
        forces: List[np.ndarray] = []
        report, _ = evaluate(model, trajectory, solver, tol=tol, warmup=1, predictions=forces)
        if reference is None:
            reference = forces
        rows.append(
            {
                "tolerance": tol,
                "force_mae": report.force_mae,
                "force_dev": float(np.mean([mae(f, r) for f, r in zip(forces, reference)])),
                "mean_time": report.mean_time,
                "mean_steps": report.mean_steps,
            }
        )
        logger.info("tolerance %.0e: %.2f steps, deviation %.3g", tol, report.mean_steps, rows[-1]["force_dev"])
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
