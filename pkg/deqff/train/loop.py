"""
Training loop for the fixed-point model (implicit gradients) and for the
explicit stack (ordinary autograd).
"""

import math
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from ..deq import SolverConfig, SolverDivergenceError, deq_forward, dropout_mask
from ..eqnet import ForceField, explicit_forward
from ..grad import (
    AdjointNotConvergedError,
    GradReport,
    ModelAdjointHooks,
    correction_gradients,
    ift_backward,
    phantom_1step,
)
from ..lib.utils import write_csv
from ..metrics import mae
from ..sim.trajectory import Frame, Trajectory
from .checkpoint import Checkpoint, capture
from .config import TrainConfig, TrainingAbortedError
from .loss import LossTerms, loss
from .optim import build_optimizer, optimizer_step
from .schedule import lr_schedule

logger = getLogger(__name__)

METRIC_COLUMNS = [
    "epoch", "split", "force_mae", "energy_mae", "mean_steps", "median_steps", "lr", "running_mean_steps"
]


@dataclass
class SampleResult:
    report: GradReport
    terms: LossTerms
    energy: float
    forces: np.ndarray
    steps: int


@dataclass
class TrainResult:
    model: ForceField
    optimizer: torch.optim.Optimizer
    metrics: pd.DataFrame
    generator: torch.Generator
    train_index: np.ndarray
    val_index: np.ndarray

    def checkpoint(self, metadata: Optional[dict] = None) -> Checkpoint:
        return capture(self.model, self.optimizer, metadata, self.generator)


def split_dataset(n_frames: int, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded permutation; ``val_fraction`` of the frames (at least one) held out."""
    if n_frames < 1:
        raise ValueError("Dataset is empty")
    order = np.random.default_rng(seed).permutation(n_frames)
    n_val = int(round(n_frames * val_fraction))
    if val_fraction > 0 and n_frames > 1:
        n_val = min(max(n_val, 1), n_frames - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def energy_shift_per_atom(frames: Sequence[Frame]) -> float:
    return float(np.mean([f.energy / f.system.n_atoms for f in frames]))


def deq_sample(
    model: ForceField,
    frame: Frame,
    cfg: TrainConfig,
    solver: SolverConfig,
    generator: torch.Generator,
    batch_size: int,
) -> SampleResult:
    """Gradient of one sample's loss through the fixed point.

    Forward solve from zeros at eps_train with a fresh dropout mask, IFT (or
    phantom) backward, plus the correction terms of the sampled iterates.
    """
    ctx = model.prepare(frame.system)
    keep = dropout_mask(ctx.n_edges, model.layer_config.path_dropout, generator)
    out = deq_forward(frame.system, model, solver, training=True, keep=keep, ctx=ctx)
    if not out.stats.converged:
        raise TrainingAbortedError(
            f"Forward solve did not converge: residual {out.stats.residual:.3e} after "
            f"{out.stats.steps} steps (tolerance {out.stats.tolerance:.1e})"
        )
    hooks = ModelAdjointHooks(model, ctx, keep)

    def loss_fn(energy, forces):
        t = loss(energy, forces, frame.energy, frame.forces, cfg, batch_size)
        return t.value, t.d_energy, t.d_forces

    energy, forces = hooks.heads(out.z)
    terms = loss(energy, forces, frame.energy, frame.forces, cfg, batch_size)
    dl_dz, head_grads = hooks.vjp_heads(out.z, terms.d_energy, terms.d_forces)
    if cfg.gradient == "ift":
        main = ift_backward(out.z, dl_dz, hooks, solver)
    else:
        main = phantom_1step(out.z, dl_dz, hooks)
    report = GradReport(grads=head_grads) + main
    if cfg.correction and out.samples:
        report = report + correction_gradients(out.samples, loss_fn, hooks)
    hooks.release()
    return SampleResult(report, terms, float(energy), forces.numpy(), out.stats.steps)


def explicit_sample(model: ForceField, frame: Frame, cfg: TrainConfig, batch_size: int) -> SampleResult:
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    energy, forces = explicit_forward(frame.system, model)
    terms = loss(energy, forces, frame.energy, frame.forces, cfg, batch_size)
    names = list(params)
    grads = torch.autograd.grad(
        [energy, forces],
        [params[n] for n in names],
        [terms.d_energy.reshape(energy.shape), terms.d_forces],
        allow_unused=True,
    )
    report = GradReport(
        grads={n: torch.zeros_like(params[n]) if g is None else g for n, g in zip(names, grads)}
    )
    return SampleResult(report, terms, float(energy.detach()), forces.detach().numpy(), 0)


def predict(model: ForceField, frame: Frame, solver: SolverConfig) -> Tuple[float, np.ndarray, int]:
    if model.layer_config.kind == "deq":
        out = deq_forward(frame.system, model, solver)
        return float(out.energy), out.forces.numpy(), out.stats.steps
    with torch.no_grad():
        energy, forces = explicit_forward(frame.system, model)
    return float(energy), forces.numpy(), 0


def train_loop(
    dataset: Union[Trajectory, Sequence[Frame]],
    model: ForceField,
    cfg: TrainConfig,
    solver: SolverConfig,
    metrics_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Train ``model`` in place on labelled frames.

    Returns:
        TrainResult holding the model, optimizer and the per-epoch metrics
        log (one train and one val row per epoch)
    """
    frames: List[Frame] = list(dataset)
    if not frames:
        raise ValueError("Dataset is empty")
    if not all(f.labelled for f in frames):
        raise ValueError("Every training frame needs energy and force labels")

    train_index, val_index = split_dataset(len(frames), cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        model.energy_shift.fill_(energy_shift_per_atom([frames[i] for i in train_index]))

    optimizer = build_optimizer(model, cfg)
    steps_per_epoch = math.ceil(len(train_index) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    is_deq = model.layer_config.kind == "deq"

    rows = []
    running: Dict[str, List[int]] = {"train": [], "val": []}
    step = 0
    for epoch in range(cfg.epochs):
        order = train_index[rng.permutation(len(train_index))]
        f_err, e_err, steps = [], [], []
        lr = lr_schedule(step, cfg, total_steps, warmup_steps)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = GradReport()
            for i in batch:
                frame = frames[i]
                try:
                    if is_deq:
                        result = deq_sample(model, frame, cfg, solver, generator, len(batch))
                    else:
                        result = explicit_sample(model, frame, cfg, len(batch))
                except (SolverDivergenceError, AdjointNotConvergedError) as e:
                    raise TrainingAbortedError(f"epoch {epoch} step {step} frame {i}: {e}") from e
                total = total + result.report
                f_err.append(mae(result.forces, frame.forces))
                e_err.append(abs(result.energy - frame.energy))
                steps.append(result.steps)
            if not total.is_finite():
                raise TrainingAbortedError(f"Non-finite gradient at epoch {epoch} step {step}")
            lr = lr_schedule(step, cfg, total_steps, warmup_steps)
            optimizer_step(model, optimizer, total.grads, lr, cfg)
            step += 1

        running["train"].extend(steps)
        rows.append(_metric_row(epoch, "train", f_err, e_err, steps, lr, running["train"]))

        if len(val_index):
            f_err, e_err, steps = [], [], []
            for i in val_index:
                energy, forces, n_steps = predict(model, frames[i], solver)
                f_err.append(mae(forces, frames[i].forces))
                e_err.append(abs(energy - frames[i].energy))
                steps.append(n_steps)
            running["val"].extend(steps)
            rows.append(_metric_row(epoch, "val", f_err, e_err, steps, lr, running["val"]))

        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            last = rows[-1]
            logger.info(
                "epoch %d/%d %s force MAE %.4f energy MAE %.4f steps %.2f lr %.2e",
                epoch + 1,
                cfg.epochs,
                last["split"],
                last["force_mae"],
                last["energy_mae"],
                last["mean_steps"],
                lr,
            )

    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    if metrics_path is not None:
        write_csv(metrics, metrics_path, comment="training metrics")
    return TrainResult(
        model=model,
        optimizer=optimizer,
        metrics=metrics,
        generator=generator,
        train_index=train_index,
        val_index=val_index,
    )


def _metric_row(epoch, split, f_err, e_err, steps, lr, running) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "force_mae": float(np.mean(f_err)),
        "energy_mae": float(np.mean(e_err)),
        "mean_steps": float(np.mean(steps)),
        "median_steps": float(np.median(steps)),
        "lr": lr,
        "running_mean_steps": float(np.mean(running)),
    }
