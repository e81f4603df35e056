from dataclasses import dataclass

import torch

from .config import TrainConfig


@dataclass(frozen=True)
class LossTerms:
    value: float
    force: float
    energy: float
    d_energy: torch.Tensor
    d_forces: torch.Tensor


def loss(
    energy_pred: torch.Tensor,
    forces_pred: torch.Tensor,
    energy_gt,
    forces_gt,
    cfg: TrainConfig,
    batch_size: int = 1,
) -> LossTerms:
    """(lambda_F * mean_i ||F_i - F_i^gt|| + lambda_E * |E - E^gt|) / batch_size.

    Cotangents are exact; the force cotangent of an atom with zero error is 0.
    """
    forces_gt = torch.as_tensor(forces_gt, dtype=forces_pred.dtype)
    energy_gt = torch.as_tensor(energy_gt, dtype=forces_pred.dtype)
    if forces_pred.shape != forces_gt.shape:
        raise ValueError(f"Force shapes differ: {tuple(forces_pred.shape)} vs {tuple(forces_gt.shape)}")
    energy_pred = torch.as_tensor(energy_pred, dtype=forces_pred.dtype).detach()
    diff = forces_pred.detach() - forces_gt
    n_atoms = max(diff.shape[0], 1)
    norms = diff.norm(dim=-1)
    force_term = norms.sum() / n_atoms
    e_diff = energy_pred - energy_gt
    energy_term = e_diff.abs()

    safe = torch.where(norms > 0, norms, torch.ones_like(norms))
    d_forces = torch.where(norms[:, None] > 0, diff / safe[:, None], torch.zeros_like(diff))
    d_forces = d_forces * (cfg.force_weight / (n_atoms * batch_size))
    d_energy = torch.sign(e_diff) * (cfg.energy_weight / batch_size)
    value = (cfg.force_weight * force_term + cfg.energy_weight * energy_term) / batch_size
    return LossTerms(
        value=float(value),
        force=float(force_term),
        energy=float(energy_term),
        d_energy=d_energy,
        d_forces=d_forces,
    )
