"""
AdamW with decoupled weight decay. For every parameter theta with gradient g
at step t:

    theta <- theta * (1 - lr * weight_decay)
    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g^2
    theta <- theta - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)

Only weight matrices are decayed; biases, norm gains and other scalar or
vector parameters (``embedding.alpha``) sit in a group with weight_decay 0.
Gradients are clipped to a global 2-norm before the update.
"""

from typing import Dict, List

import torch
from torch import nn

from .config import TrainConfig


def decays(name: str, param: nn.Parameter) -> bool:
    return param.ndim > 1 and not name.endswith("bias") and ".norm." not in name


def build_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if decays(name, p) else no_decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(
        [g for g in groups if g["params"]],
        lr=cfg.lr_initial,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
    )


def param_names(model: nn.Module, optimizer: torch.optim.Optimizer) -> List[str]:
    """Parameter names in the order of the optimizer's state indices."""
    by_id = {id(p): name for name, p in model.named_parameters()}
    return [by_id[id(p)] for group in optimizer.param_groups for p in group["params"]]


def optimizer_step(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    grads: Dict[str, torch.Tensor],
    lr: float,
    cfg: TrainConfig,
) -> float:
    """Load named gradients, clip, apply one AdamW update; returns the pre-clip norm."""
    params = dict(model.named_parameters())
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = grads.get(name)
        p.grad = torch.zeros_like(p) if g is None else g.detach().to(p.dtype).clone()
        if not torch.isfinite(p.grad).all():
            raise ValueError(f"Non-finite gradient for parameter {name}")
    norm = nn.utils.clip_grad_norm_([p for p in params.values() if p.requires_grad], cfg.grad_clip)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return float(norm)
