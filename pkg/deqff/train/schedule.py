import math

from .config import TrainConfig


def lr_schedule(step: int, cfg: TrainConfig, total_steps: int, warmup_steps: int) -> float:
    """Linear warmup lr_initial -> lr_max, then cosine decay reaching lr_min at the last step.

    Without warmup the cosine starts from lr_initial, so step 0 always runs at lr_initial.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    warmup_steps = min(warmup_steps, total_steps - 1)
    if step < warmup_steps:
        return cfg.lr_initial + (cfg.lr_max - cfg.lr_initial) * step / warmup_steps
    top = cfg.lr_max if warmup_steps > 0 else cfg.lr_initial
    span = max(total_steps - 1 - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return cfg.lr_min + 0.5 * (top - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))
