from dataclasses import dataclass

GRADIENT_MODES = ("ift", "phantom")


class TrainingAbortedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    force_weight: float = 80.0
    energy_weight: float = 1.0
    batch_size: int = 4
    epochs: int = 50
    lr_initial: float = 1e-4
    lr_max: float = 2e-3
    lr_min: float = 1e-6
    warmup_epochs: int = 2
    weight_decay: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1000.0
    val_fraction: float = 0.05
    gradient: str = "ift"
    correction: bool = True
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.force_weight < 0 or self.energy_weight < 0 or self.force_weight + self.energy_weight == 0:
            raise ValueError(
                f"Loss weights must be nonnegative and not both zero, got {self.force_weight} / {self.energy_weight}"
            )
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"batch_size and epochs must be >= 1, got {self.batch_size} / {self.epochs}")
        if not 0 < self.lr_min <= self.lr_initial <= self.lr_max:
            raise ValueError(
                f"Learning rates must satisfy 0 < min <= initial <= max, got "
                f"{self.lr_min} / {self.lr_initial} / {self.lr_max}"
            )
        if self.warmup_epochs < 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ValueError("warmup_epochs >= 0, weight_decay >= 0 and grad_clip > 0 required")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.gradient not in GRADIENT_MODES:
            raise ValueError(f"gradient must be one of {GRADIENT_MODES}, got {self.gradient!r}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
