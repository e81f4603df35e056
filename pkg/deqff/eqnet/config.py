from dataclasses import dataclass

from ..irreps import MAX_DEGREE, IrrepsLayout

MODEL_KINDS = ("deq", "explicit")


@dataclass(frozen=True)
class LayerConfig:
    """Model hyperparameters.

    ``num_layers`` counts the weight-tied layers inside f_theta for
    ``kind = deq`` and the depth L of the stack for ``kind = explicit``.
    """

    kind: str = "deq"
    num_layers: int = 2
    l_max: int = 2
    channels: int = 8
    num_heads: int = 1
    attn_hidden: int = 16
    radial_hidden: int = 16
    energy_hidden: int = 16
    path_dropout: float = 0.05
    max_atomic_number: int = 10
    avg_neighbors: float = 6.0
    residual_gain: float = 0.1
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if not 0 <= self.l_max <= MAX_DEGREE:
            raise ValueError(f"l_max must lie in 0..{MAX_DEGREE}, got {self.l_max}")
        for name in ("channels", "num_heads", "attn_hidden", "radial_hidden", "energy_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.channels % self.num_heads:
            raise ValueError(
                f"channels ({self.channels}) must be divisible by num_heads ({self.num_heads})"
            )
        if not 0.0 <= self.path_dropout < 1.0:
            raise ValueError(f"path_dropout must lie in [0, 1), got {self.path_dropout}")
        if self.avg_neighbors <= 0:
            raise ValueError(f"avg_neighbors must be positive, got {self.avg_neighbors}")

    @property
    def layout(self) -> IrrepsLayout:
        return IrrepsLayout.uniform(self.l_max, self.channels)
