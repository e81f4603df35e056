from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

# Largest degree the cached harmonics / Wigner / Clebsch-Gordan tables serve.
MAX_DEGREE = 3

DTYPE = torch.float64


@dataclass(frozen=True)
class IrrepsLayout:
    """Ordered list of (degree, multiplicity) blocks.

    Flat data is laid out entry by entry; inside an entry every channel owns a
    contiguous block of 2l+1 components ordered m = -l..l.
    """

    entries: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        entries = tuple((int(l), int(mul)) for l, mul in self.entries)
        object.__setattr__(self, "entries", entries)
        prev = 0
        for l, mul in entries:
            if l < 0:
                raise ValueError(f"Degree must be nonnegative, got {l}")
            if mul < 1:
                raise ValueError(f"Multiplicity must be positive, got {mul} for l={l}")
            if l < prev:
                raise ValueError(f"Degrees must be nondecreasing: {entries}")
            prev = l

    @classmethod
    def uniform(cls, l_max: int, channels: int) -> "IrrepsLayout":
        return cls(tuple((l, channels) for l in range(l_max + 1)))

    @property
    def dim(self) -> int:
        return sum(mul * (2 * l + 1) for l, mul in self.entries)

    @property
    def l_max(self) -> int:
        return max((l for l, _ in self.entries), default=0)

    @property
    def degrees(self) -> List[int]:
        return [l for l, _ in self.entries]

    def slices(self) -> List[Tuple[int, int, slice]]:
        out = []
        start = 0
        for l, mul in self.entries:
            stop = start + mul * (2 * l + 1)
            out.append((l, mul, slice(start, stop)))
            start = stop
        return out

    def degree_map(self) -> Dict[int, int]:
        """degree -> multiplicity, for layouts that list every degree once."""
        out: Dict[int, int] = {}
        for l, mul in self.entries:
            if l in out:
                raise ValueError(f"Degree {l} appears more than once in {self.entries}")
            out[l] = mul
        return out

    def split(self, data: torch.Tensor) -> List[torch.Tensor]:
        """Flat (..., dim) -> per-entry views (..., mul, 2l+1)."""
        if data.shape[-1] != self.dim:
            raise ValueError(f"Expected trailing dimension {self.dim}, got {data.shape[-1]}")
        lead = data.shape[:-1]
        return [data[..., s].reshape(*lead, mul, 2 * l + 1) for l, mul, s in self.slices()]

    def merge(self, blocks: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(blocks) != len(self.entries):
            raise ValueError(f"Expected {len(self.entries)} blocks, got {len(blocks)}")
        return torch.cat([b.reshape(*b.shape[:-2], b.shape[-2] * b.shape[-1]) for b in blocks], dim=-1)


@dataclass(frozen=True)
class IrrepsTensor:
    """Node features: a layout plus flat data of shape (..., layout.dim)."""

    layout: IrrepsLayout
    data: torch.Tensor

    def __post_init__(self):
        if self.data.shape[-1] != self.layout.dim:
            raise ValueError(
                f"Data length {self.data.shape[-1]} does not match layout dimension {self.layout.dim}"
            )

    def blocks(self) -> List[torch.Tensor]:
        return self.layout.split(self.data)

    @classmethod
    def from_blocks(cls, layout: IrrepsLayout, blocks: Sequence[torch.Tensor]) -> "IrrepsTensor":
        return cls(layout, layout.merge(blocks))

    def block_norms(self) -> List[torch.Tensor]:
        return [b.norm(dim=-1) for b in self.blocks()]


@dataclass(frozen=True)
class Rotation:
    """Proper rotation matrix (orthogonal, det = +1)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"Rotation must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Rotation contains non-finite entries")
        if np.abs(m @ m.T - np.eye(3)).max() > 1e-12:
            raise ValueError("Rotation matrix is not orthogonal (R R^T != I within 1e-12)")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise ValueError(f"Rotation determinant must be +1, got {np.linalg.det(m)}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def random(cls, rng: Optional[np.random.Generator] = None) -> "Rotation":
        rng = rng if rng is not None else np.random.default_rng()
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        # QR leaves ~1e-16 drift; one polar step pins orthogonality
        u, _, vt = np.linalg.svd(q)
        return cls(u @ vt)

    @classmethod
    def about_axis(cls, axis: Sequence[float], angle: float) -> "Rotation":
        k = np.asarray(axis, dtype=np.float64)
        k = k / np.linalg.norm(k)
        kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        m = np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
        u, _, vt = np.linalg.svd(m)
        return cls(u @ vt)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T.copy())

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate (..., 3) Cartesian vectors."""
        return np.asarray(vectors, dtype=np.float64) @ self.matrix.T
