"""
Atomic systems and molecular graphs: cutoff neighbor lists, relative vectors
and the Gaussian radial basis with a smooth cutoff envelope.

Open boundary conditions only.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

# symbol, mass (amu) per atomic number
ELEMENTS: Dict[int, tuple] = {
    1: ("H", 1.008),
    2: ("He", 4.0026),
    3: ("Li", 6.94),
    4: ("Be", 9.0122),
    5: ("B", 10.81),
    6: ("C", 12.011),
    7: ("N", 14.007),
    8: ("O", 15.999),
    9: ("F", 18.998),
    10: ("Ne", 20.180),
}
SYMBOL_TO_NUMBER = {symbol: number for number, (symbol, _) in ELEMENTS.items()}

COINCIDENT_DISTANCE = 1e-6


@dataclass(frozen=True)
class GraphConfig:
    r_cut: float = 5.0
    max_neighbors: int = 32
    num_basis: int = 16
    basis_width: float = 0.0  # 0 -> center spacing

    def __post_init__(self):
        if self.r_cut <= 0:
            raise ValueError(f"r_cut must be positive, got {self.r_cut}")
        if self.max_neighbors < 1:
            raise ValueError(f"max_neighbors must be >= 1, got {self.max_neighbors}")
        if self.num_basis < 1:
            raise ValueError(f"num_basis must be >= 1, got {self.num_basis}")

    def basis(self) -> "RadialBasis":
        return RadialBasis.evenly_spaced(self.num_basis, self.r_cut, self.basis_width or None)


@dataclass(frozen=True)
class AtomicSystem:
    """Atomic numbers and positions (Å); velocities (Å/fs) and masses (amu) optional."""

    atomic_numbers: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None

    def __post_init__(self):
        numbers = np.asarray(self.atomic_numbers, dtype=np.int64).reshape(-1)
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(numbers)
        if positions.shape[0] != n:
            raise ValueError(f"{n} atomic numbers but {positions.shape[0]} positions")
        if n and numbers.min() < 1:
            raise ValueError(f"Atomic numbers must be >= 1, got {numbers.min()}")
        object.__setattr__(self, "atomic_numbers", numbers)
        object.__setattr__(self, "positions", positions)
        if self.velocities is not None:
            velocities = np.asarray(self.velocities, dtype=np.float64).reshape(-1, 3)
            if velocities.shape[0] != n:
                raise ValueError(f"{n} atoms but {velocities.shape[0]} velocities")
            object.__setattr__(self, "velocities", velocities)
        if self.masses is not None:
            masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
            if masses.shape[0] != n:
                raise ValueError(f"{n} atoms but {masses.shape[0]} masses")
            if n and masses.min() <= 0:
                raise ValueError("Masses must be positive")
            object.__setattr__(self, "masses", masses)

    @property
    def n_atoms(self) -> int:
        return len(self.atomic_numbers)

    @property
    def symbols(self):
        return [ELEMENTS[int(z)][0] for z in self.atomic_numbers]

    def with_default_masses(self) -> "AtomicSystem":
        if self.masses is not None:
            return self
        try:
            masses = np.array([ELEMENTS[int(z)][1] for z in self.atomic_numbers])
        except KeyError as e:
            raise ValueError(f"No mass tabulated for atomic number {e.args[0]}") from None
        return replace(self, masses=masses)

    def replace(self, **changes) -> "AtomicSystem":
        return replace(self, **changes)


@dataclass(frozen=True)
class EdgeList:
    """Directed edges src -> dst with r_vec = r_src - r_dst (from dst to src)."""

    src: np.ndarray
    dst: np.ndarray
    r_vec: np.ndarray
    dist: np.ndarray
    n_atoms: int = 0

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> np.ndarray:
        return np.stack([self.src, self.dst], axis=1)


@dataclass(frozen=True)
class RadialBasis:
    centers: np.ndarray
    width: float
    r_cut: float
    num_basis: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "num_basis", len(self.centers))
        if self.width <= 0:
            raise ValueError(f"Basis width must be positive, got {self.width}")

    @classmethod
    def evenly_spaced(cls, num_basis: int, r_cut: float, width: Optional[float] = None) -> "RadialBasis":
        centers = np.linspace(0.0, r_cut, num_basis)
        if width is None:
            width = r_cut / max(num_basis - 1, 1)
        return cls(centers=centers, width=width, r_cut=r_cut)


def envelope(dist, r_cut: float) -> np.ndarray:
    """C2 polynomial cutoff: 1 at 0, value/slope/curvature 0 at r_cut."""
    x = np.clip(np.asarray(dist, dtype=np.float64) / r_cut, 0.0, 1.0)
    return 1.0 - 10.0 * x**3 + 15.0 * x**4 - 6.0 * x**5


def radial_embed(dist, basis: RadialBasis) -> np.ndarray:
    """Gaussian bumps times the cutoff envelope; shape (..., num_basis)."""
    d = np.asarray(dist, dtype=np.float64)
    if d.size and (d.min() <= 0.0 or d.max() > basis.r_cut):
        raise ValueError(
            f"Distances must lie in (0, {basis.r_cut}], got range [{d.min()}, {d.max()}]"
        )
    gauss = np.exp(-0.5 * ((d[..., None] - basis.centers) / basis.width) ** 2)
    return gauss * envelope(d, basis.r_cut)[..., None]


def build_neighbor_list(system: AtomicSystem, r_cut: float, max_neighbors: int) -> EdgeList:
    """All ordered pairs within r_cut, truncated to the nearest ``max_neighbors``
    sources per destination (ties broken by lower source index).

    Edges are sorted by (dst, dist, src).
    """
    if r_cut <= 0:
        raise ValueError(f"r_cut must be positive, got {r_cut}")
    if max_neighbors < 1:
        raise ValueError(f"max_neighbors must be >= 1, got {max_neighbors}")
    pos = system.positions
    n = system.n_atoms
    # diff[t, s] = r_s - r_t
    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)

    close = np.argwhere(np.triu(dist < COINCIDENT_DISTANCE, k=1))
    if len(close):
        i, j = close[0]
        raise ValueError(
            f"Atoms {i} and {j} coincide (distance {dist[i, j]:.3e} Å); edge direction undefined"
        )

    src, dst = [], []
    for t in range(n):
        candidates = np.flatnonzero(dist[t] <= r_cut)
        order = np.lexsort((candidates, dist[t, candidates]))
        kept = candidates[order][:max_neighbors]
        src.extend(kept.tolist())
        dst.extend([t] * len(kept))

    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    r_vec = pos[src] - pos[dst] if len(src) else np.zeros((0, 3))
    return EdgeList(
        src=src,
        dst=dst,
        r_vec=r_vec,
        dist=np.linalg.norm(r_vec, axis=-1),
        n_atoms=n,
    )
