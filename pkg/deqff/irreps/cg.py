"""
Clebsch-Gordan coefficients and the weighted tensor product.

For a path (l1, l2, l3) the coefficient array C[m1, m2, m3] is the invariant
vector of D_l1 (x) D_l2 (x) D_l3, i.e. the null space of (D (x) D (x) D - I)
over a few generic rotations. It is unique up to scale whenever the triangle
rule holds. Normalization: ||C||_F^2 = 2 l3 + 1; sign: the first entry with
|C| > 1e-6 (C order) is positive. With this choice

    (1, 1, 0):  sum_ab C f_a g_b = (f . g) / sqrt(3)
    (1, 1, 1):  sum_ab C f_a g_b = (f x g) / sqrt(2)   (f, g in Y_1 order)
    (0, l, l):  C[0] = identity
"""

from dataclasses import dataclass
from functools import lru_cache
from logging import getLogger
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .layout import DTYPE, MAX_DEGREE, IrrepsLayout, IrrepsTensor, Rotation
from .wigner import wigner_d

logger = getLogger(__name__)

Path = Tuple[int, int, int]


def triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l1 - l2) <= l3 <= l1 + l2


@dataclass(frozen=True)
class CGPath:
    l1: int
    l2: int
    l3: int
    coefficients: torch.Tensor
    allowed: bool


@lru_cache(maxsize=None)
def _invariant_coefficients(l1: int, l2: int, l3: int) -> np.ndarray:
    d1, d2, d3 = 2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1
    rng = np.random.default_rng(104729)
    rows = []
    for _ in range(3):
        R = Rotation.random(rng)
        K = np.kron(
            np.kron(wigner_d(l1, R).numpy(), wigner_d(l2, R).numpy()), wigner_d(l3, R).numpy()
        )
        rows.append(K - np.eye(d1 * d2 * d3))
    _, _, vh = np.linalg.svd(np.vstack(rows))
    c = vh[-1].reshape(d1, d2, d3)
    c *= np.sqrt(d3) / np.linalg.norm(c)
    flat = c.ravel()
    lead = np.flatnonzero(np.abs(flat) > 1e-6)[0]
    if flat[lead] < 0:
        c = -c
    c[np.abs(c) < 1e-13] = 0.0
    return c


def clebsch_gordan(l1: int, l2: int, l3: int) -> CGPath:
    """Coefficients for one coupling path; all-zero and flagged if forbidden."""
    for l in (l1, l2, l3):
        if l < 0 or l > MAX_DEGREE:
            raise ValueError(f"Degree {l} outside the cached range 0..{MAX_DEGREE}")
    if not triangle(l1, l2, l3):
        logger.debug("path (%d, %d, %d) violates the triangle rule", l1, l2, l3)
        zeros = torch.zeros(2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1, dtype=DTYPE)
        return CGPath(l1, l2, l3, zeros, allowed=False)
    coeff = torch.from_numpy(_invariant_coefficients(l1, l2, l3).copy())
    return CGPath(l1, l2, l3, coeff, allowed=True)


class CGTable:
    """All allowed paths up to ``l_max``, built once and then read-only."""

    def __init__(self, l_max: int):
        if l_max < 0 or l_max > MAX_DEGREE:
            raise ValueError(f"l_max={l_max} outside the cached range 0..{MAX_DEGREE}")
        self.l_max = l_max
        self._paths: Dict[Path, torch.Tensor] = {}
        for l1 in range(l_max + 1):
            for l2 in range(l_max + 1):
                for l3 in range(abs(l1 - l2), min(l1 + l2, l_max) + 1):
                    self._paths[(l1, l2, l3)] = clebsch_gordan(l1, l2, l3).coefficients

    def __getitem__(self, path: Path) -> torch.Tensor:
        try:
            return self._paths[path]
        except KeyError:
            raise ValueError(f"Path {path} is not in the table (l_max={self.l_max})") from None

    def __contains__(self, path: Path) -> bool:
        return path in self._paths

    def paths(self) -> List[Path]:
        return list(self._paths)


@lru_cache(maxsize=None)
def cg_table(l_max: int) -> CGTable:
    return CGTable(l_max)


def tensor_product_paths(
    in1: IrrepsLayout, in2: IrrepsLayout, out: IrrepsLayout
) -> List[Path]:
    """Allowed (l1, l2, l3) paths in deterministic lexicographic order."""
    degrees3 = set(out.degree_map())
    paths = []
    for l1 in sorted(in1.degree_map()):
        for l2 in sorted(in2.degree_map()):
            for l3 in sorted(degrees3):
                if triangle(l1, l2, l3):
                    paths.append((l1, l2, l3))
    return paths


def tensor_product(
    f: IrrepsTensor,
    g: IrrepsTensor,
    weights: torch.Tensor,
    out_layout: IrrepsLayout,
    paths: Optional[Sequence[Path]] = None,
) -> IrrepsTensor:
    """Channel-wise weighted Clebsch-Gordan product.

    out[l3]_c = sum over paths (l1, l2, l3) of
                w[path, c] * sum_{m1 m2} C[m1, m2, m3] f[l1]_c[m1] g[l2]_c'[m2]

    Args:
        f: first operand; every degree carries the same C channels
        g: second operand; every degree carries either 1 channel (broadcast)
           or C channels
        weights: (..., n_paths, C) per-path, per-channel weights; leading
           dimensions broadcast against the data of f and g
        out_layout: degrees to produce, each with C channels
        paths: path list, defaults to ``tensor_product_paths``

    Returns:
        IrrepsTensor with ``out_layout``
    """
    f_mul = f.layout.degree_map()
    g_mul = g.layout.degree_map()
    o_mul = out_layout.degree_map()
    channels = set(f_mul.values()) | set(o_mul.values())
    if len(channels) != 1:
        raise ValueError(
            f"f and out layouts must share one channel count, got {f.layout} / {out_layout}"
        )
    (C,) = channels
    for l, mul in g_mul.items():
        if mul not in (1, C):
            raise ValueError(f"g degree {l} has {mul} channels; expected 1 or {C}")

    paths = list(paths) if paths is not None else tensor_product_paths(f.layout, g.layout, out_layout)
    if weights.shape[-2:] != (len(paths), C):
        raise ValueError(
            f"weights trailing shape {tuple(weights.shape[-2:])} does not match "
            f"(n_paths={len(paths)}, channels={C})"
        )
    max_l = max(max(f_mul), max(g_mul), max(o_mul))
    table = cg_table(max_l)

    f_blocks = dict(zip(f.layout.degrees, f.blocks()))
    g_blocks = dict(zip(g.layout.degrees, g.blocks()))
    out_blocks: Dict[int, torch.Tensor] = {}
    for p, (l1, l2, l3) in enumerate(paths):
        if l1 not in f_mul or l2 not in g_mul or l3 not in o_mul or not triangle(l1, l2, l3):
            raise ValueError(f"Path {(l1, l2, l3)} does not match the layouts")
        cg = table[(l1, l2, l3)].to(f.data.dtype)
        a = f_blocks[l1]
        b = g_blocks[l2]
        if b.shape[-2] == 1:
            term = torch.einsum("...ci,...j,ijk->...ck", a, b[..., 0, :], cg)
        else:
            term = torch.einsum("...ci,...cj,ijk->...ck", a, b, cg)
        term = term * weights[..., p, :, None]
        out_blocks[l3] = out_blocks[l3] + term if l3 in out_blocks else term

    lead = torch.broadcast_shapes(f.data.shape[:-1], g.data.shape[:-1], weights.shape[:-2])
    blocks = []
    for l, mul in out_layout.entries:
        if l in out_blocks:
            blocks.append(out_blocks[l].expand(*lead, mul, 2 * l + 1))
        else:
            blocks.append(torch.zeros(*lead, mul, 2 * l + 1, dtype=f.data.dtype))
    return IrrepsTensor.from_blocks(out_layout, blocks)
