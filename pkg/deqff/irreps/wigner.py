"""
Wigner-D matrices for the real harmonics of ``harmonics.py``.

D_l(R) is obtained from the defining identity Y_l(R u) = D_l(R) Y_l(u): the
harmonics are sampled at a fixed set of generic sample directions and the
linear system is solved in the least-squares sense. This is convention-proof
by construction and cheap at the small degrees used here.
"""

from functools import lru_cache
from typing import Tuple, Union

import numpy as np
import torch

from .harmonics import spherical_harmonics
from .layout import DTYPE, MAX_DEGREE, IrrepsTensor, Rotation

RotationLike = Union[Rotation, np.ndarray]


def as_rotation(rotation: RotationLike) -> Rotation:
    if isinstance(rotation, Rotation):
        return rotation
    return Rotation(np.asarray(rotation, dtype=np.float64))


@lru_cache(maxsize=None)
def _sample_directions(l: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(7919 + l)
    dirs = rng.normal(size=(4 * (2 * l + 1), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = spherical_harmonics(l, dirs)[l].numpy()
    return dirs, np.linalg.pinv(y)


def wigner_d(l: int, rotation: RotationLike) -> torch.Tensor:
    """(2l+1, 2l+1) matrix with Y_l(R u) = D Y_l(u)."""
    if l < 0 or l > MAX_DEGREE:
        raise ValueError(f"Degree {l} outside the cached range 0..{MAX_DEGREE}")
    R = as_rotation(rotation).matrix
    if l == 0:
        return torch.ones(1, 1, dtype=DTYPE)
    dirs, pinv = _sample_directions(l)
    rotated = spherical_harmonics(l, dirs @ R.T, check_norm=False)[l].numpy()
    # rotated = Y D^T
    return torch.from_numpy((pinv @ rotated).T.copy())


def apply_rotation(x: IrrepsTensor, rotation: RotationLike) -> IrrepsTensor:
    """Multiply every (l, channel) block by D_l(R)."""
    rotation = as_rotation(rotation)
    cache = {}
    rotated = []
    for (l, _), block in zip(x.layout.entries, x.blocks()):
        if l not in cache:
            cache[l] = wigner_d(l, rotation).to(block.dtype)
        rotated.append(block @ cache[l].T)
    return IrrepsTensor.from_blocks(x.layout, rotated)
