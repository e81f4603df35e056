"""
Real spherical harmonics in component normalization.

Convention
    * ordering m = -l..l inside each degree block
    * |Y_l(u)|^2 = 2l+1 for every unit vector u
    * no Condon-Shortley phase, so Y_1(u) = sqrt(3) * (u_y, u_z, u_x)

The harmonics are evaluated as polynomials in (x, y, z): the azimuthal part
comes from Re/Im (x + iy)^m and the polar part from the associated Legendre
recurrence with the sin^m factor divided out, so the poles need no special
casing.
"""

import math
from typing import List

import numpy as np
import torch

from .layout import DTYPE, MAX_DEGREE

# Cartesian index for each Y_1 component (m = -1, 0, 1)
Y1_TO_CARTESIAN = (1, 2, 0)
# Y_1 component index for each Cartesian axis (x, y, z)
CARTESIAN_TO_Y1 = (2, 0, 1)


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def spherical_harmonics(l_max: int, u, check_norm: bool = True) -> List[torch.Tensor]:
    """Evaluate Y_0..Y_{l_max} at unit vectors.

    Args:
        l_max: highest degree, 0 <= l_max <= MAX_DEGREE
        u: (..., 3) unit vectors (numpy array or tensor)
        check_norm: reject inputs whose norm differs from 1 by more than 1e-9

    Returns:
        list of tensors, entry l has shape (..., 2l+1)
    """
    if l_max < 0:
        raise ValueError(f"l_max must be nonnegative, got {l_max}")
    if l_max > MAX_DEGREE:
        raise ValueError(f"l_max={l_max} exceeds the cached maximum degree {MAX_DEGREE}")
    u = torch.as_tensor(np.asarray(u) if not torch.is_tensor(u) else u, dtype=DTYPE)
    if u.shape[-1] != 3:
        raise ValueError(f"Expected (..., 3) directions, got shape {tuple(u.shape)}")
    if check_norm and u.numel() > 0:
        deviation = (u.norm(dim=-1) - 1.0).abs().max().item()
        if deviation > 1e-9:
            raise ValueError(f"Directions must be unit vectors (max |norm - 1| = {deviation:.3e})")

    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    ones = torch.ones_like(z)

    cos_m = [ones]
    sin_m = [torch.zeros_like(z)]
    for m in range(1, l_max + 1):
        cos_m.append(cos_m[-1] * x - sin_m[-1] * y)
        sin_m.append(sin_m[-1] * x + cos_m[-2] * y)

    # P_l^m(z) / (1 - z^2)^(m/2)
    legendre = {}
    for m in range(l_max + 1):
        legendre[(m, m)] = _double_factorial(2 * m - 1) * ones
        if m + 1 <= l_max:
            legendre[(m + 1, m)] = (2 * m + 1) * z * legendre[(m, m)]
        for l in range(m + 2, l_max + 1):
            legendre[(l, m)] = (
                (2 * l - 1) * z * legendre[(l - 1, m)] - (l + m - 1) * legendre[(l - 2, m)]
            ) / (l - m)

    out = []
    for l in range(l_max + 1):
        comps = []
        for m in range(-l, l + 1):
            am = abs(m)
            norm = math.sqrt((2 * l + 1) * math.factorial(l - am) / math.factorial(l + am))
            if m == 0:
                comps.append(norm * legendre[(l, 0)])
            elif m > 0:
                comps.append(math.sqrt(2.0) * norm * legendre[(l, am)] * cos_m[am])
            else:
                comps.append(math.sqrt(2.0) * norm * legendre[(l, am)] * sin_m[am])
        out.append(torch.stack(comps, dim=-1))
    return out


def vector_to_y1(v: torch.Tensor) -> torch.Tensor:
    """Cartesian (..., 3) -> degree-1 component order, without the sqrt(3)."""
    return v[..., list(Y1_TO_CARTESIAN)]


def y1_to_vector(block: torch.Tensor) -> torch.Tensor:
    """Degree-1 components (..., 3) -> Cartesian (x, y, z)."""
    return block[..., list(CARTESIAN_TO_Y1)]
