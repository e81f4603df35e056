"""
Ground-truth potential used to label synthetic data: harmonic bonds plus a
Lennard-Jones term between non-bonded pairs, switched off smoothly between
``lj_switch`` and ``lj_cutoff``.

    E = sum_bonds k/2 (r - r0)^2 + sum_nonbonded 4 eps ((s/r)^12 - (s/r)^6) S(r)

Units: eV, Å.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..graph import AtomicSystem

# (i, j, rest length Å, stiffness eV/Å^2)
BondSpec = Tuple[int, int, float, float]


@dataclass(frozen=True)
class OraclePotential:
    bonds: Tuple[BondSpec, ...] = ()
    lj_epsilon: float = 0.02
    lj_sigma: float = 1.6
    lj_switch: float = 4.0
    lj_cutoff: float = 5.0

    def __post_init__(self):
        bonds = tuple((int(i), int(j), float(r0), float(k)) for i, j, r0, k in self.bonds)
        for i, j, r0, k in bonds:
            if i == j:
                raise ValueError(f"Bond ({i}, {j}) joins an atom to itself")
            if r0 <= 0 or k < 0:
                raise ValueError(f"Bond ({i}, {j}) needs r0 > 0 and k >= 0, got {r0} / {k}")
        object.__setattr__(self, "bonds", bonds)
        if self.lj_epsilon < 0 or self.lj_sigma <= 0:
            raise ValueError("lj_epsilon >= 0 and lj_sigma > 0 required")
        if not 0 < self.lj_switch < self.lj_cutoff:
            raise ValueError(
                f"Need 0 < lj_switch < lj_cutoff, got {self.lj_switch} / {self.lj_cutoff}"
            )

    def validate(self, n_atoms: int) -> None:
        for i, j, _, _ in self.bonds:
            if not (0 <= i < n_atoms and 0 <= j < n_atoms):
                raise ValueError(f"Bond ({i}, {j}) references an atom outside 0..{n_atoms - 1}")

    def bonded_pairs(self) -> set:
        return {(min(i, j), max(i, j)) for i, j, _, _ in self.bonds}


def _switch(r: np.ndarray, r_on: float, r_off: float) -> Tuple[np.ndarray, np.ndarray]:
    x = np.clip((r - r_on) / (r_off - r_on), 0.0, 1.0)
    s = 1.0 - 10.0 * x**3 + 15.0 * x**4 - 6.0 * x**5
    ds = (-30.0 * x**2 + 60.0 * x**3 - 30.0 * x**4) / (r_off - r_on)
    return s, ds


def oracle_eval(system: AtomicSystem, potential: OraclePotential) -> Tuple[float, np.ndarray]:
    """Energy (eV) and analytic forces -dE/dx (eV/Å)."""
    n = system.n_atoms
    potential.validate(n)
    pos = system.positions
    forces = np.zeros((n, 3))
    energy = 0.0

    for i, j, r0, k in potential.bonds:
        d = pos[i] - pos[j]
        r = np.linalg.norm(d)
        if r == 0.0:
            raise ValueError(f"Bonded atoms {i} and {j} coincide")
        energy += 0.5 * k * (r - r0) ** 2
        f = -k * (r - r0) * d / r
        forces[i] += f
        forces[j] -= f

    if potential.lj_epsilon > 0 and n > 1:
        iu, ju = np.triu_indices(n, k=1)
        bonded = potential.bonded_pairs()
        mask = np.array([(a, b) not in bonded for a, b in zip(iu, ju)], dtype=bool)
        iu, ju = iu[mask], ju[mask]
        d = pos[iu] - pos[ju]
        r = np.linalg.norm(d, axis=1)
        close = r < potential.lj_cutoff
        iu, ju, d, r = iu[close], ju[close], d[close], r[close]
        if np.any(r == 0.0):
            raise ValueError("Non-bonded atoms coincide")
        eps, sig = potential.lj_epsilon, potential.lj_sigma
        sr6 = (sig / r) ** 6
        v = 4.0 * eps * (sr6**2 - sr6)
        dv = 4.0 * eps * (-12.0 * sr6**2 + 6.0 * sr6) / r
        s, ds = _switch(r, potential.lj_switch, potential.lj_cutoff)
        energy += float(np.sum(v * s))
        dedr = dv * s + v * ds
        f = -(dedr / r)[:, None] * d
        np.add.at(forces, iu, f)
        np.add.at(forces, ju, -f)

    return float(energy), forces
