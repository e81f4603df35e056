"""
Velocity Verlet integration and Maxwell-Boltzmann velocities.

Units: Å, fs, amu, eV. Accelerations are F / m * ACCEL_CONVERSION in Å/fs^2.
"""

from typing import Callable, Tuple

import numpy as np

from ..graph import AtomicSystem

# 1 eV / (Å amu) in Å / fs^2
ACCEL_CONVERSION = 9.648533212e-3
# eV / K
BOLTZMANN = 8.617333262e-5

ForceFn = Callable[[AtomicSystem], Tuple[float, np.ndarray]]


def _masses(system: AtomicSystem) -> np.ndarray:
    return system.with_default_masses().masses


def kinetic_energy(system: AtomicSystem) -> float:
    """Kinetic energy in eV."""
    if system.velocities is None:
        return 0.0
    m = _masses(system)
    return float(0.5 * np.sum(m[:, None] * system.velocities**2) / ACCEL_CONVERSION)


def temperature(system: AtomicSystem) -> float:
    dof = max(3 * system.n_atoms - 3, 1)
    return 2.0 * kinetic_energy(system) / (dof * BOLTZMANN)


def maxwell_boltzmann(system: AtomicSystem, temperature_k: float, rng: np.random.Generator) -> AtomicSystem:
    """Velocities drawn at ``temperature_k`` with the centre-of-mass drift removed."""
    if temperature_k < 0:
        raise ValueError(f"Temperature must be >= 0, got {temperature_k}")
    system = system.with_default_masses()
    m = system.masses
    sigma = np.sqrt(BOLTZMANN * temperature_k * ACCEL_CONVERSION / m)
    v = rng.normal(size=(system.n_atoms, 3)) * sigma[:, None]
    v -= np.sum(m[:, None] * v, axis=0) / m.sum()
    return system.replace(velocities=v)


def velocity_verlet_step(
    system: AtomicSystem, forces: np.ndarray, dt: float, force_fn: ForceFn
) -> Tuple[AtomicSystem, float, np.ndarray]:
    """One half-kick / drift / half-kick step.

    Args:
        system: current state; missing velocities count as zero
        forces: forces at the current positions (eV/Å)
        dt: time step (fs)
        force_fn: evaluates (energy, forces) at the new positions

    Returns:
        (next system, energy, forces) at the new positions
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    system = system.with_default_masses()
    m = system.masses[:, None]
    v = system.velocities if system.velocities is not None else np.zeros_like(system.positions)
    v_half = v + 0.5 * dt * forces / m * ACCEL_CONVERSION
    moved = system.replace(positions=system.positions + dt * v_half, velocities=v_half)
    energy, new_forces = force_fn(moved)
    v_new = v_half + 0.5 * dt * new_forces / m * ACCEL_CONVERSION
    return moved.replace(velocities=v_new), energy, new_forces
