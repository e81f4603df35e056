from .calculator import ModelCalculator, OracleCalculator
from .dataset import (
    gen_dataset,
    perturb,
    read_manifest,
    toy_molecule,
    toy_potential,
    write_manifest,
)
from .drivers import RelaxResult, relax, relax_ablation, run_md
from .dynamics import (
    ACCEL_CONVERSION,
    BOLTZMANN,
    kinetic_energy,
    maxwell_boltzmann,
    temperature,
    velocity_verlet_step,
)
from .markov import MarkovReport, markov_deviation, relative_force_deviation
from .oracle import OraclePotential, oracle_eval
from .trajectory import Frame, Trajectory, read_xyz, write_xyz

__all__ = [
    "ACCEL_CONVERSION",
    "BOLTZMANN",
    "Frame",
    "MarkovReport",
    "ModelCalculator",
    "OracleCalculator",
    "OraclePotential",
    "RelaxResult",
    "Trajectory",
    "gen_dataset",
    "kinetic_energy",
    "markov_deviation",
    "maxwell_boltzmann",
    "oracle_eval",
    "perturb",
    "read_manifest",
    "read_xyz",
    "relative_force_deviation",
    "relax",
    "relax_ablation",
    "run_md",
    "temperature",
    "toy_molecule",
    "toy_potential",
    "velocity_verlet_step",
    "write_manifest",
    "write_xyz",
]
