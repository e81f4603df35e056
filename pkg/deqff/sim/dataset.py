import json
from dataclasses import asdict
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..graph import AtomicSystem
from .calculator import OracleCalculator
from .drivers import run_md
from .dynamics import maxwell_boltzmann
from .oracle import OraclePotential
from .trajectory import Trajectory

logger = getLogger(__name__)

# C C O H H H H, roughly acetaldehyde; Å
TOY_NUMBERS = (6, 6, 8, 1, 1, 1, 1)
TOY_POSITIONS = (
    (0.000, 0.000, 0.000),
    (1.500, 0.000, 0.000),
    (2.105, 1.048, 0.000),
    (-0.363, 1.028, 0.000),
    (-0.363, -0.514, 0.890),
    (-0.363, -0.514, -0.890),
    (2.055, -0.961, 0.000),
)
TOY_BONDS = (
    (0, 1, 1.50, 20.0),
    (1, 2, 1.21, 40.0),
    (0, 3, 1.09, 30.0),
    (0, 4, 1.09, 30.0),
    (0, 5, 1.09, 30.0),
    (1, 6, 1.11, 30.0),
)


def toy_molecule() -> AtomicSystem:
    return AtomicSystem(
        atomic_numbers=np.array(TOY_NUMBERS, dtype=np.int64),
        positions=np.array(TOY_POSITIONS, dtype=np.float64),
    ).with_default_masses()


def toy_potential() -> OraclePotential:
    return OraclePotential(bonds=TOY_BONDS)


def perturb(system: AtomicSystem, scale: float, rng: np.random.Generator) -> AtomicSystem:
    """Gaussian displacement of every coordinate by ``scale`` Å."""
    return system.replace(positions=system.positions + rng.normal(scale=scale, size=system.positions.shape))


def gen_dataset(
    potential: OraclePotential,
    system0: AtomicSystem,
    n_frames: int,
    dt: float,
    temperature: float,
    seed: int,
) -> Trajectory:
    """Oracle-driven NVE trajectory of ``n_frames`` labelled frames, deterministic from ``seed``."""
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    rng = np.random.default_rng(seed)
    system = maxwell_boltzmann(system0, temperature, rng)
    trajectory = run_md(OracleCalculator(potential), system, n_frames - 1, dt, log_every=max(n_frames // 10, 1))
    trajectory.metadata.update({"seed": str(seed), "temperature": repr(float(temperature))})
    logger.info("generated %d frames at %.1f K", len(trajectory), temperature)
    return trajectory


def potential_to_dict(potential: OraclePotential) -> Dict[str, Any]:
    out = asdict(potential)
    out["bonds"] = [list(b) for b in potential.bonds]
    return out


def potential_from_dict(data: Dict[str, Any]) -> OraclePotential:
    data = dict(data)
    data["bonds"] = tuple(tuple(b) for b in data.get("bonds", ()))
    return OraclePotential(**data)


def system_to_dict(system: AtomicSystem) -> Dict[str, Any]:
    return {"atomic_numbers": system.atomic_numbers.tolist(), "positions": system.positions.tolist()}


def system_from_dict(data: Dict[str, Any]) -> AtomicSystem:
    return AtomicSystem(atomic_numbers=data["atomic_numbers"], positions=data["positions"]).with_default_masses()


def write_manifest(
    path: Union[str, Path], potential: OraclePotential, system: Optional[AtomicSystem] = None, **params
) -> Path:
    """Oracle parameters, the initial geometry they were run from and generation settings as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"potential": potential_to_dict(potential)}
    if system is not None:
        manifest["system"] = system_to_dict(system)
    manifest.update(params)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    manifest = json.loads(Path(path).read_text())
    manifest["potential"] = potential_from_dict(manifest["potential"])
    if "system" in manifest:
        manifest["system"] = system_from_dict(manifest["system"])
    return manifest
