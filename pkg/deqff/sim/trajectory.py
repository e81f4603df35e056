"""
Trajectories and their extended-XYZ representation.

One frame:

    <atom count>
    energy=<E> dt=<fs> frame=<i> [key=value ...] Properties=species:S:1:pos:R:3[:forces:R:3][:vel:R:3]
    <symbol> x y z [fx fy fz] [vx vy vz]

Numbers are written with 17 significant digits, which round-trips doubles
exactly.
"""

from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np

from ..graph import SYMBOL_TO_NUMBER, AtomicSystem

logger = getLogger(__name__)

FLOAT_FORMAT = ".17g"
BASE_PROPERTIES = "species:S:1:pos:R:3"


@dataclass(frozen=True)
class Frame:
    system: AtomicSystem
    energy: Optional[float] = None
    forces: Optional[np.ndarray] = None
    info: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.forces is not None:
            forces = np.asarray(self.forces, dtype=np.float64).reshape(-1, 3)
            if forces.shape[0] != self.system.n_atoms:
                raise ValueError(f"{self.system.n_atoms} atoms but {forces.shape[0]} force rows")
            object.__setattr__(self, "forces", forces)
        if self.energy is not None:
            object.__setattr__(self, "energy", float(self.energy))

    @property
    def labelled(self) -> bool:
        return self.energy is not None and self.forces is not None


@dataclass
class Trajectory:
    frames: List[Frame] = field(default_factory=list)
    dt: float = 0.0
    metadata: Dict[str, str] = field(default_factory=dict)
    # per-frame solver statistics of model-driven runs
    stats: List[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __getitem__(self, index: int) -> Frame:
        return self.frames[index]

    @property
    def n_atoms(self) -> int:
        return self.frames[0].system.n_atoms if self.frames else 0

    def append(self, frame: Frame) -> None:
        if self.frames:
            ref = self.frames[0].system.atomic_numbers
            numbers = frame.system.atomic_numbers
            if len(numbers) != len(ref) or not np.array_equal(numbers, ref):
                raise ValueError("Frames must share atom count and ordering")
        self.frames.append(frame)

    def energies(self) -> np.ndarray:
        return np.array([f.energy for f in self.frames], dtype=np.float64)

    def positions(self) -> np.ndarray:
        return np.stack([f.system.positions for f in self.frames])


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FORMAT)


def format_frame(frame: Frame, index: int, dt: float) -> str:
    system = frame.system
    props = BASE_PROPERTIES
    keys = {}
    if frame.energy is not None:
        keys["energy"] = _fmt(frame.energy)
    keys["dt"] = _fmt(dt)
    keys["frame"] = str(index)
    for k, v in frame.info.items():
        if k not in ("energy", "dt", "frame", "Properties"):
            keys[k] = v
    columns = [system.positions]
    if frame.forces is not None:
        props += ":forces:R:3"
        columns.append(frame.forces)
    if system.velocities is not None:
        props += ":vel:R:3"
        columns.append(system.velocities)
    keys["Properties"] = props
    lines = [str(system.n_atoms), " ".join(f"{k}={v}" for k, v in keys.items())]
    data = np.concatenate(columns, axis=1)
    for symbol, row in zip(system.symbols, data):
        lines.append(" ".join([symbol] + [_fmt(x) for x in row]))
    return "\n".join(lines) + "\n"


def write_xyz(path: Union[str, Path], trajectory: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for i, frame in enumerate(trajectory.frames):
            index = int(frame.info.get("frame", i))
            f.write(format_frame(frame, index, trajectory.dt))
    return path


def _parse_comment(comment: str) -> Dict[str, str]:
    out = {}
    for token in comment.split():
        if "=" not in token:
            raise ValueError(f"Malformed key=value token {token!r} in comment line")
        k, v = token.split("=", 1)
        out[k] = v
    return out


def _columns(properties: str) -> List[str]:
    parts = properties.split(":")
    if len(parts) % 3:
        raise ValueError(f"Malformed Properties string {properties!r}")
    names = parts[0::3]
    if names[:2] != ["species", "pos"]:
        raise ValueError(f"Properties must start with species and pos, got {properties!r}")
    for name in names[2:]:
        if name not in ("forces", "vel"):
            raise ValueError(f"Unsupported per-atom property {name!r}")
    return names


def read_xyz(path: Union[str, Path]) -> Trajectory:
    trajectory = Trajectory()
    with open(path, "r") as f:
        lines = f.read().splitlines()
    i = 0
    while i < len(lines):
        header = lines[i].strip()
        if header == "":
            i += 1
            continue
        try:
            count = int(header)
        except ValueError:
            raise ValueError(f"Expected atom count at line {i + 1}, got {header!r}") from None
        if i + 2 + count > len(lines):
            raise ValueError(f"Frame starting at line {i + 1} is truncated")
        keys = _parse_comment(lines[i + 1])
        names = _columns(keys.pop("Properties", BASE_PROPERTIES))
        width = 3 * (len(names) - 1)
        symbols, rows = [], []
        for line in lines[i + 2 : i + 2 + count]:
            tokens = line.split()
            if len(tokens) != 1 + width:
                raise ValueError(f"Expected {1 + width} columns, got {len(tokens)}: {line!r}")
            symbols.append(tokens[0])
            rows.append([float(x) for x in tokens[1:]])
        data = np.array(rows, dtype=np.float64).reshape(count, width)
        try:
            numbers = [SYMBOL_TO_NUMBER[s] for s in symbols]
        except KeyError as e:
            raise ValueError(f"Unknown element symbol {e.args[0]!r}") from None
        block = {name: data[:, 3 * (k - 1) : 3 * k] for k, name in enumerate(names) if k > 0}
        system = AtomicSystem(
            atomic_numbers=np.array(numbers, dtype=np.int64),
            positions=block["pos"],
            velocities=block.get("vel"),
        )
        energy = float(keys.pop("energy")) if "energy" in keys else None
        if "dt" in keys:
            trajectory.dt = float(keys.pop("dt"))
        trajectory.append(Frame(system=system, energy=energy, forces=block.get("forces"), info=keys))
        i += 2 + count
    logger.debug("read %d frames from %s", len(trajectory), path)
    return trajectory
