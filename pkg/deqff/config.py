"""
Run configuration: one frozen dataclass per concern, stored as plain text
with dotted keys, one value per line:

    # comment
    model.channels = 8
    solver.eps_reuse = 0.1
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from .deq import SolverConfig
from .eqnet import LayerConfig
from .graph import GraphConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    temperature: float = 300.0
    frames: int = 2000
    md_steps: int = 1000
    relax_steps: int = 100
    relax_step_size: float = 0.01
    relax_f_max: float = 0.01
    relax_systems: int = 20
    perturbation: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.temperature < 0:
            raise ValueError(f"dt > 0 and temperature >= 0 required, got {self.dt} / {self.temperature}")
        if min(self.frames, self.relax_systems) < 1 or min(self.md_steps, self.relax_steps) < 0:
            raise ValueError("frame, step and system counts must be positive")
        if self.relax_step_size <= 0 or self.relax_f_max <= 0 or self.perturbation < 0:
            raise ValueError("relaxation step size and force threshold must be positive")


@dataclass(frozen=True)
class RunConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: LayerConfig = field(default_factory=LayerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _parse_value(raw: str, kind, key: str):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ValueError(raw)
            return lowered == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"Cannot parse {key} = {raw!r} as {kind.__name__}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, str]) -> RunConfig:
    """Return ``cfg`` with dotted-key string values applied and validated."""
    changes: Dict[str, Dict[str, object]] = {}
    for key, raw in overrides.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"Unknown config key {key!r}")
        kinds = {f.name: f.type for f in fields(getattr(cfg, section))}
        if name not in kinds:
            raise ConfigError(f"Unknown config key {key!r}")
        changes.setdefault(section, {})[name] = _parse_value(str(raw).strip(), kinds[name], key)
    try:
        return replace(cfg, **{s: replace(getattr(cfg, s), **c) for s, c in changes.items()})
    except ValueError as e:
        raise ConfigError(str(e)) from None


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    overrides: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: expected 'section.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in overrides:
            raise ConfigError(f"Line {number}: {key} given twice")
        overrides[key] = value
    return apply_overrides(base or RunConfig(), overrides)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        for f in fields(getattr(cfg, section)):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(getattr(cfg, section), f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def save_config(path: Union[str, Path], cfg: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path
