"""
Checkpoint container, little-endian throughout:

    b"DEQF" | u32 version | u32 metadata length | metadata (UTF-8 JSON)
    u32 array count, then per array:
    u32 name length | name (UTF-8) | 2-byte dtype tag | u32 rank | u64 dims | raw data

Arrays are named ``param/<name>``, ``buffer/<name>``, ``optim/<name>/<key>``
and ``rng/<name>``.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Union

import numpy as np
import torch

from ..eqnet import ForceField, LayerConfig
from ..graph import GraphConfig
from .optim import param_names

logger = getLogger(__name__)

MAGIC = b"DEQF"
VERSION = 1

DTYPE_TAGS = {
    "f8": np.dtype("<f8"),
    "f4": np.dtype("<f4"),
    "i8": np.dtype("<i8"),
    "i4": np.dtype("<i4"),
    "u1": np.dtype("u1"),
    "b1": np.dtype("?"),
}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    metadata: Dict[str, Any] = field(default_factory=dict)
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)


def _tag(array: np.ndarray) -> str:
    for tag, dtype in DTYPE_TAGS.items():
        if array.dtype.kind == dtype.kind and array.dtype.itemsize == dtype.itemsize:
            return tag
    raise CheckpointError(f"Unsupported array dtype {array.dtype}")


def write_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(ckpt.arrays)))
        for name in sorted(ckpt.arrays):
            array = np.asarray(ckpt.arrays[name])
            tag = _tag(array)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(tag.encode("ascii"))
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            f.write(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    return path


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("Checkpoint is truncated")
    return data


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8))
        if version > VERSION:
            raise CheckpointError(f"Checkpoint format version {version} is newer than supported {VERSION}")
        metadata = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            tag = _read_exact(f, 2).decode("ascii")
            if tag not in DTYPE_TAGS:
                raise CheckpointError(f"Unknown dtype tag {tag!r} for array {name}")
            dtype = DTYPE_TAGS[tag]
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arrays[name] = np.frombuffer(_read_exact(f, size), dtype=dtype).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError("Trailing bytes after the last array")
    return Checkpoint(metadata=metadata, arrays=arrays)


def capture(
    model: ForceField,
    optimizer: Optional[torch.optim.Optimizer] = None,
    metadata: Optional[Dict[str, Any]] = None,
    generator: Optional[torch.Generator] = None,
) -> Checkpoint:
    """Snapshot of parameters, buffers, optimizer moments and RNG state."""
    meta = {
        "layer": asdict(model.layer_config),
        "graph": asdict(model.graph_config),
        "energy_shift": float(model.energy_shift),
    }
    meta.update(metadata or {})
    arrays: Dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy().copy()
    for name, b in model.named_buffers():
        arrays[f"buffer/{name}"] = b.detach().cpu().numpy().copy()
    if optimizer is not None:
        names = param_names(model, optimizer)
        state = optimizer.state_dict()
        meta["optimizer"] = [{k: v for k, v in group.items() if k != "params"} for group in state["param_groups"]]
        for index, entry in state["state"].items():
            for key, value in entry.items():
                arrays[f"optim/{names[index]}/{key}"] = torch.as_tensor(value).detach().cpu().numpy().copy()
    if generator is not None:
        arrays["rng/torch"] = generator.get_state().numpy().copy()
    return Checkpoint(metadata=meta, arrays=arrays)


def restore_model(ckpt: Checkpoint) -> ForceField:
    try:
        layer = LayerConfig(**ckpt.metadata["layer"])
        graph = GraphConfig(**ckpt.metadata["graph"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"Checkpoint metadata lacks a valid model description: {e}") from None
    model = ForceField(layer, graph)
    load_model_state(model, ckpt)
    return model


def load_model_state(model: ForceField, ckpt: Checkpoint) -> None:
    """Copy arrays into ``model``; any missing, extra or reshaped array is an error."""
    expected = {f"param/{n}": p for n, p in model.named_parameters()}
    expected.update({f"buffer/{n}": b for n, b in model.named_buffers()})
    stored = {k for k in ckpt.arrays if k.startswith(("param/", "buffer/"))}
    missing = sorted(set(expected) - stored)
    extra = sorted(stored - set(expected))
    if missing or extra:
        raise CheckpointError(f"Layout mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    with torch.no_grad():
        for key, tensor in expected.items():
            array = ckpt.arrays[key]
            if tuple(array.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"Layout mismatch for {key}: stored {tuple(array.shape)}, model {tuple(tensor.shape)}"
                )
            tensor.copy_(torch.from_numpy(array.astype(np.float64, copy=False)).to(tensor.dtype))


def load_optimizer_state(model: ForceField, optimizer: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    names = param_names(model, optimizer)
    state = optimizer.state_dict()
    entries: Dict[int, Dict[str, torch.Tensor]] = {}
    for index, name in enumerate(names):
        prefix = f"optim/{name}/"
        keys = [k for k in ckpt.arrays if k.startswith(prefix)]
        if keys:
            entries[index] = {k[len(prefix):]: torch.from_numpy(ckpt.arrays[k].copy()) for k in keys}
    state["state"] = entries
    groups = ckpt.metadata.get("optimizer", [])
    if len(groups) not in (0, len(state["param_groups"])):
        raise CheckpointError(
            f"Checkpoint holds {len(groups)} optimizer groups, optimizer has {len(state['param_groups'])}"
        )
    for group, saved in zip(state["param_groups"], groups):
        group.update({k: tuple(v) if isinstance(v, list) else v for k, v in saved.items()})
    optimizer.load_state_dict(state)


def restore_generator(ckpt: Checkpoint, generator: torch.Generator) -> None:
    if "rng/torch" in ckpt.arrays:
        generator.set_state(torch.from_numpy(ckpt.arrays["rng/torch"].copy()))
