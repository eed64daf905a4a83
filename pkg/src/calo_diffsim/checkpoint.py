"""
Deterministic checkpoint files.

Layout: ``CALOCKPT`` magic, u32 header length, a canonical JSON header (model
kind, geometry hash, normalization statistics, hyperparameters, parameter
count), then every tensor of the state dict in order as
``(u16 name length, name, u8 ndim, ndim x u32 shape, little-endian f32 data)``.
Identical weights always give identical bytes.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from .errors import CorruptionError, FormatError
from .models import (
    CloudNormalization,
    GeometrySpec,
    ImageNormalization,
    ModelKind,
    TrainingHyper,
)
from .networks import build_network, parameter_count

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_SUFFIX",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_header",
]

CHECKPOINT_MAGIC = b"CALOCKPT"
CHECKPOINT_VERSION = 1
CHECKPOINT_SUFFIX = ".ckpt"

_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")

Normalization = Union[CloudNormalization, ImageNormalization]


@dataclass(eq=False)
class Checkpoint:
    kind: ModelKind
    model: nn.Module
    normalization: Normalization
    hyper: TrainingHyper
    geometry_hash: str
    n_parameters: int
    path: Optional[Path] = None


def _header(kind: ModelKind, model: nn.Module, g: GeometrySpec, normalization: Normalization,
            hyper: TrainingHyper) -> Dict:
    return {
        "version": CHECKPOINT_VERSION,
        "kind": ModelKind(kind).value,
        "geometry": g.model_dump(mode="json"),
        "geometry_hash": g.geometry_hash().hex(),
        "normalization_type": "cloud" if isinstance(normalization, CloudNormalization) else "image",
        "normalization": normalization.model_dump(mode="json"),
        "hyper": hyper.model_dump(mode="json"),
        "n_parameters": parameter_count(model),
    }


def save_checkpoint(path: Union[str, Path], kind: ModelKind, model: nn.Module, g: GeometrySpec,
                    normalization: Normalization, hyper: TrainingHyper) -> Path:
    """Write ``model`` with everything needed to rebuild and denormalize it."""
    path = Path(path)
    header = json.dumps(_header(kind, model, g, normalization, hyper), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U32.pack(len(header)), header]
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        raw_name = name.encode("utf-8")
        parts.append(_U16.pack(len(raw_name)) + raw_name)
        parts.append(bytes([data.ndim]) + b"".join(_U32.pack(d) for d in data.shape))
        parts.append(data.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    logger.debug(f"Saved {ModelKind(kind).value} checkpoint to {path}")
    return path


def _read_header(raw: bytes, path: Path) -> Dict:
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a calo-diffsim checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + _U32.size:
        raise CorruptionError(f"{path}: truncated checkpoint header")
    (length,) = _U32.unpack_from(raw, pos)
    pos += _U32.size
    try:
        header = json.loads(raw[pos: pos + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{path}: unreadable checkpoint header: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    header["_offset"] = pos + length
    return header


def read_checkpoint_header(path: Union[str, Path]) -> Dict:
    """Header of a checkpoint without loading its tensors."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(len(CHECKPOINT_MAGIC) + _U32.size)
        if len(head) == len(CHECKPOINT_MAGIC) + _U32.size and head.startswith(CHECKPOINT_MAGIC):
            (length,) = _U32.unpack_from(head, len(CHECKPOINT_MAGIC))
            head += f.read(length)
    return _read_header(head, path)


def _read_tensors(raw: bytes, pos: int, path: Path) -> Dict[str, torch.Tensor]:
    tensors = {}
    try:
        while pos < len(raw):
            (n,) = _U16.unpack_from(raw, pos)
            pos += _U16.size
            name = raw[pos: pos + n].decode("utf-8")
            pos += n
            ndim = raw[pos]
            pos += 1
            shape = tuple(_U32.unpack_from(raw, pos + 4 * i)[0] for i in range(ndim))
            pos += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(raw):
                raise CorruptionError(f"{path}: tensor {name} is truncated")
            data = np.frombuffer(raw, "<f4", count, pos).reshape(shape)
            pos += 4 * count
            tensors[name] = torch.from_numpy(data.astype(np.float32))
    except (struct.error, IndexError, UnicodeDecodeError) as e:
        raise CorruptionError(f"{path}: malformed tensor table: {e}") from e
    return tensors


def load_checkpoint(path: Union[str, Path], geometry: Optional[GeometrySpec] = None) -> Checkpoint:
    """Rebuild the network stored at ``path``; optionally enforce its geometry."""
    path = Path(path)
    raw = path.read_bytes()
    header = _read_header(raw, path)
    g = GeometrySpec(**header["geometry"])
    if geometry is not None and geometry.geometry_hash().hex() != header["geometry_hash"]:
        raise FormatError(f"{path}: checkpoint was trained on a different geometry")

    kind = ModelKind(header["kind"])
    hyper = TrainingHyper(**header["hyper"])
    norm_cls = CloudNormalization if header["normalization_type"] == "cloud" else ImageNormalization
    normalization = norm_cls(**header["normalization"])

    model = build_network(kind, hyper, g)
    tensors = _read_tensors(raw, header["_offset"], path)
    expected = model.state_dict()
    if list(tensors) != list(expected):
        raise CorruptionError(f"{path}: tensor names do not match a {kind.value} network")
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CorruptionError(f"{path}: tensor {name} has shape {tuple(tensor.shape)}")
    model.load_state_dict(tensors)
    model.eval()

    n_parameters = parameter_count(model)
    if n_parameters != header["n_parameters"]:
        raise CorruptionError(f"{path}: header promises {header['n_parameters']} parameters")
    logger.info(f"📦 Loaded {kind.value} model from {path.name}: {n_parameters:,} parameters")
    return Checkpoint(kind=kind, model=model, normalization=normalization, hyper=hyper,
                      geometry_hash=header["geometry_hash"], n_parameters=n_parameters,
                      path=path)
