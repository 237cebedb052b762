"""Versioned binary checkpoint format.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"RHRNCKPT"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header
    16+H    ...   payload: arrays back to back, float32 little-endian, row-major

The header holds ``config`` (ModelConfig.to_dict), ``seed``, ``meta`` (free
JSON, e.g. epoch and learning rate) and ``arrays``: a list of
``{"name", "shape", "offset"}`` with offsets relative to the payload start.
Optimizer accumulators are stored as arrays named ``"opt/<param name>"``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointShapeError, CheckpointVersionError, CorruptCheckpointError
from .model import ModelConfig, ModelParams, param_shapes
from .tensor import ParameterSet

MAGIC = b"RHRNCKPT"
VERSION = 1
OPT_PREFIX = "opt/"
_PREAMBLE = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: ParameterSet | None = None
    meta: dict = field(default_factory=dict)


def save(params: ModelParams, path, optimizer: ParameterSet | None = None,
         meta: dict | None = None) -> None:
    arrays = list(params.arrays.items())
    if optimizer is not None:
        arrays += [(OPT_PREFIX + k, v) for k, v in optimizer.items()]
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"config": params.config.to_dict(), "seed": params.seed,
                         "meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CorruptCheckpointError(f"{path}: file too short for a checkpoint preamble")
    magic, version, hlen = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    body = _PREAMBLE.size + hlen
    if len(raw) < body:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREAMBLE.size:body].decode())
        config = ModelConfig.from_dict(header["config"])
        entries = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc

    payload = memoryview(raw)[body:]
    arrays, opt = ParameterSet(), ParameterSet()
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start, stop = e["offset"], e["offset"] + 4 * count
        if stop > len(payload):
            raise CorruptCheckpointError(f"{path}: truncated inside array {e['name']!r}")
        arr = np.frombuffer(payload[start:stop], dtype="<f4").astype(np.float32).reshape(shape)
        name = e["name"]
        if name.startswith(OPT_PREFIX):
            opt[name[len(OPT_PREFIX):]] = arr
        else:
            arrays[name] = arr

    if config.problems():
        raise CheckpointShapeError(f"{path}: embedded config is invalid: {config.problems()}")
    expected = param_shapes(config)
    if list(arrays) != list(expected):
        raise CheckpointShapeError(f"{path}: array names do not match the embedded config")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointShapeError(
                f"{path}: {name} has shape {arrays[name].shape}, config implies {shape}")
        if name in opt and opt[name].shape != shape:
            raise CheckpointShapeError(f"{path}: optimizer state for {name} has wrong shape")

    params = ModelParams(config, arrays, header.get("seed"))
    return Checkpoint(params, opt or None, header.get("meta", {}))


def load(path) -> ModelParams:
    return load_checkpoint(path).params
