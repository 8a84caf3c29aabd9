"""LMOL checkpoint files.

Layout (all integers little-endian)::

    b"LMOL"
    u32  format version (1)
    u32  tensor count
    per tensor:
        u32  name length, then UTF-8 name bytes
        u8   dtype tag (0 = float32, 1 = float64)
        u32  rank
        u64  dims[rank]
        raw little-endian data, row-major

Run metadata (model config, optimizer, step) lives in a JSON sidecar
``<path>.json`` written next to the checkpoint.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import IncompatibleCheckpoint, InvalidInput

MAGIC = b"LMOL"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_tensors(path, tensors):
    """Write ``{name: array}`` in LMOL format; arrays must be float32 or float64."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, value in tensors.items():
            arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
            if arr.dtype not in _TAGS:
                raise InvalidInput(f"tensor {name}: unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BI", _TAGS[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())


def _read(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise IncompatibleCheckpoint(f"{path}: truncated file")
    return buf


def load_tensors(path):
    """Read an LMOL file into an ordered ``{name: numpy array}``."""
    path = Path(path)
    out = {}
    with open(path, "rb") as fh:
        if _read(fh, 4, path) != MAGIC:
            raise IncompatibleCheckpoint(f"{path}: bad magic")
        version, count = struct.unpack("<II", _read(fh, 8, path))
        if version != VERSION:
            raise IncompatibleCheckpoint(f"{path}: unsupported format version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(fh, 4, path))
            name = _read(fh, nlen, path).decode("utf-8")
            tag, rank = struct.unpack("<BI", _read(fh, 5, path))
            if tag not in _DTYPES:
                raise IncompatibleCheckpoint(f"{path}: tensor {name} has unknown dtype tag {tag}")
            dims = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank, path))
            dt = _DTYPES[tag]
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(_read(fh, size * dt.itemsize, path), dtype=dt).reshape(dims)
            out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    return out


def save_model(path, model, meta=None):
    path = Path(path)
    save_tensors(path, dict(model.state_dict()))
    sidecar = {"model": model.cfg.to_dict(), **(meta or {})}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_meta(path):
    side = Path(path)
    side = side.with_suffix(side.suffix + ".json")
    if not side.exists():
        raise IncompatibleCheckpoint(f"missing metadata sidecar {side}")
    return json.loads(side.read_text())


def load_model(path, cfg=None, dtype=None):
    """Rebuild a ``TinyLM`` from an LMOL checkpoint (config from the sidecar unless given)."""
    from .model import ModelConfig, TinyLM

    if cfg is None:
        cfg = ModelConfig(**read_meta(path)["model"])
    tensors = load_tensors(path)
    model = TinyLM(cfg)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise IncompatibleCheckpoint(f"{path}: missing {missing[:4]} unexpected {extra[:4]}")
    for name, ref in expected.items():
        if tuple(ref.shape) != tensors[name].shape:
            raise IncompatibleCheckpoint(
                f"{path}: {name} has shape {tensors[name].shape}, config expects {tuple(ref.shape)}"
            )
    src_dtype = torch.float64 if next(iter(tensors.values())).dtype == np.float64 else torch.float32
    model = model.to(src_dtype)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model.to(dtype) if dtype is not None else model
