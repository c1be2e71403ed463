"""Checkpoint container: named float32 tensors plus JSON metadata.

Layout (all integers little-endian):

    magic   b"TNSR"
    u32     format version (1)
    u32     metadata length in bytes, then that many bytes of UTF-8 JSON
            (config echo, RNG state, tensor directory in storage order)
    per tensor, in directory order:
        u16     name length, then UTF-8 name
        u8      ndim, then ndim x u32 dims
        raw little-endian float32 data, row-major

The RNG state makes exact training resume possible.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TNSR"
VERSION = 1


def save_checkpoint(path: Path, tensors: dict[str, torch.Tensor],
                    config_echo: dict, rng_state: dict | None = None) -> None:
    meta = {
        "config": config_echo,
        "rng": rng_state or {},
        "tensors": list(tensors.keys()),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Path) -> tuple[dict[str, torch.Tensor], dict, dict]:
    """Returns (tensors, config echo, rng state)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    tensors = {}
    for expected_name in meta["tensors"]:
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        if name != expected_name:
            raise ValueError(f"{path}: tensor order mismatch ({name} != {expected_name})")
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
        offset += 4 * count
        tensors[name] = torch.from_numpy(arr.copy())
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors, meta.get("config", {}), meta.get("rng", {})


def torch_rng_to_json() -> str:
    return torch.get_rng_state().numpy().tobytes().hex()


def torch_rng_from_json(hexstate: str) -> None:
    state = np.frombuffer(bytes.fromhex(hexstate), dtype=np.uint8)
    torch.set_rng_state(torch.from_numpy(state.copy()))


def numpy_rng_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))


def numpy_rng_from_json(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
