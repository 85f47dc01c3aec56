"""Binary checkpoint container shared by all networks.

Layout (little-endian):
  8 bytes   magic b"RDSRCKPT"
  uint32    format version (1)
  uint32    network-type tag
  uint32    tensor count
  per tensor:
    uint32  name length, then name bytes (utf-8)
    uint32  ndim, then ndim uint32 dims
    float64 row-major data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"RDSRCKPT"
VERSION = 1

TAG_DOWNSAMPLER = 1
TAG_ENCODER = 2
TAG_UPSCALER = 3
TAG_DISCRIMINATOR = 4


def save_checkpoint(path, tag: int, tensors: dict[str, torch.Tensor]) -> None:
    parts = [MAGIC, struct.pack("<III", VERSION, tag, len(tensors))]
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().double().numpy())
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expect_tag: int | None = None) -> dict[str, torch.Tensor]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, tag, count = struct.unpack_from("<III", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if expect_tag is not None and tag != expect_tag:
        raise ValueError(f"{path}: network tag {tag}, expected {expect_tag}")
    off = 20
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        tensors[name] = torch.from_numpy(arr.copy())
    return tensors


def checkpoint_tag(path) -> int:
    with open(path, "rb") as f:
        head = f.read(16)
    if head[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    _, tag = struct.unpack_from("<II", head, 8)
    return tag
