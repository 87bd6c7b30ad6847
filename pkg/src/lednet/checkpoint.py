"""Binary checkpoint archive with exact-bit round-trip.

Layout (all integers little-endian u32):
  magic "LEDN", format version, entry count, then per entry:
  name length, UTF-8 name, rank, one u32 per extent, payload of
  little-endian 32-bit floats.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"LEDN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, params):
    """Write {name: array-or-Tensor} to `path` as float32 payloads."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load(path):
    """Read a checkpoint back into an ordered {name: float32 ndarray}."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    pos = 12
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        payload = buf[pos : pos + 4 * n]
        if len(payload) < 4 * n:
            raise CheckpointError(f"truncated payload for entry {name}")
        pos += 4 * n
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return entries


def element_count(entries):
    return sum(int(np.prod(a.shape)) if a.ndim else 1 for a in entries.values())


def load_into(path, net):
    """Load a checkpoint into a built network, verifying the architecture
    fingerprint (name set and shapes) and reporting a detailed diff on
    mismatch."""
    entries = load(path)
    params = net.named_parameters()
    missing = sorted(set(params) - set(entries))
    extra = sorted(set(entries) - set(params))
    shape_diffs = [
        f"{name}: checkpoint {entries[name].shape} vs model {tuple(params[name].shape)}"
        for name in sorted(set(params) & set(entries))
        if tuple(entries[name].shape) != tuple(params[name].shape)
    ]
    if missing or extra or shape_diffs:
        parts = []
        if missing:
            parts.append("missing from checkpoint: " + ", ".join(missing))
        if extra:
            parts.append("extra in checkpoint: " + ", ".join(extra))
        if shape_diffs:
            parts.append("shape mismatches: " + "; ".join(shape_diffs))
        raise CheckpointError("architecture fingerprint mismatch -- " + " | ".join(parts))
    for name, arr in entries.items():
        params[name].data[...] = arr
    return net
