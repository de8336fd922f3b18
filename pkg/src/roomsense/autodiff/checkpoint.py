"""Single-file checkpoint: text manifest header + raw float32 payload.

Layout:
    line 1   magic + format version
    line 2   entry count
    n lines  "<name> <d0,d1,...|-> <offset>"   (offset in float32 elements)
    "---" separator line, then little-endian float32 data back to back.

Parameter names must not contain whitespace; module attribute naming
already guarantees that.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import TruncatedError, VersionError

MAGIC = "roomsense-ckpt v1"


def save_checkpoint(path, arrays):
    names = list(arrays.keys())
    header = [MAGIC, str(len(names))]
    offset = 0
    blobs = []
    for name in names:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"checkpoint entry name contains whitespace: {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float32)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
        header.append(f"{name} {dims} {offset}")
        offset += arr.size
        blobs.append(arr)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n---\n").encode("ascii"))
        for arr in blobs:
            f.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    sep = b"\n---\n"
    cut = raw.find(sep)
    if cut < 0:
        raise VersionError(f"{path}: no checkpoint header separator found")
    lines = raw[:cut].decode("ascii", errors="replace").split("\n")
    if not lines or lines[0] != MAGIC:
        raise VersionError(f"{path}: bad magic {lines[0][:40]!r}, expected {MAGIC!r}")
    try:
        count = int(lines[1])
    except (IndexError, ValueError):
        raise VersionError(f"{path}: unreadable entry count") from None
    if len(lines) != 2 + count:
        raise TruncatedError(f"{path}: manifest lists {count} entries, header has {len(lines) - 2}")
    payload = raw[cut + len(sep):]
    out = {}
    for line in lines[2:]:
        parts = line.split(" ")
        if len(parts) != 3:
            raise VersionError(f"{path}: malformed manifest line {line!r}")
        name, dims, off = parts[0], parts[1], int(parts[2])
        shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
        n = int(np.prod(shape)) if shape else 1
        start, stop = off * 4, (off + n) * 4
        if stop > len(payload):
            raise TruncatedError(f"{path}: payload ends before entry {name!r}")
        out[name] = np.frombuffer(payload[start:stop], dtype="<f4").reshape(shape).copy()
    return out


def checkpoint_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
