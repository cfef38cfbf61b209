"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    magic      b"DVCK"
    version    uint32 (currently 1)
    hdr_len    uint32, followed by hdr_len bytes of UTF-8 ``key=value`` lines
    n_params   uint32
    repeated n_params times:
        name_len uint32, name bytes (UTF-8)
        rows     uint32
        cols     uint32
        data     rows*cols little-endian float32, row-major

Vectors are stored as ``rows=len, cols=1``. Parameters appear in registry order.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from dualview.errors import LoadError

MAGIC = b"DVCK"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def encode_header(header: dict[str, str]) -> bytes:
    lines = []
    for key, value in header.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"header entry cannot be encoded: {key!r}={value!r}")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def decode_header(raw: bytes) -> dict[str, str]:
    header = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise LoadError(f"bad checkpoint header line {line!r}")
        header[key] = value
    return header


def write_checkpoint(path, header: dict[str, str], arrays: dict[str, np.ndarray]):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(FORMAT_VERSION))
    hdr = encode_header(header)
    buf.write(_U32.pack(len(hdr)))
    buf.write(hdr)
    buf.write(_U32.pack(len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.ndim == 1:
            rows, cols = arr.shape[0], 1
        elif arr.ndim == 2:
            rows, cols = arr.shape
        else:
            raise ValueError(f"{name}: only 1-D/2-D arrays are storable, got {arr.shape}")
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(rows))
        buf.write(_U32.pack(cols))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Returns ``(header, arrays)``; 1-D parameters come back as (rows, 1)."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise LoadError(f"truncated checkpoint {path}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return _U32.unpack(take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise LoadError(f"{path} is not a dualview checkpoint")
    version = u32()
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported checkpoint version {version}")
    header = decode_header(bytes(take(u32())))
    arrays = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        rows, cols = u32(), u32()
        arr = np.frombuffer(bytes(take(4 * rows * cols)), dtype="<f4").reshape(rows, cols)
        arrays[name] = arr.astype(np.float32)
    if pos != len(data):
        raise LoadError(f"{len(data) - pos} trailing bytes in {path}")
    return header, arrays
