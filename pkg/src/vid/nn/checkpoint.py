"""Binary checkpoint container.

Layout (little-endian)::

    b"VIDC" | version:u8 | meta_len:u32 | meta (UTF-8 JSON)
    | n_params:u32 | n_params * entry
    | steps:u64 | n_state:u32 | n_state * entry

    entry = name_len:u16 | name | ndim:u8 | dims:u32*ndim | dtype:u8 | payload
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from vid.errors import FormatError

MAGIC = b"VIDC"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


def _write_table(fh, table: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        raw = name.encode()
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"unsupported dtype {arr.dtype} for {name}")
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        fh.write(struct.pack("<B", code))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated checkpoint")
    return buf


def _read_table(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode()
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        (code,) = struct.unpack("<B", _read_exact(fh, 1))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        dt = _DTYPES[code]
        n = int(np.prod(shape)) * dt.itemsize
        out[name] = np.frombuffer(_read_exact(fh, n), dtype=dt).reshape(shape).copy()
    return out


def save_checkpoint(path, params, opt_state=None, steps: int = 0, meta=None) -> None:
    """Write named arrays, optimizer velocities and a JSON metadata blob."""
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<B", VERSION))
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)) + blob)
    _write_table(buf, params)
    buf.write(struct.pack("<Q", steps))
    _write_table(buf, opt_state or {})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(params, opt_state, steps, meta)``."""
    with open(path, "rb") as fh:
        head = fh.read(5)
        if len(head) < 5 or head[:4] != MAGIC:
            raise FormatError("not a VIDC checkpoint")
        if head[4] != VERSION:
            raise FormatError(f"unsupported checkpoint version {head[4]}")
        (mlen,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, mlen).decode())
        params = _read_table(fh)
        (steps,) = struct.unpack("<Q", _read_exact(fh, 8))
        state = _read_table(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint")
    return params, state, steps, meta
