"""Binary grid files.

Layout, all little-endian::

    b"FRGRID1"            7 bytes magic
    q                     uint32
    dims[q]               uint64 each
    domain[2q]            float64 (lo_1, hi_1, ..., lo_q, hi_q)
    values[prod(dims)]    float64, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .field import SampledSurface

MAGIC = b"FRGRID1"


class GridFileError(ValueError):
    pass


def write_grid(path, surface: SampledSurface) -> None:
    q = surface.q
    head = MAGIC + struct.pack("<I", q) + struct.pack(f"<{q}Q", *surface.dims)
    head += struct.pack(f"<{2 * q}d", *[v for pair in surface.domain for v in pair])
    payload = np.ascontiguousarray(surface.values, dtype="<f8").tobytes()
    Path(path).write_bytes(head + payload)


def read_grid(path) -> SampledSurface:
    """Read a grid file; sample axes are rebuilt as uniform in ``[0, 1]``."""
    raw = Path(path).read_bytes()
    if raw[:7] != MAGIC:
        raise GridFileError(f"{path}: bad magic {raw[:7]!r}")
    pos = 7
    if len(raw) < pos + 4:
        raise GridFileError(f"{path}: truncated header")
    (q,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if not 1 <= q <= 9:
        raise GridFileError(f"{path}: unsupported dimension q={q}")
    need = pos + 8 * q + 16 * q
    if len(raw) < need:
        raise GridFileError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{q}Q", raw, pos)
    pos += 8 * q
    dom = struct.unpack_from(f"<{2 * q}d", raw, pos)
    pos += 16 * q
    n = int(np.prod(dims))
    if len(raw) - pos != 8 * n:
        raise GridFileError(f"{path}: payload has {len(raw) - pos} bytes, expected {8 * n}")
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(dims).astype(float)
    domain = [(dom[2 * k], dom[2 * k + 1]) for k in range(q)]
    axes = [np.linspace(0.0, 1.0, d) for d in dims]
    return SampledSurface(values, axes, domain)
