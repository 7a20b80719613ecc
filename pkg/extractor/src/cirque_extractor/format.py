"""Writer for the engine's binary embedding format.

This file format is the whole contract between the sidecar and the engine,
so the writer is implemented here independently (bit-exact)::

    magic "SQEMB1" | version u16 LE | dim u32 LE | count u64 LE
    records: id_len u16 LE | id UTF-8 | dim x f32 LE
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ExportError

MAGIC = b"SQEMB1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<6sHIQ")
_ID_LEN = struct.Struct("<H")


def write_embedding_file(
    path: str | Path, ids: Sequence[str], matrix: np.ndarray
) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ExportError(
            f"matrix shape {matrix.shape} does not match {len(ids)} ids"
        )
    if matrix.shape[1] < 1:
        raise ExportError("embedding dimension must be positive")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate record ids")
    if not np.isfinite(matrix).all():
        raise ExportError("non-finite embedding values")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.shape[1], len(ids)))
        for record_id, row in zip(ids, matrix):
            raw = record_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ExportError(f"id too long: {record_id!r}")
            fh.write(_ID_LEN.pack(len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())
