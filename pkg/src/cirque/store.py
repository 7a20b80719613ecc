"""Binary embedding store and the immutable gallery index.

File format (little-endian throughout)::

    magic "SQEMB1" | version u16 | dim u32 | count u64
    then `count` records: id_len u16 | id UTF-8 bytes | dim x f32

Vectors are stored raw, exactly as the exporter produced them; callers
normalize at use sites.  Dot products and norms are accumulated in float64.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    NonFiniteValue,
    TruncatedFile,
    UnknownId,
    ZeroVector,
)

MAGIC = b"SQEMB1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<6sHIQ")
_ID_LEN = struct.Struct("<H")


class GalleryIndex:
    """Immutable id -> embedding store with stable iteration order."""

    def __init__(self, ids: Iterable[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float32)
        ids = list(ids)
        if matrix.ndim != 2:
            raise DimMismatch(f"expected a 2-d matrix, got shape {matrix.shape}")
        if matrix.shape[1] < 1:
            raise DimMismatch("embedding dimension must be positive")
        if matrix.shape[0] != len(ids):
            raise DimMismatch(
                f"{len(ids)} ids but {matrix.shape[0]} vectors"
            )
        pos: dict[str, int] = {}
        for i, item_id in enumerate(ids):
            if item_id in pos:
                raise DuplicateId(f"duplicate id {item_id!r}")
            pos[item_id] = i
        if matrix.size and not np.isfinite(matrix).all():
            bad = ids[int(np.argwhere(~np.isfinite(matrix))[0][0])]
            raise NonFiniteValue(f"non-finite component in embedding {bad!r}")
        matrix.setflags(write=False)
        self.ids = ids
        self.matrix = matrix
        self.dim = int(matrix.shape[1])
        self._pos = pos
        # float64-accumulated row norms, used by ranking
        self.norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._pos

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, item_id in enumerate(self.ids):
            yield item_id, self.matrix[i]

    def position(self, item_id: str) -> int:
        try:
            return self._pos[item_id]
        except KeyError:
            raise UnknownId(f"unknown id {item_id!r}") from None

    def embedding(self, item_id: str) -> np.ndarray:
        return self.matrix[self.position(item_id)]


def build_index(items: Iterable[tuple[str, np.ndarray]]) -> GalleryIndex:
    """Build an in-memory index from (id, vector) pairs."""
    ids, rows = [], []
    for item_id, vec in items:
        ids.append(item_id)
        rows.append(np.asarray(vec, dtype=np.float32))
    if not rows:
        raise DimMismatch("cannot build an index from zero items")
    return GalleryIndex(ids, np.stack(rows))


def load_index(path: str | Path) -> GalleryIndex:
    """Read an embedding file in one pass and validate it.

    Raises BadMagic, DimMismatch, DuplicateId, TruncatedFile or
    NonFiniteValue on malformed input.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if not data.startswith(MAGIC[: len(data)]) or len(data) < len(MAGIC):
            raise BadMagic(f"{path}: missing SQEMB1 header")
        raise TruncatedFile(f"{path}: header cut short")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BadMagic(f"{path}: unsupported format version {version}")
    if dim < 1:
        raise DimMismatch(f"{path}: header dim must be positive")

    vec_bytes = 4 * dim
    ids: list[str] = []
    matrix = np.empty((count, dim), dtype=np.float32)
    offset = _HEADER.size
    end = len(data)
    for row in range(count):
        if offset + _ID_LEN.size > end:
            raise TruncatedFile(f"{path}: truncated before record {row}")
        (id_len,) = _ID_LEN.unpack_from(data, offset)
        offset += _ID_LEN.size
        if offset + id_len + vec_bytes > end:
            raise TruncatedFile(f"{path}: truncated inside record {row}")
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        matrix[row] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
    if offset != end:
        raise TruncatedFile(f"{path}: {end - offset} unexpected trailing bytes")
    return GalleryIndex(ids, matrix)


def write_index(index: GalleryIndex, path: str | Path) -> None:
    """Write the index back out; load_index/write_index round-trip bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, index.dim, len(index)))
        for item_id, vec in index:
            raw = item_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long to serialize: {item_id!r}")
            fh.write(_ID_LEN.pack(len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def normalize(e: np.ndarray) -> np.ndarray:
    """Return e scaled to unit L2 norm; raises ZeroVector on a zero input."""
    v = np.asarray(e, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroVector("cannot normalize the zero vector")
    return (v / n).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with float64 accumulation, clamped to [-1, 1]."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimMismatch(f"shape {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for the zero vector")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))
