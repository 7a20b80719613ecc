"""Batch export of image and text embeddings.

Embeddings are written raw (no normalization); the engine normalizes at use
sites.  Every export also writes a sibling ``<output>.manifest.json`` naming
the checkpoint, so an index can always be traced back to the encoder that
produced it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import Encoders, resolve_checkpoint
from .errors import ExportError, MalformedLine
from .format import write_embedding_file

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp", ".bmp")


@dataclass(frozen=True)
class ExportJob:
    checkpoint_name: str
    input_kind: str  # "image_dir" | "text_file"
    input_path: Path
    output_path: Path
    batch_size: int = 32

    def __post_init__(self):
        if self.input_kind not in ("image_dir", "text_file"):
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def manifest_path(output_path: str | Path) -> Path:
    output_path = Path(output_path)
    return output_path.with_name(output_path.name + ".manifest.json")


def _write_manifest(job: ExportJob, dim: int, count: int) -> None:
    payload = {
        "checkpoint": job.checkpoint_name,
        "dim": dim,
        "count": count,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path(job.output_path).write_text(
        json.dumps(payload, indent=2), encoding="utf-8"
    )


def export_image_embeddings(job: ExportJob, encoders: Encoders | None = None) -> int:
    """Encode every readable image under the input directory; id = file stem.

    Unreadable files are skipped with a warning and excluded from the count.
    Returns the number of records written.
    """
    enc = encoders or resolve_checkpoint(job.checkpoint_name)
    files = sorted(
        p for p in Path(job.input_path).iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise ExportError(f"no image files under {job.input_path}")

    ids: list[str] = []
    images: list[Image.Image] = []
    for path in files:
        try:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as err:
            log.warning("skipping unreadable image %s: %s", path, err)
            continue
        ids.append(path.stem)
    if not ids:
        raise ExportError(f"no readable images under {job.input_path}")
    duplicates = {i for i in ids if ids.count(i) > 1}
    if duplicates:
        raise ExportError(f"duplicate image ids (same stem): {sorted(duplicates)}")

    chunks = [
        enc.encode_images(images[i : i + job.batch_size])
        for i in range(0, len(images), job.batch_size)
    ]
    matrix = np.concatenate(chunks, axis=0)
    write_embedding_file(job.output_path, ids, matrix)
    _write_manifest(job, matrix.shape[1], len(ids))
    return len(ids)


def export_text_embeddings(job: ExportJob, encoders: Encoders | None = None) -> int:
    """Encode a JSON-lines file of {"id": ..., "text": ...} records."""
    enc = encoders or resolve_checkpoint(job.checkpoint_name)
    ids: list[str] = []
    texts: list[str] = []
    with open(job.input_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as err:
                raise MalformedLine(lineno, f"invalid JSON ({err})")
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise MalformedLine(lineno, "expected an object with id and text")
            text = str(obj["text"]).strip()
            if not text:
                raise MalformedLine(lineno, "empty text")
            ids.append(str(obj["id"]))
            texts.append(text)
    if not ids:
        raise ExportError(f"no records in {job.input_path}")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate text record ids")

    chunks = [
        enc.encode_texts(texts[i : i + job.batch_size])
        for i in range(0, len(texts), job.batch_size)
    ]
    matrix = np.concatenate(chunks, axis=0)
    write_embedding_file(job.output_path, ids, matrix)
    _write_manifest(job, matrix.shape[1], len(ids))
    return len(ids)
