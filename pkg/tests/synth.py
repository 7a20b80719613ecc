"""Deterministic synthetic world used by pipeline, CLI, and acceptance tests.

Builds a 50-image gallery with planted targets: for each query, three decoys
outrank the target in the initial ranking, so a rerank that promotes the
target is observable in the metrics.  Everything derives from fixed seeds,
so repeated builds are identical.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from cirque.fusion import FusionParams, fuse_final, fuse_vlm
from cirque.metrics import QueryAnnotation, save_annotations
from cirque.store import GalleryIndex, build_index, write_index

DIM = 16
ALPHA = 0.7
BETA = 0.6
N_QUERIES = 5
# decoy cosines sit above the target's so the target starts at window rank 3
DECOY_COSINES = (0.93, 0.90, 0.87)
TARGET_COSINE = 0.84


def _seeded_unit(seed_text: str) -> np.ndarray:
    rng = np.random.default_rng(zlib.crc32(seed_text.encode("utf-8")))
    v = rng.standard_normal(DIM)
    return v / np.linalg.norm(v)


def text_embedding(text: str) -> np.ndarray:
    return _seeded_unit("text:" + text).astype(np.float32)


def image_embedding(image_id: str) -> np.ndarray:
    return _seeded_unit("image:" + image_id).astype(np.float32)


def mock_caption(mod_text: str) -> str:
    # contract of the "mock:echo" backend
    return f"TARGET: {mod_text}"


def _at_cosine(direction: np.ndarray, cos: float, seed_text: str) -> np.ndarray:
    """Unit vector at the given cosine to `direction` (seeded residual)."""
    residual = _seeded_unit(seed_text)
    residual = residual - direction * float(residual @ direction)
    residual /= np.linalg.norm(residual)
    return (cos * direction + np.sqrt(1.0 - cos * cos) * residual).astype(np.float32)


@dataclass
class SynthWorld:
    gallery: GalleryIndex
    text_index: GalleryIndex
    caption_index: GalleryIndex
    annotations: list[QueryAnnotation]
    captions: dict[str, str]
    target_of: dict[str, str]


def build_world() -> SynthWorld:
    queries = []
    for i in range(N_QUERIES):
        qid = f"q{i}"
        ref = f"ref{i}"
        mod = f"turn item {i} sideways and paint it blue"
        queries.append((qid, ref, mod))

    text_items = [(qid, text_embedding(mod)) for qid, _, mod in queries]
    caption_texts = {qid: mock_caption(mod) for qid, _, mod in queries}
    caption_items = [(qid, text_embedding(caption_texts[qid])) for qid, _, _ in queries]

    gallery_items: list[tuple[str, np.ndarray]] = []
    annotations = []
    target_of = {}
    params = FusionParams(alpha=ALPHA, beta=BETA)
    for i, (qid, ref, mod) in enumerate(queries):
        gallery_items.append((ref, image_embedding(ref)))
        q_vlm = fuse_vlm(image_embedding(ref), text_embedding(mod), params.alpha)
        fused = fuse_final(q_vlm, text_embedding(caption_texts[qid]), params.beta)
        direction = np.asarray(fused, dtype=np.float64)
        direction /= np.linalg.norm(direction)
        target = f"tgt{i}"
        gallery_items.append((target, _at_cosine(direction, TARGET_COSINE, f"t:{qid}")))
        for d, cos in enumerate(DECOY_COSINES):
            gallery_items.append(
                (f"dec{i}{d}", _at_cosine(direction, cos, f"d:{qid}:{d}"))
            )
        target_of[qid] = target
        annotations.append(
            QueryAnnotation(
                query_id=qid,
                reference_id=ref,
                modification_text=mod,
                target_ids=frozenset({target}),
                group=("even" if i % 2 == 0 else "odd"),
            )
        )

    fillers = 50 - len(gallery_items)
    for j in range(fillers):
        fid = f"fill{j:02d}"
        gallery_items.append((fid, image_embedding(fid)))

    return SynthWorld(
        gallery=build_index(gallery_items),
        text_index=build_index(text_items),
        caption_index=build_index(caption_items),
        annotations=annotations,
        captions=caption_texts,
        target_of=target_of,
    )


def _solid_color(image_id: str) -> np.ndarray:
    rng = np.random.default_rng(zlib.crc32(("pix:" + image_id).encode("utf-8")))
    color = rng.integers(30, 226, size=3, dtype=np.uint8)
    return np.full((64, 64, 3), color, dtype=np.uint8)


def write_world(world: SynthWorld, root: Path) -> dict[str, Path]:
    """Materialize the world as the on-disk inputs the CLI consumes."""
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "gallery": root / "gallery.sqemb",
        "text_emb": root / "modtexts.sqemb",
        "caption_emb": root / "captions.sqemb",
        "captions": root / "captions.jsonl",
        "annotations": root / "annotations.json",
        "images": root / "images",
    }
    write_index(world.gallery, paths["gallery"])
    write_index(world.text_index, paths["text_emb"])
    write_index(world.caption_index, paths["caption_emb"])
    with open(paths["captions"], "w", encoding="utf-8") as fh:
        for qid, text in world.captions.items():
            fh.write(json.dumps({"id": qid, "text": text, "status": "ok"}) + "\n")
    save_annotations(world.annotations, paths["annotations"])
    paths["images"].mkdir(exist_ok=True)
    for image_id in world.gallery.ids:
        Image.fromarray(_solid_color(image_id)).save(paths["images"] / f"{image_id}.png")
    return paths
