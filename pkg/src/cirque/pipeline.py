"""End-to-end orchestration: fuse and rank, then grid-rerank the top window.

The two stages stay separable: ``run_sqaf`` produces the global rankings
(and is exactly what a rerank-free run reports), ``run_ebr`` reorders only
the top k = m*m window of each ranking and never aborts a batch; failed
rerank calls degrade to the initial order.  Captions and rerank completions
are cached on disk keyed by (query, model, template version), and every run
can write a manifest recording configuration and prompt provenance.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml
from PIL import Image, UnidentifiedImageError

from .errors import ApiRefusal, MissingEmbedding, MissingImage, MllmError, WrongCount
from .fusion import FusionParams, compose_query
from .grid import GridSpec, compose_grid, encode_png
from .metrics import QueryAnnotation
from .mllm import MllmClient, MllmConfig, PromptTemplate, load_template
from .ranker import CandidateList, ScoredCandidate, global_rank
from .rerank import RerankOutcome, apply_rerank, classify, merge_ranking, parse_indices
from .store import GalleryIndex

log = logging.getLogger(__name__)

INTENT_REFERENCE_PLUS_TEXT = "reference_plus_text"
INTENT_GENERATED_CAPTION = "generated_caption"


@dataclass(frozen=True)
class RetrievalQuery:
    query_id: str
    reference_id: str
    modification_text: str


def load_queries(path: str | Path) -> list[RetrievalQuery]:
    """Read retrieval queries from a JSON array; annotation files work too."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        RetrievalQuery(
            query_id=str(obj["query_id"]),
            reference_id=str(obj["reference_id"]),
            modification_text=str(obj["modification_text"]),
        )
        for obj in raw
    ]


def queries_from_annotations(annotations: Sequence[QueryAnnotation]) -> list[RetrievalQuery]:
    return [
        RetrievalQuery(a.query_id, a.reference_id, a.modification_text) for a in annotations
    ]


class ImageDirectory:
    """Resolve gallery/reference ids to image files under one directory.

    Lookup tries the configured extensions in priority order.
    """

    def __init__(self, root: str | Path, extensions: Sequence[str] = ("png", "jpg", "jpeg")):
        self.root = Path(root)
        self.extensions = tuple(extensions)

    def path_for(self, image_id: str) -> Path:
        for ext in self.extensions:
            candidate = self.root / f"{image_id}.{ext}"
            if candidate.is_file():
                return candidate
        raise MissingImage(f"no image for id {image_id!r} under {self.root}")

    def read_bytes(self, image_id: str) -> bytes:
        return self.path_for(image_id).read_bytes()

    def load_rgb(self, image_id: str) -> np.ndarray:
        path = self.path_for(image_id)
        try:
            with Image.open(path) as img:
                return np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as err:
            raise MissingImage(f"unreadable image {path}: {err}")


@dataclass(frozen=True)
class RunConfig:
    fusion: FusionParams = field(default_factory=FusionParams)
    k: int = 16
    grid: GridSpec = field(default_factory=GridSpec)
    mllm_caption: MllmConfig | None = None
    mllm_rerank: MllmConfig | None = None
    intent_form: str = INTENT_REFERENCE_PLUS_TEXT
    exclude_reference: bool = False
    cache_dir: Path | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.intent_form not in (INTENT_REFERENCE_PLUS_TEXT, INTENT_GENERATED_CAPTION):
            raise ValueError(f"unknown intent form {self.intent_form!r}")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RunConfig":
        fusion = FusionParams(**obj.get("fusion", {}))
        grid = GridSpec(**{
            k: tuple(tuple(c) for c in v) if k == "palette" else v
            for k, v in obj.get("grid", {}).items()
        })
        def _mllm(section):
            raw = obj.get(section)
            if raw is None:
                return None
            raw = dict(raw)
            if "refusal_markers" in raw:
                raw["refusal_markers"] = tuple(raw["refusal_markers"])
            return MllmConfig(**raw)
        cache_dir = obj.get("cache_dir")
        return cls(
            fusion=fusion,
            k=int(obj.get("k", 16)),
            grid=grid,
            mllm_caption=_mllm("mllm_caption"),
            mllm_rerank=_mllm("mllm_rerank"),
            intent_form=obj.get("intent_form", INTENT_REFERENCE_PLUS_TEXT),
            exclude_reference=bool(obj.get("exclude_reference", False)),
            cache_dir=Path(cache_dir) if cache_dir else None,
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        def _mllm(cfg: MllmConfig | None):
            if cfg is None:
                return None
            return {
                "endpoint_url": cfg.endpoint_url,
                "model_name": cfg.model_name,
                "temperature": cfg.temperature,
                "timeout": cfg.timeout,
                "max_retries": cfg.max_retries,
                "max_inflight": cfg.max_inflight,
                "backoff_base": cfg.backoff_base,
            }

        return {
            "fusion": {"alpha": self.fusion.alpha, "beta": self.fusion.beta},
            "k": self.k,
            "grid": {
                "m": self.grid.m,
                "cell_px": self.grid.cell_px,
                "border_px": self.grid.border_px,
                "label_px": self.grid.label_px,
                "palette": [list(c) for c in self.grid.palette],
            },
            "mllm_caption": _mllm(self.mllm_caption),
            "mllm_rerank": _mllm(self.mllm_rerank),
            "intent_form": self.intent_form,
            "exclude_reference": self.exclude_reference,
            "cache_dir": str(self.cache_dir) if self.cache_dir else None,
        }

    def with_fusion(self, alpha: float | None = None, beta: float | None = None) -> "RunConfig":
        params = FusionParams(
            alpha=self.fusion.alpha if alpha is None else alpha,
            beta=self.fusion.beta if beta is None else beta,
        )
        return replace(self, fusion=params)


# disk cache -------------------------------------------------------------------


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def _cache_path(cache_dir: Path, stage: str, model: str, version: str, query_id: str) -> Path:
    return cache_dir / stage / _slug(model) / _slug(version) / f"{_slug(query_id)}.json"


def _cache_read(path: Path) -> dict | None:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return None
    except (OSError, ValueError):
        log.warning("ignoring unreadable cache entry %s", path)
        return None


def _cache_write(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False), encoding="utf-8")


# caption sources ---------------------------------------------------------------


class StaticCaptions:
    """Captions from a JSON-lines file of {"id": ..., "text": ...} records."""

    def __init__(self, mapping: Mapping[str, str]):
        self._mapping = dict(mapping)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "StaticCaptions":
        mapping: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("status", "ok") == "ok" and obj.get("text"):
                    mapping[str(obj["id"])] = str(obj["text"])
        return cls(mapping)

    def get(self, query: RetrievalQuery) -> str | None:
        return self._mapping.get(query.query_id)

    def call_count(self) -> int:
        return 0


class MllmCaptioner:
    """Generate captions through the chat client, with a disk cache.

    A query whose generation fails after retries (or was refused) resolves
    to None; downstream fusion then runs caption-free for that query.
    Successful captions and refusals are cached; transport-level failures
    are not, so a later run retries them.
    """

    def __init__(
        self,
        client: MllmClient,
        template: PromptTemplate,
        images: ImageDirectory,
        cache_dir: str | Path | None = None,
    ):
        self._client = client
        self._template = template
        self._images = images
        self._cache_dir = Path(cache_dir) if cache_dir else None

    def _cache_path(self, query_id: str) -> Path | None:
        if self._cache_dir is None:
            return None
        return _cache_path(
            self._cache_dir,
            "captions",
            self._client.cfg.model_name,
            self._template.version,
            query_id,
        )

    def get(self, query: RetrievalQuery) -> str | None:
        path = self._cache_path(query.query_id)
        if path is not None:
            cached = _cache_read(path)
            if cached is not None:
                return cached["caption"] if cached["status"] == "ok" else None
        try:
            ref = self._images.read_bytes(query.reference_id)
            caption = str(
                self._client.generate_target_caption(
                    ref, query.modification_text, self._template
                )
            )
        except MllmError as err:
            log.warning(
                "caption for %s failed after %d retries: %s",
                query.query_id,
                err.retry_count,
                err,
            )
            if path is not None and isinstance(err, ApiRefusal):
                _cache_write(path, {"status": "refused", "caption": None})
            return None
        if path is not None:
            _cache_write(path, {"status": "ok", "caption": caption})
        return caption

    def prefetch(self, queries: Sequence[RetrievalQuery], workers: int | None = None) -> None:
        """Warm the cache concurrently (bounded by the client's budget)."""
        workers = workers or self._client.cfg.max_inflight
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(self.get, queries))


def write_captions_jsonl(
    queries: Sequence[RetrievalQuery],
    captions: Mapping[str, str | None],
    path: str | Path,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query in queries:
            caption = captions.get(query.query_id)
            if caption is None:
                obj = {"id": query.query_id, "status": "missing"}
            else:
                obj = {"id": query.query_id, "text": caption, "status": "ok"}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# stage 1: fuse and rank --------------------------------------------------------


@dataclass(frozen=True)
class SqafResult:
    rankings: dict[str, CandidateList]
    captions: dict[str, str]
    caption_missing: frozenset[str]


def run_sqaf(
    queries: Sequence[RetrievalQuery],
    index: GalleryIndex,
    cfg: RunConfig,
    *,
    text_index: GalleryIndex,
    caption_index: GalleryIndex | None = None,
    captions: StaticCaptions | MllmCaptioner | None = None,
    ref_index: GalleryIndex | None = None,
    depth: int | None = None,
) -> SqafResult:
    """Fuse each query and rank the gallery.

    Reference embeddings default to the gallery index; modification-text and
    caption embeddings are looked up by query id.  A query without a usable
    caption falls back to the image/text fusion alone.
    """
    refs = ref_index if ref_index is not None else index
    depth = depth if depth is not None else cfg.k
    rankings: dict[str, CandidateList] = {}
    got_captions: dict[str, str] = {}
    missing: set[str] = set()

    for query in queries:
        if query.reference_id not in refs:
            raise MissingEmbedding("reference-image", query.reference_id)
        if query.query_id not in text_index:
            raise MissingEmbedding("modification-text", query.query_id)
        ref_emb = refs.embedding(query.reference_id)
        txt_emb = text_index.embedding(query.query_id)

        cap_emb = None
        if cfg.fusion.beta > 0.0 and captions is not None:
            caption = captions.get(query)
            if caption is None:
                missing.add(query.query_id)
            else:
                got_captions[query.query_id] = caption
                if caption_index is None or query.query_id not in caption_index:
                    raise MissingEmbedding("caption", query.query_id)
                cap_emb = caption_index.embedding(query.query_id)

        composed = compose_query(query.query_id, ref_emb, txt_emb, cap_emb, cfg.fusion)
        exclude = {query.reference_id} if cfg.exclude_reference else ()
        rankings[query.query_id] = global_rank(composed, index, depth, exclude)

    return SqafResult(
        rankings=rankings, captions=got_captions, caption_missing=frozenset(missing)
    )


# stage 2: grid rerank ----------------------------------------------------------


def _identity_outcome(query_id: str, k: int, raw: str = "") -> RerankOutcome:
    return RerankOutcome(
        query_id=query_id,
        pi_prime=(),
        pi_final=tuple(range(k)),
        status="skipped",
        raw_completion=raw,
    )


def _window_list(candidates: CandidateList, k: int) -> CandidateList:
    return CandidateList(
        query_id=candidates.query_id, candidates=candidates.candidates[:k], k=k
    )


def _splice(candidates: CandidateList, window: CandidateList, k: int) -> CandidateList:
    merged = list(window.candidates) + list(candidates.candidates[k:])
    renumbered = tuple(
        ScoredCandidate(gallery_id=c.gallery_id, score=c.score, rank=i)
        for i, c in enumerate(merged)
    )
    return CandidateList(
        query_id=candidates.query_id, candidates=renumbered, k=candidates.k
    )


def run_ebr(
    candidates: Mapping[str, CandidateList],
    images: ImageDirectory,
    cfg: RunConfig,
    *,
    queries: Sequence[RetrievalQuery],
    captions: Mapping[str, str] | None = None,
    client: MllmClient | None = None,
    template: PromptTemplate | None = None,
    workers: int | None = None,
) -> dict[str, tuple[CandidateList, RerankOutcome]]:
    """Rerank the top k = m*m window of every candidate list.

    Needs the originating queries for the reference image and modification
    text.  With ``intent_form = generated_caption`` the query's generated
    caption stands in for the reference+text pair (falling back to the
    modification text when the caption is missing).  Rerank failures only
    mark that query "skipped"; the batch always completes, and ranks beyond
    the window are never touched.
    """
    k = cfg.grid.m * cfg.grid.m
    if cfg.k != k:
        raise WrongCount(f"config k={cfg.k} does not match grid capacity {k}")
    if client is None:
        if cfg.mllm_rerank is None:
            raise ValueError("run_ebr needs an MLLM client or cfg.mllm_rerank")
        client = MllmClient(cfg.mllm_rerank)
    if template is None:
        kind = "rerank" if cfg.intent_form == INTENT_REFERENCE_PLUS_TEXT else "rerank_caption_intent"
        template = load_template(kind)
    by_id = {q.query_id: q for q in queries}

    def _completion_cache_path(query_id: str) -> Path | None:
        if cfg.cache_dir is None:
            return None
        return _cache_path(
            Path(cfg.cache_dir), "rerank", client.cfg.model_name, template.version, query_id
        )

    def _one(query_id: str) -> tuple[str, tuple[CandidateList, RerankOutcome]]:
        ranked = candidates[query_id]
        if len(ranked.candidates) < k:
            raise WrongCount(
                f"query {query_id!r} has {len(ranked.candidates)} candidates, needs {k}"
            )
        query = by_id[query_id]
        window = _window_list(ranked, k)

        completion: str | None = None
        cache_file = _completion_cache_path(query_id)
        if cache_file is not None:
            cached = _cache_read(cache_file)
            if cached is not None:
                completion = cached["completion"]
        if completion is None:
            rasters = [(c.gallery_id, images.load_rgb(c.gallery_id)) for c in window.candidates]
            grid_png = encode_png(compose_grid(rasters, cfg.grid).pixels)
            if cfg.intent_form == INTENT_GENERATED_CAPTION:
                intent = (captions or {}).get(query_id) or query.modification_text
                ref_bytes = None
            else:
                intent = query.modification_text
                ref_bytes = images.read_bytes(query.reference_id)
            try:
                completion = str(client.rerank_call(ref_bytes, intent, grid_png, template))
            except MllmError as err:
                log.warning(
                    "rerank for %s failed after %d retries: %s", query_id, err.retry_count, err
                )
                return query_id, (ranked, _identity_outcome(query_id, k))
            if cache_file is not None:
                _cache_write(cache_file, {"completion": completion})

        pi_prime = parse_indices(completion, k)
        pi = merge_ranking(pi_prime, k)
        outcome = RerankOutcome(
            query_id=query_id,
            pi_prime=tuple(pi_prime),
            pi_final=tuple(pi),
            status=classify(pi_prime, k),
            raw_completion=completion,
        )
        reordered = _splice(ranked, apply_rerank(window, pi), k)
        if set(c.gallery_id for c in reordered.candidates) != set(
            c.gallery_id for c in ranked.candidates
        ):
            raise AssertionError(f"rerank changed the candidate id set for {query_id!r}")
        return query_id, (reordered, outcome)

    order = [q.query_id for q in queries if q.query_id in candidates]
    workers = workers or (client.cfg.max_inflight if client is not None else 1)
    if workers > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_one, order))
    else:
        results = dict(_one(qid) for qid in order)
    return {qid: results[qid] for qid in order}


# run manifest ------------------------------------------------------------------


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()


def write_manifest(
    path: str | Path,
    cfg: RunConfig,
    *,
    inputs: Mapping[str, str] | None = None,
    prompts: Mapping[str, str] | None = None,
    extra: Mapping[str, object] | None = None,
) -> None:
    """Record what a run was made of: config hash, prompt versions, models."""
    manifest: dict[str, object] = {
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "models": {
            "caption": cfg.mllm_caption.model_name if cfg.mllm_caption else None,
            "rerank": cfg.mllm_rerank.model_name if cfg.mllm_rerank else None,
        },
        "prompts": dict(prompts or {}),
        "inputs": dict(inputs or {}),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
