"""cirque: training-free composed image retrieval.

A query is a reference image plus a textual modification.  Stage one fuses
their embeddings (optionally enriched with a generated target caption) and
ranks the whole gallery by cosine similarity; stage two tiles the top
candidates into a labeled grid and asks a multimodal model for an updated
ordering in a single call.
"""

from . import errors
from .fusion import ComposedQuery, FusionParams, compose_query, fuse_final, fuse_vlm
from .grid import GridImage, GridSpec, annotate, compose_grid
from .metrics import (
    EvalReport,
    QueryAnnotation,
    average_precision_at_k,
    evaluate,
    recall_at_k,
)
from .pipeline import (
    ImageDirectory,
    MllmCaptioner,
    RetrievalQuery,
    RunConfig,
    SqafResult,
    StaticCaptions,
    run_ebr,
    run_sqaf,
)
from .ranker import CandidateList, ScoredCandidate, global_rank, rank_subset
from .rerank import RerankOutcome, apply_rerank, merge_ranking, parse_indices
from .store import GalleryIndex, build_index, cosine, load_index, normalize, write_index

__version__ = "0.1.0"

__all__ = [
    "CandidateList",
    "ComposedQuery",
    "EvalReport",
    "FusionParams",
    "GalleryIndex",
    "GridImage",
    "GridSpec",
    "ImageDirectory",
    "MllmCaptioner",
    "QueryAnnotation",
    "RerankOutcome",
    "RetrievalQuery",
    "RunConfig",
    "ScoredCandidate",
    "SqafResult",
    "StaticCaptions",
    "annotate",
    "apply_rerank",
    "average_precision_at_k",
    "build_index",
    "compose_grid",
    "compose_query",
    "cosine",
    "errors",
    "evaluate",
    "fuse_final",
    "fuse_vlm",
    "global_rank",
    "load_index",
    "merge_ranking",
    "normalize",
    "parse_indices",
    "rank_subset",
    "recall_at_k",
    "run_ebr",
    "run_sqaf",
    "write_index",
]
