"""Global ranking: exact cosine scoring of the gallery and top-K selection.

Exact search only; the biggest benchmark galleries (about 1.2e5 items) are
trivially scanned.  Scores accumulate in float64.  Ties are broken by
ascending gallery id so repeated runs produce identical reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimMismatch, EmptyGallery, UnknownId, ZeroVector
from .fusion import ComposedQuery
from .store import GalleryIndex


@dataclass(frozen=True)
class ScoredCandidate:
    gallery_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class CandidateList:
    query_id: str
    candidates: tuple[ScoredCandidate, ...]
    k: int

    def ids(self) -> list[str]:
        return [c.gallery_id for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


def _query_vector(q: ComposedQuery, index: GalleryIndex) -> np.ndarray:
    vec = np.asarray(q.q_final, dtype=np.float64)
    if vec.shape != (index.dim,):
        raise DimMismatch(f"query dim {vec.shape} vs index dim {index.dim}")
    n = float(np.linalg.norm(vec))
    if n == 0.0:
        raise ZeroVector("query vector is zero")
    return vec / n


def _cosine_scores(vec: np.ndarray, index: GalleryIndex, rows: np.ndarray) -> np.ndarray:
    norms = index.norms[rows]
    if (norms == 0.0).any():
        bad = index.ids[int(rows[int(np.argmax(norms == 0.0))])]
        raise ZeroVector(f"gallery embedding {bad!r} has zero norm")
    dots = np.einsum("ij,j->i", index.matrix[rows], vec, dtype=np.float64)
    return np.clip(dots / norms, -1.0, 1.0)


def _select_top(scores: np.ndarray, ids: Sequence[str], k: int) -> list[int]:
    """Indices of the k best scores ordered by (score desc, id asc), exactly."""
    n = len(scores)
    if k >= n:
        return sorted(range(n), key=lambda i: (-scores[i], ids[i]))
    part = np.argpartition(-scores, k - 1)[:k]
    boundary = float(scores[part].min())
    above = np.flatnonzero(scores > boundary)
    equal = np.flatnonzero(scores == boundary)
    chosen = list(above)
    chosen.extend(sorted(equal, key=lambda i: ids[i])[: k - len(above)])
    return sorted(chosen, key=lambda i: (-scores[i], ids[i]))


def _as_candidate_list(
    query_id: str, ids: Sequence[str], scores: np.ndarray, order: Sequence[int], k: int
) -> CandidateList:
    ranked = tuple(
        ScoredCandidate(gallery_id=ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(order)
    )
    return CandidateList(query_id=query_id, candidates=ranked, k=k)


def global_rank(
    q: ComposedQuery,
    index: GalleryIndex,
    k: int,
    exclude: Iterable[str] = (),
) -> CandidateList:
    """Top-k gallery items by cosine against the composed query.

    Excluded ids never appear in the result.  The list length is
    min(k, gallery size after exclusions).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    vec = _query_vector(q, index)
    excluded = set(exclude)
    if excluded:
        keep = [i for i, gid in enumerate(index.ids) if gid not in excluded]
        if not keep:
            raise EmptyGallery("all gallery items excluded")
        rows = np.asarray(keep, dtype=np.intp)
        ids = [index.ids[i] for i in keep]
    else:
        if len(index) == 0:
            raise EmptyGallery("index holds no items")
        rows = np.arange(len(index), dtype=np.intp)
        ids = index.ids
    scores = _cosine_scores(vec, index, rows)
    order = _select_top(scores, ids, k)
    return _as_candidate_list(q.query_id, ids, scores, order, k)


def rank_subset(q: ComposedQuery, index: GalleryIndex, subset: Sequence[str]) -> CandidateList:
    """Score and sort only the given ids (duplicates collapse to the first).

    Raises UnknownId when a subset id is absent from the index.
    """
    seen: dict[str, None] = {}
    for gid in subset:
        if gid not in index:
            raise UnknownId(f"unknown id {gid!r}")
        seen.setdefault(gid)
    ids = list(seen)
    if not ids:
        raise EmptyGallery("subset is empty")
    vec = _query_vector(q, index)
    rows = np.asarray([index.position(gid) for gid in ids], dtype=np.intp)
    scores = _cosine_scores(vec, index, rows)
    order = _select_top(scores, ids, len(ids))
    return _as_candidate_list(q.query_id, ids, scores, order, len(ids))


# ranking dump: JSON lines, scores fixed to 6 decimal places -----------------


def ranking_line(ranked: CandidateList) -> str:
    cells = ", ".join(
        '{"id": %s, "score": %.6f}' % (json.dumps(c.gallery_id), c.score)
        for c in ranked.candidates
    )
    return '{"query_id": %s, "candidates": [%s]}' % (json.dumps(ranked.query_id), cells)


def write_rankings(rankings: Iterable[CandidateList], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ranked in rankings:
            fh.write(ranking_line(ranked) + "\n")


def read_rankings(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Parse a ranking dump back into query_id -> [(id, score), ...]."""
    out: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["query_id"]] = [(c["id"], float(c["score"])) for c in obj["candidates"]]
    return out


def rankings_to_candidate_lists(
    parsed: Mapping[str, list[tuple[str, float]]]
) -> dict[str, CandidateList]:
    out = {}
    for query_id, pairs in parsed.items():
        ranked = tuple(
            ScoredCandidate(gallery_id=gid, score=score, rank=i)
            for i, (gid, score) in enumerate(pairs)
        )
        out[query_id] = CandidateList(query_id=query_id, candidates=ranked, k=len(ranked))
    return out
