"""Turn a model completion into a full window permutation.

The reranker may answer with anything from a clean bracketed list to prose
with a few indices buried in it, and often ranks only the candidates it
considers relevant.  Parsing extracts the first plausible index run, then
the merge rule appends every unmentioned index in its original order so the
result is always a permutation of 0..k-1.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateIndex, IndexOutOfRange, LengthMismatch
from .ranker import CandidateList, ScoredCandidate

_INT = re.compile(r"-?\d+")
_BRACKET = re.compile(r"\[[^\[\]]*\]")
# characters that may separate integers within one run
_RUN_SEPARATORS = frozenset(" \t\r\n,;:()[]")

Status = str  # "full" | "partial" | "skipped" | "fallback"


@dataclass(frozen=True)
class RerankOutcome:
    query_id: str
    pi_prime: tuple[int, ...]
    pi_final: tuple[int, ...]
    status: Status
    raw_completion: str


def _integer_run(text: str) -> list[int]:
    """First maximal run of integers separated only by list punctuation."""
    matches = list(_INT.finditer(text))
    if not matches:
        return []
    run = [int(matches[0].group())]
    prev_end = matches[0].end()
    for m in matches[1:]:
        gap = text[prev_end : m.start()]
        if not set(gap) <= _RUN_SEPARATORS:
            break
        run.append(int(m.group()))
        prev_end = m.end()
    return run


def parse_indices(completion: str, k: int) -> list[int]:
    """Extract candidate indices from a completion.

    Prefers the first bracketed group that contains an integer; otherwise
    falls back to the first separator-delimited integer run anywhere in the
    text.  Values outside 0..k-1 are dropped, duplicates keep their first
    occurrence.  An empty result is valid and signals fallback.
    """
    tokens: list[int] = []
    for m in _BRACKET.finditer(completion):
        tokens = _integer_run(m.group()[1:-1])
        if tokens:
            break
    if not tokens:
        tokens = _integer_run(completion)
    out: list[int] = []
    seen: set[int] = set()
    for value in tokens:
        if 0 <= value < k and value not in seen:
            seen.add(value)
            out.append(value)
    return out


def merge_ranking(pi_prime: Sequence[int], k: int) -> list[int]:
    """Complete a (possibly partial) index prefix into a permutation of 0..k-1.

    Indices absent from the prefix are appended in ascending order, i.e. in
    their initial ranking order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    seen: set[int] = set()
    for value in pi_prime:
        if not 0 <= value < k:
            raise IndexOutOfRange(f"index {value} outside 0..{k - 1}")
        if value in seen:
            raise DuplicateIndex(f"index {value} repeated")
        seen.add(value)
    return list(pi_prime) + [i for i in range(k) if i not in seen]


def classify(pi_prime: Sequence[int], k: int) -> Status:
    if not pi_prime:
        return "fallback"
    return "full" if len(pi_prime) == k else "partial"


def apply_rerank(candidates: CandidateList, pi: Sequence[int]) -> CandidateList:
    """Reorder candidates so output rank j holds input candidate pi[j].

    Scores travel with their candidates unchanged; ranks are rewritten.
    """
    n = len(candidates.candidates)
    if len(pi) != n:
        raise LengthMismatch(f"permutation length {len(pi)} vs {n} candidates")
    seen: set[int] = set()
    for value in pi:
        if not 0 <= value < n:
            raise IndexOutOfRange(f"index {value} outside 0..{n - 1}")
        if value in seen:
            raise DuplicateIndex(f"index {value} repeated")
        seen.add(value)
    ranked = tuple(
        ScoredCandidate(
            gallery_id=candidates.candidates[src].gallery_id,
            score=candidates.candidates[src].score,
            rank=dst,
        )
        for dst, src in enumerate(pi)
    )
    return CandidateList(query_id=candidates.query_id, candidates=ranked, k=candidates.k)


# audit log -------------------------------------------------------------------


def audit_line(outcome: RerankOutcome) -> str:
    return json.dumps(
        {
            "query_id": outcome.query_id,
            "status": outcome.status,
            "pi_prime": list(outcome.pi_prime),
            "pi_final": list(outcome.pi_final),
            "raw_completion": outcome.raw_completion,
        },
        ensure_ascii=False,
    )


def write_audit_log(outcomes: Iterable[RerankOutcome], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(audit_line(outcome) + "\n")
