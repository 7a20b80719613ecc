"""Benchmark evaluation: Recall@K, subset Recall@K and mAP@K.

All metrics are macro-averaged over queries (each query weighs 1) and
reported as percentages rounded to two decimals.  Datasets that group their
queries (clothing categories, task types) additionally get per-group rows
plus an unweighted cross-group average.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyTargets, MissingRanking, MissingSubset

log = logging.getLogger(__name__)

METRIC_RECALL = "recall"
METRIC_RECALL_SUBSET = "recall_subset"
METRIC_MAP = "map"

_LABELS = {METRIC_RECALL: "R@{k}", METRIC_RECALL_SUBSET: "R_subset@{k}", METRIC_MAP: "mAP@{k}"}


@dataclass(frozen=True)
class QueryAnnotation:
    query_id: str
    reference_id: str
    modification_text: str
    target_ids: frozenset[str]
    subset_ids: tuple[str, ...] | None = None
    group: str | None = None

    def __post_init__(self):
        if not self.target_ids:
            raise EmptyTargets(f"query {self.query_id!r} has no targets")
        if self.subset_ids is not None and not set(self.subset_ids) & self.target_ids:
            log.warning("query %r: subset contains none of its targets", self.query_id)


@dataclass(frozen=True)
class EvalReport:
    per_metric: dict[str, float]
    per_group: dict[str, dict[str, float]]
    group_average: dict[str, float] | None
    query_count: int


def metric_label(metric: str, k: int) -> str:
    return _LABELS[metric].format(k=k)


def parse_metric_spec(spec: str) -> list[tuple[str, int]]:
    """Parse "R@1,R_subset@2,mAP@5" into [(metric, k), ...]."""
    out = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        name, _, k = token.partition("@")
        lowered = name.strip().lower()
        if lowered == "r":
            metric = METRIC_RECALL
        elif lowered in ("r_subset", "rs", "rsubset"):
            metric = METRIC_RECALL_SUBSET
        elif lowered == "map":
            metric = METRIC_MAP
        else:
            raise ValueError(f"unknown metric {name!r}")
        out.append((metric, int(k)))
    return out


def recall_at_k(ranking: Sequence[str], targets: Iterable[str], k: int) -> int:
    """1 when any target appears in the first k entries, else 0."""
    targets = set(targets)
    for gid in ranking[:k]:
        if gid in targets:
            return 1
    return 0


def average_precision_at_k(ranking: Sequence[str], targets: Iterable[str], k: int) -> float:
    """AP@K normalized by min(|targets|, k) to handle multiple ground truths."""
    targets = set(targets)
    if not targets:
        raise EmptyTargets("average precision needs at least one target")
    window = ranking[:k]
    if not window:
        return 0.0
    hit = np.fromiter((gid in targets for gid in window), dtype=np.float64, count=len(window))
    precision = np.cumsum(hit) / np.arange(1, len(window) + 1)
    return float((precision * hit).sum() / min(len(targets), k))


def evaluate(
    rankings: Mapping[str, Sequence[str]],
    annotations: Sequence[QueryAnnotation],
    metric_spec: Sequence[tuple[str, int]],
) -> EvalReport:
    """Score every annotated query and aggregate to an EvalReport.

    rankings map query ids to ordered gallery-id lists.  Subset metrics
    evaluate the ranking restricted to the annotation's subset ids, which
    reproduces the order a subset-only ranking would give.
    """
    per_query: dict[str, dict[str, float]] = {}
    for ann in annotations:
        if ann.query_id not in rankings:
            raise MissingRanking(f"no ranking for query {ann.query_id!r}")
        ranking = list(rankings[ann.query_id])
        if len(set(ranking)) != len(ranking):
            raise ValueError(f"ranking for {ann.query_id!r} contains duplicates")
        row: dict[str, float] = {}
        for metric, k in metric_spec:
            if metric == METRIC_RECALL:
                value = float(recall_at_k(ranking, ann.target_ids, k))
            elif metric == METRIC_MAP:
                value = average_precision_at_k(ranking, ann.target_ids, k)
            elif metric == METRIC_RECALL_SUBSET:
                if ann.subset_ids is None:
                    raise MissingSubset(f"query {ann.query_id!r} has no subset ids")
                members = set(ann.subset_ids)
                restricted = [gid for gid in ranking if gid in members]
                value = float(recall_at_k(restricted, ann.target_ids, k))
            else:
                raise ValueError(f"unknown metric {metric!r}")
            row[metric_label(metric, k)] = value
        per_query[ann.query_id] = row

    labels = [metric_label(metric, k) for metric, k in metric_spec]

    def _mean(query_ids: Sequence[str]) -> dict[str, float]:
        return {
            label: round(100.0 * sum(per_query[q][label] for q in query_ids) / len(query_ids), 2)
            for label in labels
        }

    all_ids = [ann.query_id for ann in annotations]
    per_metric = _mean(all_ids)

    groups: dict[str, list[str]] = {}
    for ann in annotations:
        if ann.group is not None:
            groups.setdefault(ann.group, []).append(ann.query_id)
    per_group = {name: _mean(ids) for name, ids in sorted(groups.items())}

    group_average = None
    if per_group:
        raw = {
            label: sum(100.0 * sum(per_query[q][label] for q in ids) / len(ids) for ids in groups.values())
            / len(groups)
            for label in labels
        }
        group_average = {label: round(value, 2) for label, value in raw.items()}

    return EvalReport(
        per_metric=per_metric,
        per_group=per_group,
        group_average=group_average,
        query_count=len(annotations),
    )


# report rendering -------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    out: dict = {"query_count": report.query_count, "metrics": report.per_metric}
    if report.per_group:
        out["groups"] = report.per_group
        out["group_average"] = report.group_average
    return out


def render_table(report: EvalReport) -> str:
    """Plain-text table with one row per scope and aligned metric columns."""
    labels = list(report.per_metric)
    rows: list[tuple[str, dict[str, float]]] = []
    for name, values in report.per_group.items():
        rows.append((name, values))
    if report.group_average is not None:
        rows.append(("average", report.group_average))
    rows.append(("overall", report.per_metric))

    name_width = max(len("scope"), *(len(name) for name, _ in rows))
    widths = [max(len(label), 6) for label in labels]
    header = "scope".ljust(name_width) + "".join(
        f"  {label:>{w}}" for label, w in zip(labels, widths)
    )
    lines = [header, "-" * len(header)]
    for name, values in rows:
        lines.append(
            name.ljust(name_width)
            + "".join(f"  {values[label]:>{w}.2f}" for label, w in zip(labels, widths))
        )
    lines.append(f"queries: {report.query_count}")
    return "\n".join(lines)


# annotation ingestion ----------------------------------------------------------


def _annotation_from_obj(obj: Mapping) -> QueryAnnotation:
    subset = obj.get("subset_ids")
    return QueryAnnotation(
        query_id=str(obj["query_id"]),
        reference_id=str(obj["reference_id"]),
        modification_text=str(obj["modification_text"]),
        target_ids=frozenset(str(t) for t in obj["target_ids"]),
        subset_ids=tuple(str(s) for s in subset) if subset is not None else None,
        group=str(obj["group"]) if obj.get("group") is not None else None,
    )


def load_annotations(path: str | Path) -> list[QueryAnnotation]:
    """Load the generic annotation schema: a JSON array of query objects."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [_annotation_from_obj(obj) for obj in raw]


def save_annotations(annotations: Sequence[QueryAnnotation], path: str | Path) -> None:
    payload = []
    for ann in annotations:
        obj: dict = {
            "query_id": ann.query_id,
            "reference_id": ann.reference_id,
            "modification_text": ann.modification_text,
            "target_ids": sorted(ann.target_ids),
        }
        if ann.subset_ids is not None:
            obj["subset_ids"] = list(ann.subset_ids)
        if ann.group is not None:
            obj["group"] = ann.group
        payload.append(obj)
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def cirr_to_annotations(raw: Sequence[Mapping]) -> list[QueryAnnotation]:
    """Adapt CIRR-style records (pairid/reference/caption/target_hard/img_set).

    The reference image is dropped from the subset pool, matching the
    benchmark's restricted-pool protocol.
    """
    out = []
    for obj in raw:
        members = [m for m in obj["img_set"]["members"] if m != obj["reference"]]
        out.append(
            QueryAnnotation(
                query_id=str(obj["pairid"]),
                reference_id=obj["reference"],
                modification_text=obj["caption"],
                target_ids=frozenset({obj["target_hard"]}),
                subset_ids=tuple(members),
            )
        )
    return out


def circo_to_annotations(raw: Sequence[Mapping]) -> list[QueryAnnotation]:
    """Adapt CIRCO-style records with multiple ground-truth targets."""
    out = []
    for obj in raw:
        targets = set(obj.get("gt_img_ids") or [])
        targets.add(obj["target_img_id"])
        out.append(
            QueryAnnotation(
                query_id=str(obj["id"]),
                reference_id=str(obj["reference_img_id"]),
                modification_text=obj["relative_caption"],
                target_ids=frozenset(str(t) for t in targets),
            )
        )
    return out


def fashioniq_to_annotations(raw: Sequence[Mapping], category: str) -> list[QueryAnnotation]:
    """Adapt FashionIQ records; the two captions are joined with ", "."""
    out = []
    for i, obj in enumerate(raw):
        out.append(
            QueryAnnotation(
                query_id=f"{category}:{i}",
                reference_id=obj["candidate"],
                modification_text=", ".join(obj["captions"]),
                target_ids=frozenset({obj["target"]}),
                group=category,
            )
        )
    return out


def genecis_to_annotations(raw: Sequence[Mapping], task: str) -> list[QueryAnnotation]:
    """Adapt GeneCIS records; each query carries its own small gallery."""
    out = []
    for i, obj in enumerate(raw):
        out.append(
            QueryAnnotation(
                query_id=f"{task}:{i}",
                reference_id=str(obj["reference"]),
                modification_text=obj["condition"],
                target_ids=frozenset({str(obj["target"])}),
                subset_ids=tuple(str(g) for g in obj["gallery"]),
                group=task,
            )
        )
    return out
