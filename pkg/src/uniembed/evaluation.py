"""Mean Precision at k over ranked retrieval results.

For each query q with n_q relevant index items, only the first
min(n_q, k) ranks count; the per-query score is the fraction of those
ranks whose prediction is relevant, and the reported metric is the
plain mean over queries. Predictions shorter than min(n_q, k) are
treated as if the missing slots were irrelevant. Accumulation is in
float64 so the per-query/aggregate identity holds to 1e-12.

Ground-truth file (TSV): query_id, TAB, comma-separated relevant ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, TextIO

from .errors import EngineError
from .retrieval import RankedResult


@dataclass(frozen=True)
class GroundTruth:
    """Non-empty relevant-id set per query."""

    relevant: dict[str, frozenset[str]]

    def __post_init__(self) -> None:
        cleaned = {}
        for query_id, ids in self.relevant.items():
            ids = frozenset(ids)
            if not ids:
                raise EngineError(f"query {query_id!r} has no relevant ids (n_q must be > 0)")
            cleaned[query_id] = ids
        object.__setattr__(self, "relevant", cleaned)

    def n_relevant(self, query_id: str) -> int:
        return len(self.relevant[query_id])


def _query_score(result: RankedResult, gt: GroundTruth, k: int) -> float:
    relevant = gt.relevant.get(result.query_id)
    if relevant is None:
        raise EngineError(f"query {result.query_id!r} missing from ground truth")
    hit_ids = result.ids()
    if len(set(hit_ids)) != len(hit_ids):
        raise EngineError(f"query {result.query_id!r} has duplicate predictions")
    depth = min(len(relevant), k)
    hits = sum(1 for id_ in hit_ids[:depth] if id_ in relevant)
    return hits / depth


def per_query_precision(
    predictions: Sequence[RankedResult], gt: GroundTruth, k: int = 5
) -> dict[str, float]:
    """Precision at min(n_q, k) for each query."""
    if not predictions:
        raise EngineError("no predictions to score")
    if k < 1:
        raise EngineError(f"k must be positive, got {k}")
    seen = set()
    scores = {}
    for result in predictions:
        if result.query_id in seen:
            raise EngineError(f"query {result.query_id!r} appears twice in predictions")
        seen.add(result.query_id)
        scores[result.query_id] = _query_score(result, gt, k)
    return scores


def mean_precision_at_k(
    predictions: Sequence[RankedResult], gt: GroundTruth, k: int = 5
) -> float:
    """Mean over queries of the per-query precision; value in [0, 1]."""
    scores = per_query_precision(predictions, gt, k)
    return sum(scores.values()) / len(scores)


def write_ground_truth(gt: GroundTruth, sink: TextIO | str | Path) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            return write_ground_truth(gt, fh)
    for query_id, ids in gt.relevant.items():
        for token in (query_id, *ids):
            if any(ch in token for ch in "\t\n,"):
                raise EngineError(f"id {token!r} cannot be written to TSV")
        sink.write(f"{query_id}\t{','.join(sorted(ids))}\n")


def read_ground_truth(source: TextIO | str | Path) -> GroundTruth:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_ground_truth(fh)
    relevant: dict[str, frozenset[str]] = {}
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EngineError(f"ground-truth line {lineno}: expected 'query<TAB>ids', got {line!r}")
        query_id, joined = parts
        if query_id in relevant:
            raise EngineError(f"ground-truth line {lineno}: duplicate query {query_id!r}")
        ids = frozenset(tok for tok in joined.split(",") if tok)
        if not ids:
            raise EngineError(f"ground-truth line {lineno}: query {query_id!r} has no relevant ids")
        relevant[query_id] = ids
    return GroundTruth(relevant=relevant)
