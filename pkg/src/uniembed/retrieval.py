"""Exact top-k nearest-neighbor search under squared Euclidean distance.

The index precomputes row norms so distances come from the expansion
|q|^2 + |z|^2 - 2 q.z (clamped at zero against floating-point
cancellation). The search itself runs in two passes:

  1. a float32 coarse pass over fixed-size index tiles, with the norm
     term folded into the matrix product as an extra coordinate so each
     tile is a single GEMM plus one partition;
  2. a float64 refinement of the per-tile candidates using the exact
     expansion, ordered by (distance, index id).

A per-query error bound on the float32 scores decides whether any
non-candidate could still beat the refined k-th hit; if so (near-exact
ties, pathological data) the query falls back to a full float64 scan.
Results are therefore always identical to the naive reference,
including the tie rule, while the common path stays at GEMM speed.

Tile sizes are fixed constants independent of the thread count, so the
same inputs give bit-identical results no matter how the query blocks
are scheduled.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, TextIO

import numpy as np

from .errors import EngineError
from .store import EmbeddingSet

QUERY_BLOCK = 512
INDEX_BLOCK = 16384
_COARSE_SLACK = 11  # extra float32 candidates kept per tile beyond k


@dataclass(frozen=True)
class RankedResult:
    """Top hits for one query: (index id, squared distance), best first."""

    query_id: str
    hits: tuple[tuple[str, float], ...]

    def ids(self) -> list[str]:
        return [id_ for id_, _ in self.hits]


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable search database with precomputed squared row norms."""

    base: EmbeddingSet
    norms_sq: np.ndarray

    # internal, derived in build_index: float64 copy, augmented float32
    # matrix for the coarse pass, and the rank of each row's id in
    # ascending id order (the tie-break key).
    _data64: np.ndarray = None
    _augmented32: np.ndarray = None
    _id_rank: np.ndarray = None

    @property
    def count(self) -> int:
        return self.base.count

    @property
    def dim(self) -> int:
        return self.base.dim


def build_index(base: EmbeddingSet) -> RetrievalIndex:
    """Precompute norms and search scaffolding; the base set is shared, not copied."""
    if base.count < 1:
        raise EngineError("cannot build an index over an empty set")
    data64 = base.data.astype(np.float64)
    norms_sq = np.einsum("ij,ij->i", data64, data64)

    d = base.dim
    augmented = np.empty((base.count, d + 1), dtype=np.float32)
    augmented[:, :d] = base.data
    augmented[:, d] = (-0.5 * norms_sq).astype(np.float32)

    order = np.argsort(np.array(base.ids))
    id_rank = np.empty(base.count, dtype=np.int64)
    id_rank[order] = np.arange(base.count)

    for arr in (norms_sq, augmented, id_rank):
        arr.flags.writeable = False
    index = RetrievalIndex(base=base, norms_sq=norms_sq)
    object.__setattr__(index, "_data64", data64)
    object.__setattr__(index, "_augmented32", augmented)
    object.__setattr__(index, "_id_rank", id_rank)
    return index


def _check_query_args(index: RetrievalIndex, queries: EmbeddingSet, k: int) -> None:
    if k < 1:
        raise EngineError(f"k must be positive, got {k}")
    if queries.dim != index.dim:
        raise EngineError(
            f"dimension mismatch: queries have d={queries.dim}, index has d={index.dim}"
        )


def _exact_query(index: RetrievalIndex, q64: np.ndarray, qn: float, kk: int):
    """Full float64 scan of one query; the escalation path and shared tail."""
    dist = qn + index.norms_sq - 2.0 * (index._data64 @ q64)
    np.maximum(dist, 0.0, out=dist)
    order = np.lexsort((index._id_rank, dist))[:kk]
    return order, dist[order]


def search(
    index: RetrievalIndex,
    queries: EmbeddingSet,
    k: int,
    threads: int | None = None,
    query_block: int = QUERY_BLOCK,
    index_block: int = INDEX_BLOCK,
) -> list[RankedResult]:
    """Exact top-k by squared Euclidean distance, ties broken by ascending id.

    ``threads`` parallelizes over fixed-size query blocks; the block and
    tile geometry never depends on it, so results are identical for any
    thread count.
    """
    _check_query_args(index, queries, k)
    n, d = index.count, index.dim
    kk = min(k, n)
    nq = queries.count
    if nq == 0:
        return []

    m = min(kk + _COARSE_SLACK, index_block, n)
    tiles = [(start, min(start + index_block, n)) for start in range(0, n, index_block)]
    aug = index._augmented32
    z64 = index._data64
    zn = index.norms_sq
    id_rank = index._id_rank
    q64_all = queries.data.astype(np.float64)
    qn_all = np.einsum("ij,ij->i", q64_all, q64_all)

    # float32 coarse-score error bound, from the standard dot-product
    # rounding model |fl(x.y) - x.y| <= n*eps*|x|.|y|, with headroom.
    z_amax = float(np.linalg.norm(aug.astype(np.float64), axis=1).max())
    eps32 = float(np.finfo(np.float32).eps)

    out_idx = np.empty((nq, kk), dtype=np.int64)
    out_dist = np.empty((nq, kk), dtype=np.float64)

    def run_block(q_start: int) -> None:
        q_end = min(q_start + query_block, nq)
        nb = q_end - q_start
        qa = np.empty((nb, d + 1), dtype=np.float32)
        qa[:, :d] = queries.data[q_start:q_end]
        qa[:, d] = 1.0

        cands: list[np.ndarray] = []
        bounds: list[np.ndarray] = []  # m-th best coarse score per tile, else -inf
        for z0, z1 in tiles:
            scores = qa @ aug[z0:z1].T
            width = z1 - z0
            if width <= m:
                cands.append(np.broadcast_to(np.arange(z0, z1), (nb, width)))
                bounds.append(np.full(nb, -np.inf))
                continue
            part = np.argpartition(scores, width - m, axis=1)[:, width - m :]
            bounds.append(np.take_along_axis(scores, part, 1).min(axis=1).astype(np.float64))
            cands.append(part + z0)
        cand = np.hstack(cands)
        excl_best = np.max(np.column_stack(bounds), axis=1)

        for row in range(nb):
            qi = q_start + row
            c = cand[row]
            q64 = q64_all[qi]
            qn = qn_all[qi]
            dist = qn + zn[c] - 2.0 * (z64[c] @ q64)
            np.maximum(dist, 0.0, out=dist)
            order = np.lexsort((id_rank[c], dist))[:kk]
            picked, picked_dist = c[order], dist[order]

            # can any excluded row still reach the k-th slot? excluded
            # float32 scores are <= excl_best, i.e. exact distances are
            # >= qn - 2*excl_best - margin.
            if np.isfinite(excl_best[row]):
                qa_norm = float(np.sqrt(qn + 1.0))
                margin = 8.0 * (d + 2) * eps32 * (qa_norm * z_amax + 1.0)
                safe_floor = qn - 2.0 * excl_best[row] - margin
                if picked_dist[-1] >= safe_floor:
                    picked, picked_dist = _exact_query(index, q64, qn, kk)
            out_idx[qi] = picked
            out_dist[qi] = picked_dist

    starts = list(range(0, nq, query_block))
    if threads is not None and threads > 1 and len(starts) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, starts))
    else:
        for s in starts:
            run_block(s)

    ids = index.base.ids
    return [
        RankedResult(
            query_id=queries.ids[qi],
            hits=tuple((ids[j], float(out_dist[qi, t])) for t, j in enumerate(out_idx[qi])),
        )
        for qi in range(nq)
    ]


def search_reference(index: RetrievalIndex, queries: EmbeddingSet, k: int) -> list[RankedResult]:
    """Naive direct-subtraction oracle: sum((q - z)^2) per pair, no rewriting.

    Kept in-tree so the fast path can be checked for exact ranking
    equivalence on any input.
    """
    _check_query_args(index, queries, k)
    kk = min(k, index.count)
    z64 = index._data64
    id_rank = index._id_rank
    ids = index.base.ids
    results = []
    for qi in range(queries.count):
        diff = z64 - queries.data[qi].astype(np.float64)
        dist = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((id_rank, dist))[:kk]
        results.append(
            RankedResult(
                query_id=queries.ids[qi],
                hits=tuple((ids[j], float(dist[j])) for j in order),
            )
        )
    return results


def write_predictions(
    results: Sequence[RankedResult],
    sink: TextIO | str | Path,
    distances_sink: TextIO | str | Path | None = None,
) -> None:
    """Write one TSV line per query: query_id, TAB, comma-joined hit ids.

    The optional second file carries the squared distances in the same
    shape, for debugging.
    """

    def emit(fh: TextIO, render) -> None:
        for r in results:
            for token in (r.query_id, *[id_ for id_, _ in r.hits]):
                if any(ch in token for ch in "\t\n,"):
                    raise EngineError(f"id {token!r} cannot be written to TSV")
            fh.write(f"{r.query_id}\t{render(r)}\n")

    def open_or_pass(target):
        return open(target, "w") if isinstance(target, (str, Path)) else target

    fh = open_or_pass(sink)
    try:
        emit(fh, lambda r: ",".join(id_ for id_, _ in r.hits))
    finally:
        if fh is not sink:
            fh.close()
    if distances_sink is not None:
        fh = open_or_pass(distances_sink)
        try:
            emit(fh, lambda r: ",".join(f"{d:.9g}" for _, d in r.hits))
        finally:
            if fh is not distances_sink:
                fh.close()


def read_predictions(source: TextIO | str | Path) -> list[RankedResult]:
    """Parse a predictions TSV; distances are not stored there, so hits

    carry 0.0 placeholders (rank order is all the evaluator needs)."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_predictions(fh)
    results = []
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EngineError(f"predictions line {lineno}: expected 'query<TAB>ids', got {line!r}")
        query_id, joined = parts
        hit_ids = [tok for tok in joined.split(",") if tok] if joined else []
        results.append(RankedResult(query_id=query_id, hits=tuple((h, 0.0) for h in hit_ids)))
    return results
