"""Descriptor post-processing pipelines: select / concat / project / normalize.

A pipeline is an ordered stage list whose dimensions must chain. With a
single source the stream starts at that source's dim; with several
sources the first stage must be a concat, which joins them (aligned by
sorted id) into one stream. Stage order is the semantics: projecting
and then normalizing is not the same map as the reverse.

JSON spec document:

    {"sources": [{"tag": "model_a", "dim": 512}, ...],
     "stages":  [{"kind": "select", "indices": [...]} |
                 {"kind": "concat"} |
                 {"kind": "pca", "model": "path/to/model.uckp"} |
                 {"kind": "normalize"}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EngineError
from .pca import PcaModel, project
from .soup import load_checkpoint
from .store import EmbeddingSet

ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True)
class SelectNeurons:
    """Keep a fixed subset of coordinates, in the given order."""

    indices: tuple[int, ...]

    def output_dim(self, input_dim: int) -> int:
        if len(set(self.indices)) != len(self.indices):
            raise EngineError("select stage has repeated indices")
        if any(i < 0 or i >= input_dim for i in self.indices):
            raise EngineError(f"select index out of range for dim {input_dim}")
        return len(self.indices)

    def apply(self, emb: EmbeddingSet) -> EmbeddingSet:
        self.output_dim(emb.dim)
        return EmbeddingSet(ids=emb.ids, data=emb.data[:, list(self.indices)], normalized=False)


@dataclass(frozen=True)
class Concat:
    """Join all declared sources side by side; only legal as the first stage."""


@dataclass(frozen=True)
class PcaProject:
    """Project through a fitted PCA model."""

    model: PcaModel

    def output_dim(self, input_dim: int) -> int:
        if input_dim != self.model.input_dim:
            raise EngineError(
                f"dim chain: {input_dim} ≠ {self.model.input_dim} expected by the PCA stage"
            )
        return self.model.output_dim

    def apply(self, emb: EmbeddingSet) -> EmbeddingSet:
        return project(self.model, emb)


@dataclass(frozen=True)
class L2Normalize:
    """Scale every row to unit Euclidean norm."""

    def output_dim(self, input_dim: int) -> int:
        return input_dim

    def apply(self, emb: EmbeddingSet) -> EmbeddingSet:
        return l2_normalize(emb)


Stage = SelectNeurons | Concat | PcaProject | L2Normalize


@dataclass(frozen=True)
class DescriptorPipeline:
    """Validated stage list with declared per-source input dims."""

    sources: tuple[tuple[str, int], ...]
    stages: tuple[Stage, ...]
    output_dim: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_dim", _chain_dims(self.sources, self.stages))


def _chain_dims(sources: Sequence[tuple[str, int]], stages: Sequence[Stage]) -> int:
    if not sources:
        raise EngineError("pipeline declares no sources")
    for tag, dim in sources:
        if dim <= 0:
            raise EngineError(f"source {tag!r} has non-positive dim {dim}")
    multi = len(sources) > 1
    if multi and (not stages or not isinstance(stages[0], Concat)):
        raise EngineError("multiple sources require a leading concat stage")
    current = sources[0][1]
    for i, stage in enumerate(stages):
        if isinstance(stage, Concat):
            if i != 0:
                raise EngineError("concat must be the first stage")
            current = sum(dim for _, dim in sources)
        else:
            current = stage.output_dim(current)
    return current


def build_pipeline(spec: Mapping | str | Path, base_dir: str | Path | None = None) -> DescriptorPipeline:
    """Build a validated pipeline from a JSON document, dict, or file path.

    Relative PCA model paths resolve against ``base_dir`` (defaults to the
    spec file's directory when a path is given, else the working directory).
    """
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        if base_dir is None:
            base_dir = path.parent
        try:
            spec = json.loads(path.read_text())
        except OSError as exc:
            raise EngineError(f"cannot read pipeline spec: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise EngineError(f"pipeline spec is not valid JSON: {exc}") from exc
    base = Path(base_dir) if base_dir is not None else Path(".")

    try:
        raw_sources = spec["sources"]
        raw_stages = spec["stages"]
    except (KeyError, TypeError) as exc:
        raise EngineError(f"pipeline spec is missing section: {exc}") from exc

    sources = tuple((str(s["tag"]), int(s["dim"])) for s in raw_sources)
    if len({tag for tag, _ in sources}) != len(sources):
        raise EngineError("duplicate source tags")

    stages: list[Stage] = []
    for raw in raw_stages:
        kind = raw.get("kind")
        if kind == "select":
            stages.append(SelectNeurons(indices=tuple(int(i) for i in raw["indices"])))
        elif kind == "concat":
            stages.append(Concat())
        elif kind == "pca":
            model_path = Path(raw["model"])
            if not model_path.is_absolute():
                model_path = base / model_path
            if not model_path.exists():
                raise EngineError(f"missing model file: {model_path}")
            stages.append(PcaProject(model=PcaModel.from_checkpoint(load_checkpoint(model_path))))
        elif kind == "normalize":
            stages.append(L2Normalize())
        else:
            raise EngineError(f"unknown stage kind {kind!r}")
    return DescriptorPipeline(sources=sources, stages=tuple(stages))


def apply_pipeline(
    pipeline: DescriptorPipeline, sources: Mapping[str, EmbeddingSet]
) -> EmbeddingSet:
    """Run every stage in order over the tagged source sets.

    All sources must share one id set; with several sources the rows are
    aligned by sorted id before concatenation. Pure function: identical
    inputs give identical output.
    """
    declared = dict(pipeline.sources)
    if set(sources) != set(declared):
        raise EngineError(
            f"source tags differ: expected {sorted(declared)}, got {sorted(sources)}"
        )
    for tag, emb in sources.items():
        if emb.dim != declared[tag]:
            raise EngineError(f"source {tag!r}: dim {emb.dim} differs from declared {declared[tag]}")

    ordered = [sources[tag] for tag, _ in pipeline.sources]
    if len(ordered) > 1:
        current = None
    else:
        current = ordered[0]

    for stage in pipeline.stages:
        if isinstance(stage, Concat):
            current = concat_embeddings(ordered)
        else:
            current = stage.apply(current)
    if current is None:  # unreachable: multi-source pipelines start with concat
        raise EngineError("pipeline produced no output")
    return current


def select_random_neurons(d: int, k: int, seed: int) -> SelectNeurons:
    """Sample k distinct coordinate indices out of d, reproducibly.

    Uses a partial Fisher-Yates shuffle driven by numpy's seeded PCG64
    generator, so a seed fully determines the selection.
    """
    if k > d:
        raise EngineError(f"cannot select {k} neurons from {d}")
    if k < 1:
        raise EngineError("selection count must be positive")
    rng = np.random.default_rng(seed)
    pool = np.arange(d)
    for i in range(k):
        j = i + int(rng.integers(d - i))
        pool[i], pool[j] = pool[j], pool[i]
    return SelectNeurons(indices=tuple(int(i) for i in pool[:k]))


def concat_embeddings(sets: Sequence[EmbeddingSet]) -> EmbeddingSet:
    """Concatenate rows horizontally, aligned by id; dims add up."""
    if not sets:
        raise EngineError("nothing to concatenate")
    if len(sets) == 1:
        return sets[0]
    reference = sorted(sets[0].ids)
    for i, emb in enumerate(sets[1:], start=1):
        if sorted(emb.ids) != reference:
            extra = sorted(set(emb.ids).symmetric_difference(sets[0].ids))[:5]
            raise EngineError(f"id mismatch between sources (examples: {extra})")
    blocks = []
    for emb in sets:
        order = np.argsort(np.array(emb.ids))
        blocks.append(emb.data[order])
    return EmbeddingSet(ids=tuple(reference), data=np.hstack(blocks), normalized=False)


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Unit-normalize every row; zero rows are hard errors, not passthroughs."""
    norms = np.linalg.norm(emb.data.astype(np.float64), axis=1)
    bad = np.flatnonzero(norms <= ZERO_NORM_TOL)
    if bad.size:
        raise EngineError(f"cannot normalize zero row (id {emb.ids[bad[0]]!r})")
    data = (emb.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingSet(ids=emb.ids, data=data, normalized=True)
