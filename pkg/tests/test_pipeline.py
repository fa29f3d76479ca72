"""Stage chaining, JSON specs, neuron selection, concat, and normalization."""

import json

import numpy as np
import pytest

from uniembed.errors import EngineError
from uniembed.pca import fit_pca
from uniembed.pipeline import (
    Concat,
    DescriptorPipeline,
    L2Normalize,
    PcaProject,
    SelectNeurons,
    apply_pipeline,
    build_pipeline,
    concat_embeddings,
    l2_normalize,
    select_random_neurons,
)
from uniembed.soup import save_checkpoint
from uniembed.store import EmbeddingSet


def make_set(data, ids=None):
    data = np.asarray(data, dtype=np.float32)
    if ids is None:
        ids = tuple(f"r{i}" for i in range(len(data)))
    return EmbeddingSet(ids=tuple(ids), data=data)


@pytest.fixture
def pca_model_8to3(tmp_path):
    rng = np.random.default_rng(0)
    model = fit_pca(make_set(rng.standard_normal((40, 8))), k=3)
    path = tmp_path / "model.uckp"
    save_checkpoint(model.to_checkpoint(), path)
    return model, path


class TestBuild:
    def test_single_pca_stage(self, pca_model_8to3):
        _, path = pca_model_8to3
        spec = {"sources": [{"tag": "a", "dim": 8}], "stages": [{"kind": "pca", "model": str(path)}]}
        pipeline = build_pipeline(spec)
        assert pipeline.output_dim == 3

    def test_dim_chain_violation(self, pca_model_8to3):
        _, path = pca_model_8to3
        spec = {
            "sources": [{"tag": "a", "dim": 8}],
            "stages": [{"kind": "pca", "model": str(path)}, {"kind": "pca", "model": str(path)}],
        }
        with pytest.raises(EngineError, match="dim chain: 3 ≠ 8"):
            build_pipeline(spec)

    def test_concat_project_normalize(self, pca_model_8to3):
        _, path = pca_model_8to3
        spec = {
            "sources": [{"tag": "a", "dim": 4}, {"tag": "b", "dim": 4}],
            "stages": [{"kind": "concat"}, {"kind": "pca", "model": str(path)}, {"kind": "normalize"}],
        }
        pipeline = build_pipeline(spec)
        assert pipeline.output_dim == 3

    def test_unknown_stage_kind(self):
        spec = {"sources": [{"tag": "a", "dim": 4}], "stages": [{"kind": "whiten"}]}
        with pytest.raises(EngineError, match="unknown stage kind 'whiten'"):
            build_pipeline(spec)

    def test_missing_model_file(self, tmp_path):
        spec = {"sources": [{"tag": "a", "dim": 4}], "stages": [{"kind": "pca", "model": "nope.uckp"}]}
        with pytest.raises(EngineError, match="missing model file"):
            build_pipeline(spec, base_dir=tmp_path)

    def test_multi_source_needs_leading_concat(self):
        spec = {
            "sources": [{"tag": "a", "dim": 4}, {"tag": "b", "dim": 4}],
            "stages": [{"kind": "normalize"}],
        }
        with pytest.raises(EngineError, match="leading concat"):
            build_pipeline(spec)

    def test_spec_file_roundtrip(self, tmp_path, pca_model_8to3):
        _, path = pca_model_8to3
        spec_path = tmp_path / "pipe.json"
        spec_path.write_text(
            json.dumps(
                {"sources": [{"tag": "a", "dim": 8}], "stages": [{"kind": "pca", "model": str(path)}]}
            )
        )
        assert build_pipeline(spec_path).output_dim == 3


class TestApply:
    def test_identity_pipeline(self):
        emb = make_set(np.random.default_rng(1).standard_normal((5, 4)))
        pipeline = DescriptorPipeline(sources=(("a", 4),), stages=())
        out = apply_pipeline(pipeline, {"a": emb})
        assert out is emb

    def test_select_then_normalize(self):
        emb = make_set([[3.0, 5.0, 4.0]])
        pipeline = DescriptorPipeline(
            sources=(("a", 3),), stages=(SelectNeurons(indices=(0, 2)), L2Normalize())
        )
        out = apply_pipeline(pipeline, {"a": emb})
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], rtol=1e-6)
        assert out.normalized is True

    def test_id_mismatch_between_sources(self):
        a = make_set(np.ones((2, 2)), ids=("a", "b"))
        b = make_set(np.ones((2, 2)), ids=("a", "c"))
        pipeline = DescriptorPipeline(sources=(("x", 2), ("y", 2)), stages=(Concat(),))
        with pytest.raises(EngineError, match="id mismatch"):
            apply_pipeline(pipeline, {"x": a, "y": b})

    def test_id_preservation_through_stages(self, pca_model_8to3):
        model, _ = pca_model_8to3
        emb = make_set(np.random.default_rng(2).standard_normal((6, 8)))
        pipeline = DescriptorPipeline(
            sources=(("a", 8),), stages=(PcaProject(model=model), L2Normalize())
        )
        out = apply_pipeline(pipeline, {"a": emb})
        assert out.ids == emb.ids

    def test_order_sensitivity_project_vs_normalize(self, pca_model_8to3):
        model, _ = pca_model_8to3
        emb = make_set(np.random.default_rng(3).standard_normal((10, 8)) * 3.0)
        proj_then_norm = apply_pipeline(
            DescriptorPipeline(sources=(("a", 8),), stages=(PcaProject(model=model), L2Normalize())),
            {"a": emb},
        )
        norm_then_proj = apply_pipeline(
            DescriptorPipeline(sources=(("a", 8),), stages=(L2Normalize(), PcaProject(model=model))),
            {"a": emb},
        )
        assert not np.allclose(proj_then_norm.data, norm_then_proj.data, atol=1e-3)

    def test_determinism(self, pca_model_8to3):
        model, _ = pca_model_8to3
        emb = make_set(np.random.default_rng(4).standard_normal((7, 8)))
        pipeline = DescriptorPipeline(
            sources=(("a", 8),), stages=(PcaProject(model=model), L2Normalize())
        )
        first = apply_pipeline(pipeline, {"a": emb})
        second = apply_pipeline(pipeline, {"a": emb})
        np.testing.assert_array_equal(first.data, second.data)


class TestSelectRandomNeurons:
    def test_full_selection_is_permutation(self):
        stage = select_random_neurons(d=64, k=64, seed=123)
        assert sorted(stage.indices) == list(range(64))

    def test_same_seed_same_indices(self):
        assert select_random_neurons(1024, 64, seed=7) == select_random_neurons(1024, 64, seed=7)

    def test_different_seeds_differ(self):
        a = select_random_neurons(1024, 64, seed=7)
        b = select_random_neurons(1024, 64, seed=8)
        assert a.indices != b.indices

    def test_indices_distinct_and_in_range(self):
        for seed in range(10):
            stage = select_random_neurons(100, 30, seed=seed)
            assert len(set(stage.indices)) == 30
            assert all(0 <= i < 100 for i in stage.indices)

    def test_k_exceeds_d(self):
        with pytest.raises(EngineError, match="cannot select"):
            select_random_neurons(10, 11, seed=0)

    def test_apply_equals_column_gather(self):
        rng = np.random.default_rng(5)
        emb = make_set(rng.standard_normal((12, 50)))
        stage = select_random_neurons(50, 8, seed=9)
        out = stage.apply(emb)
        for j, idx in enumerate(stage.indices):
            np.testing.assert_array_equal(out.data[:, j], emb.data[:, idx])


class TestConcat:
    def test_single_set_unchanged(self):
        emb = make_set(np.ones((3, 5)))
        assert concat_embeddings([emb]) is emb

    def test_rows_align_by_id(self):
        a = make_set([[1.0, 2.0]], ids=("a",))
        b = make_set([[3.0, 4.0, 5.0]], ids=("a",))
        out = concat_embeddings([a, b])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0, 4.0, 5.0]])
        assert out.dim == 5 and out.normalized is False

    def test_misordered_sources_align(self):
        rng = np.random.default_rng(6)
        data_a = rng.standard_normal((4, 3)).astype(np.float32)
        data_b = rng.standard_normal((4, 2)).astype(np.float32)
        ids = ("w", "x", "y", "z")
        a = make_set(data_a, ids=ids)
        b = EmbeddingSet(ids=("z", "w", "y", "x"), data=data_b[[3, 0, 2, 1]])
        out = concat_embeddings([a, b])
        assert out.ids == tuple(sorted(ids))
        for i, id_ in enumerate(out.ids):
            np.testing.assert_array_equal(out.data[i, :3], a.data[a.ids.index(id_)])
            np.testing.assert_array_equal(out.data[i, 3:], b.data[b.ids.index(id_)])

    def test_halves_add_to_double_width(self):
        rng = np.random.default_rng(7)
        a = make_set(rng.standard_normal((3, 512)))
        b = make_set(rng.standard_normal((3, 512)))
        assert concat_embeddings([a, b]).dim == 1024

    def test_empty_list(self):
        with pytest.raises(EngineError, match="nothing to concatenate"):
            concat_embeddings([])


class TestNormalize:
    def test_three_four_five(self):
        out = l2_normalize(make_set([[3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], rtol=1e-6)

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        once = l2_normalize(make_set(rng.standard_normal((6, 4))))
        twice = l2_normalize(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-7)

    def test_zero_row_names_id(self):
        emb = make_set([[1.0, 0.0], [0.0, 0.0]], ids=("ok", "dead"))
        with pytest.raises(EngineError, match="'dead'"):
            l2_normalize(emb)
