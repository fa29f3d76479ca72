"""End-to-end command-line flows: exit codes, stream discipline, format closure."""

import numpy as np
import pytest

from uniembed.cli import main
from uniembed.store import EmbeddingSet, load_embeddings, save_embeddings


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    index_data = rng.standard_normal((200, 16)).astype(np.float32)
    query_data = index_data[:10] + 0.01 * rng.standard_normal((10, 16)).astype(np.float32)
    index = EmbeddingSet(ids=tuple(f"i{j:03d}" for j in range(200)), data=index_data)
    queries = EmbeddingSet(ids=tuple(f"q{j}" for j in range(10)), data=query_data)
    save_embeddings(index, tmp_path / "index.uemb")
    save_embeddings(queries, tmp_path / "queries.uemb")
    gt_lines = [f"q{j}\ti{j:03d}" for j in range(10)]
    (tmp_path / "gt.tsv").write_text("\n".join(gt_lines) + "\n")
    return tmp_path


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_file_is_domain_error(self, capsys, tmp_path):
        assert main(["validate", str(tmp_path / "nope.uemb")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_success_is_zero(self, workspace):
        assert main(["validate", str(workspace / "index.uemb")]) == 0


class TestSearchEvaluateClosure:
    def test_search_output_feeds_evaluate(self, workspace, capsys):
        preds = workspace / "preds.tsv"
        code = main(
            ["search", "--k", "5", str(workspace / "index.uemb"),
             str(workspace / "queries.uemb"), "-o", str(preds)]
        )
        assert code == 0
        lines = preds.read_text().splitlines()
        assert len(lines) == 10
        assert all(len(line.split("\t")[1].split(",")) == 5 for line in lines)
        capsys.readouterr()

        code = main(["evaluate", str(preds), str(workspace / "gt.tsv")])
        assert code == 0
        out = capsys.readouterr().out
        # queries are jittered copies of their single relevant index row
        assert out.strip() == "mP@5 = 1.000000"

    def test_evaluate_hand_case(self, tmp_path, capsys):
        (tmp_path / "preds.tsv").write_text("q1\ta,x,y,z,w\nq2\tc,d,e,f,g\n")
        (tmp_path / "gt.tsv").write_text("q1\ta,b\nq2\tc,d,e,f,g,h,i\n")
        assert main(["evaluate", str(tmp_path / "preds.tsv"), str(tmp_path / "gt.tsv")]) == 0
        assert capsys.readouterr().out.strip() == "mP@5 = 0.750000"

    def test_per_query_output(self, tmp_path, capsys):
        (tmp_path / "preds.tsv").write_text("q1\ta\nq2\tc\n")
        (tmp_path / "gt.tsv").write_text("q1\ta\nq2\tz\n")
        out_path = tmp_path / "per_query.tsv"
        main(["evaluate", str(tmp_path / "preds.tsv"), str(tmp_path / "gt.tsv"),
              "--per-query", str(out_path)])
        capsys.readouterr()
        assert out_path.read_text() == "q1\t1.000000\nq2\t0.000000\n"

    def test_search_results_stable_across_threads(self, workspace, capsys):
        outs = []
        for threads in ("1", "3"):
            path = workspace / f"preds_{threads}.tsv"
            main(["search", "--k", "5", "--threads", threads,
                  str(workspace / "index.uemb"), str(workspace / "queries.uemb"),
                  "-o", str(path)])
            outs.append(path.read_text())
        capsys.readouterr()
        assert outs[0] == outs[1]


class TestPcaAndPipelines:
    def test_fit_apply_cycle(self, workspace, capsys):
        model = workspace / "model.uckp"
        reduced = workspace / "reduced.uemb"
        assert main(["pca-fit", str(workspace / "index.uemb"), "-k", "4", "-o", str(model)]) == 0
        assert main(["pca-apply", str(model), str(workspace / "queries.uemb"),
                     "-o", str(reduced)]) == 0
        capsys.readouterr()
        out = load_embeddings(reduced)
        assert out.dim == 4 and out.count == 10

    def test_pipeline_apply(self, workspace, capsys):
        model = workspace / "model.uckp"
        main(["pca-fit", str(workspace / "index.uemb"), "-k", "4", "-o", str(model)])
        spec = workspace / "pipe.json"
        spec.write_text(
            '{"sources": [{"tag": "main", "dim": 16}], '
            '"stages": [{"kind": "pca", "model": "model.uckp"}, {"kind": "normalize"}]}'
        )
        out_path = workspace / "out.uemb"
        assert main(["pipeline-apply", str(spec), str(workspace / "queries.uemb"),
                     "-o", str(out_path)]) == 0
        capsys.readouterr()
        out = load_embeddings(out_path)
        assert out.dim == 4 and out.normalized is True
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-5)

    def test_validate_reports_violations(self, tmp_path, capsys):
        bad = EmbeddingSet(
            ids=("a", "b"),
            data=np.array([[1.0, 0.0], [3.0, 4.0]], dtype=np.float32),
            normalized=True,
        )
        # bypass write-side validation by writing a compliant file, then flip data
        save_embeddings(
            EmbeddingSet(ids=("a", "b"),
                         data=np.array([[1.0, 0.0], [0.6, 0.8]], dtype=np.float32),
                         normalized=True),
            tmp_path / "ok.uemb",
        )
        raw = bytearray((tmp_path / "ok.uemb").read_bytes())
        raw[28:32] = np.float32(5.0).tobytes()
        (tmp_path / "bad.uemb").write_bytes(bytes(raw))
        assert main(["validate", str(tmp_path / "bad.uemb")]) == 1
        captured = capsys.readouterr()
        assert "error:" in captured.err


class TestSoupAndTraining:
    def test_train_soup_cycle(self, tmp_path, capsys):
        args = ["train-toy", "--classes", "6", "--samples-per-class", "8",
                "--input-dim", "12", "--embed-dim", "6", "--epochs", "1",
                "--batch-size", "16", "--dropout-samples", "2"]
        a, b, souped = tmp_path / "a.uckp", tmp_path / "b.uckp", tmp_path / "soup.uckp"
        log = tmp_path / "log.tsv"
        assert main(args + ["--seed", "1", "-o", str(a), "--log", str(log)]) == 0
        assert main(args + ["--seed", "2", "-o", str(b)]) == 0
        assert main(["soup", str(a), str(b), "-o", str(souped)]) == 0
        capsys.readouterr()
        assert souped.exists()
        header, first = log.read_text().splitlines()[:2]
        assert header == "step\tlr_embed\tlr_head\tloss"
        assert first.startswith("1\t")

    def test_train_is_reproducible(self, tmp_path, capsys):
        args = ["train-toy", "--classes", "4", "--samples-per-class", "6",
                "--input-dim", "8", "--embed-dim", "4", "--seed", "7"]
        main(args + ["-o", str(tmp_path / "x.uckp")])
        main(args + ["-o", str(tmp_path / "y.uckp")])
        capsys.readouterr()
        assert (tmp_path / "x.uckp").read_bytes() == (tmp_path / "y.uckp").read_bytes()


class TestBench:
    def test_bench_prints_throughput_and_writes_nothing(self, workspace, capsys):
        before = sorted(p.name for p in workspace.iterdir())
        assert main(["bench", str(workspace / "index.uemb"),
                     str(workspace / "queries.uemb"), "--repeats", "2"]) == 0
        captured = capsys.readouterr()
        assert "queries/sec" in captured.out
        assert sorted(p.name for p in workspace.iterdir()) == before
