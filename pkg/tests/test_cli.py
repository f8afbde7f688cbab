import json
import os

import pytest

from flag.cli import main
from flag.graph import graph_stats, load_graph

SMALL = """\
epochs = 2
lr = 1e-3
layers = 1
heads = 2
hidden_dim = 8
provider.mode = pseudo
provider.dim = 8
split.test_year = 2019
split.val_fraction = 0.25
"""


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert main(["gen-corpus", "--out", str(out), "--n-trainval", "8", "--n-test", "2", "--dim", "8"]) == 0
    (out / "config.txt").write_text(SMALL)
    return out


def run_pipeline(corpus, out):
    return main(["pipeline", "--corpus", str(corpus), "--out", str(out), "--seed", "1"])


def test_gen_corpus_layout(corpus):
    names = sorted(os.listdir(corpus))
    assert names == ["amr", "config.txt", "embeddings.flage", "manifest.jsonl", "prices.csv", "truth.jsonl"]
    assert len(os.listdir(corpus / "amr")) == 10


def test_pipeline_artifacts_and_eval(corpus, tmp_path, capsys):
    run = tmp_path / "run"
    assert run_pipeline(corpus, run) == 0
    out = capsys.readouterr().out
    assert "# resolved config" in out and "seed = 1" in out
    model = run / "model"
    for name in ("model.flagm", "split.json", "epochs.jsonl", "test_report.json", "test_report.txt"):
        assert (model / name).exists()
    assert len((model / "epochs.jsonl").read_text().splitlines()) == 2
    args = ["eval", "--model", str(model / "model.flagm"), "--graphs", str(run / "graphs"),
            "--split", str(model / "split.json"), "--out", str(tmp_path / "ev")]
    assert main(args) == 0
    first = (tmp_path / "ev.json").read_text()
    assert main(args) == 0
    assert (tmp_path / "ev.json").read_text() == first
    assert json.loads(first) == json.loads((model / "test_report.json").read_text())


def test_label_counts_every_event(corpus, tmp_path, capsys):
    out = tmp_path / "labels.jsonl"
    assert main(["label", "--manifest", str(corpus / "manifest.jsonl"), "--prices", str(corpus / "prices.csv"),
                 "--out", str(out), "--horizon", "weekly"]) == 0
    assert "labelled 10 of 10 events (weekly)" in capsys.readouterr().out
    truth = {json.loads(l)["doc_id"]: json.loads(l)["label"] for l in (corpus / "truth.jsonl").read_text().splitlines()}
    got = {json.loads(l)["doc_id"]: json.loads(l)["label"] for l in out.read_text().splitlines()}
    assert got == truth


def test_stats_recomputed_from_files(corpus, tmp_path, capsys):
    graphs = tmp_path / "graphs"
    assert main(["build-graphs", "--manifest", str(corpus / "manifest.jsonl"), "--config",
                 str(corpus / "config.txt"), "--out", str(graphs), "--threads", "3"]) == 0
    capsys.readouterr()
    assert main(["stats", "--graphs", str(graphs)]) == 0
    table = capsys.readouterr().out
    st = graph_stats(load_graph(graphs / p) for p in sorted(os.listdir(graphs)) if p.endswith(".flagg"))
    assert f"{st.n_nodes:.2f}" in table and f"{st.avg_degree:.2f}" in table
    saved = json.loads((graphs / "stats.json").read_text())
    assert saved["n_graphs"] == 10 and saved["n_edges"] == pytest.approx(st.n_edges)


def test_missing_amr_file_names_the_document(corpus, tmp_path, caplog):
    os.remove(corpus / "amr" / "D0003.amr")
    code = main(["build-graphs", "--manifest", str(corpus / "manifest.jsonl"), "--config",
                 str(corpus / "config.txt"), "--out", str(tmp_path / "g")])
    assert code == 1
    assert "D0003" in caplog.text
    assert len([p for p in os.listdir(tmp_path / "g") if p.endswith(".flagg")]) == 9


def test_explain_command(corpus, tmp_path, capsys):
    run = tmp_path / "run"
    assert run_pipeline(corpus, run) == 0
    graph = sorted((run / "graphs").glob("*.flagg"))[0]
    assert main(["explain", "--graph", str(graph), "--model", str(run / "model" / "model.flagm"),
                 "--epochs", "20", "--top-k", "2", "--amr", str(corpus / "amr" / (graph.stem + ".amr")),
                 "--out", str(tmp_path / "ex")]) == 0
    rec = json.loads((tmp_path / "ex.json").read_text())
    assert rec["doc_id"] == graph.stem and len(rec["top_sentences"]) == 2


def test_errors_exit_with_code_2(tmp_path, capsys):
    assert main(["label", "--manifest", str(tmp_path / "nope.jsonl"), "--prices", "x", "--out", "y"]) == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("layers = many\n")
    assert main(["label", "--manifest", "m", "--prices", "p", "--out", "o", "--config", str(bad)]) == 2
