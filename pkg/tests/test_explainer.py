import json

import numpy as np
import pytest

from flag.explainer import (EdgeMask, ExplainerConfig, SentenceRanking, emit_explanation, explain,
                            rank_sentences, sentence_texts)
from flag.graph import CONCEPT, DOCUMENT, SENTENCE, DocumentGraph, build_document_graph
from flag.penman import AmrNode, SentenceAmr

from conftest import featured_graph, small_model


def chain_graph(dim=8):
    """dn - sn - c0 - c1 - c2 - c3: c2 and c3 lie 4 and 5 hops out."""
    kind = np.array([CONCEPT] * 4 + [SENTENCE, DOCUMENT], dtype=np.int8)
    links = [(5, 4), (4, 0), (0, 1), (1, 2), (2, 3)]
    edges = np.array([a for u, v in links for a in ((u, v), (v, u))])
    feats = np.random.default_rng(0).standard_normal((6, dim)).astype(np.float32)
    return DocumentGraph("chain", kind, np.array([0, 0, 0, 0, 0, -1]), ["a", "b", "c", "d", "", ""],
                         np.full((6, 2), -1), edges, feats)


def mask_with(weights):
    w = np.asarray(weights, dtype=np.float64)
    return EdgeMask(np.zeros_like(w), w, np.ones(len(w), bool), 3, 0, 0)


def test_identity_mask_reproduces_logits_exactly():
    for kind in ("gatv2", "gat", "gcn"):
        graph = featured_graph(3)
        model = small_model(kind, dtype="float32")
        plain = model.forward(graph, requires_grad=False)[0].data
        ones = model.forward(graph, edge_weight=np.ones(graph.n_edges, np.float32), requires_grad=False)[0].data
        np.testing.assert_array_equal(plain, ones)


def test_edges_beyond_hop_limit_stay_frozen():
    graph = chain_graph()
    model = small_model()
    mask = explain(graph, model, config=ExplainerConfig(epochs=30, seed=1))
    far = [graph.edge_index(u, v) for u, v in ((1, 2), (2, 1), (2, 3), (3, 2))]
    assert not mask.trainable[far].any()
    assert mask.trainable.sum() == graph.n_edges - 4
    np.testing.assert_array_equal(mask.weights[far], 1.0)
    np.testing.assert_array_equal(mask.logits[far], 0.0)
    assert not np.any(mask.weights[mask.trainable] == 1.0)


def test_uniform_mask_ranks_by_index():
    graph = featured_graph(1, m_range=(4, 4))
    ranking = rank_sentences(mask_with(np.full(graph.n_edges, 0.5)), graph)
    assert ranking.order == [0, 1, 2, 3]


def test_hand_set_sentence_weights():
    s = [SentenceAmr(j, ["x"], [AmrNode("a", "thing", (0, 1))], []) for j in range(3)]
    graph = build_document_graph("d", s)
    w = np.full(graph.n_edges, 0.3)
    for j, v in enumerate((0.9, 0.1, 0.5)):
        w[graph.edge_index(graph.sentence_node(j), graph.doc_node)] = v
    ranking = rank_sentences(mask_with(w), graph)
    assert ranking.order == [0, 2, 1]
    assert [v for _, v in ranking.entries] == [0.9, 0.5, 0.1]


def test_size_penalty_shrinks_mask():
    graph = featured_graph(2)
    model = small_model()
    base = dict(epochs=150, lr=0.05, entropy_coef=0.0, seed=0)
    loose = explain(graph, model, config=ExplainerConfig(size_coef=0.0, **base))
    tight = explain(graph, model, config=ExplainerConfig(size_coef=0.5, **base))
    assert tight.weights.mean() < loose.weights.mean()


def test_objective_decreases_and_is_seeded():
    graph = featured_graph(4)
    model = small_model()
    cfg = ExplainerConfig(epochs=200, seed=3)
    a = explain(graph, model, config=cfg)
    assert a.history[-1] < a.history[0]
    assert len(a.history) == 200
    b = explain(graph, model, config=cfg)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = explain(graph, model, config=ExplainerConfig(epochs=200, seed=4))
    assert not np.array_equal(a.weights, c.weights)


def test_zero_epochs_returns_initial_mask():
    graph = featured_graph(4)
    mask = explain(graph, small_model(), predicted_class=1, config=ExplainerConfig(epochs=0))
    assert mask.target_class == 1
    np.testing.assert_allclose(mask.weights, 1.0 / (1.0 + np.exp(-mask.logits)), rtol=1e-12)
    assert np.all((mask.weights > 0) & (mask.weights < 1))


def test_emit_clamps_k_and_writes_files(tmp_path):
    s = [SentenceAmr(j, [f"w{j}"], [AmrNode("a", "thing", (0, 1))], []) for j in range(2)]
    ranking = SentenceRanking([(1, 0.8), (0, 0.2)])
    records = emit_explanation(ranking, sentence_texts(s), 5, tmp_path / "ex", doc_id="d")
    assert [r["sentence_index"] for r in records] == [1, 0]
    assert records[0]["text"] == "w1"
    with open(tmp_path / "ex.json") as fh:
        assert json.load(fh)["top_sentences"] == records
    assert len((tmp_path / "ex.txt").read_text().splitlines()) == 3
    assert len(emit_explanation(ranking, ["a", "b"], 1)) == 1
    with pytest.raises(ValueError):
        emit_explanation(ranking, ["a", "b"], 0)
