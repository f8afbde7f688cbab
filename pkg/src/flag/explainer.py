"""Edge-mask explanations of a single document prediction.

A sigmoid weight per stored edge scales the message that edge carries.  The
mask logits are fitted with Adam so the masked model still predicts the
explained class while keeping the mask small and near-binary::

    loss = CE(masked logits, target) + size_coef * sum(w) + entropy_coef * sum(H(w))

Only edges whose endpoints both lie within ``hops`` (undirected) of the
document node are optimized; the rest stay at weight 1.  Sentences are then
ranked by the weight of their sentence-node -> document-node edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from flag import autograd as ag
from flag.graph import hop_distances
from flag.model import Adam, cross_entropy


class ExplainerError(RuntimeError):
    pass


@dataclass
class ExplainerConfig:
    hops: int = 3
    epochs: int = 1000
    lr: float = 0.01
    size_coef: float = 0.005
    entropy_coef: float = 0.1
    seed: int = 0


@dataclass
class EdgeMask:
    logits: np.ndarray
    weights: np.ndarray
    trainable: np.ndarray
    hop_limit: int
    epochs: int
    target_class: int
    history: Optional[List[float]] = None


@dataclass
class SentenceRanking:
    entries: List[Tuple[int, float]]

    @property
    def order(self):
        return [j for j, _ in self.entries]


def explain(graph, model, predicted_class=None, config: ExplainerConfig = None) -> EdgeMask:
    """Fit an edge mask explaining ``model``'s prediction on ``graph``.

    ``predicted_class`` defaults to the model's own argmax prediction.
    """
    config = config or ExplainerConfig()
    dtype = model.dtype
    if predicted_class is None:
        logits, _ = model.forward(graph, requires_grad=False)
        predicted_class = int(np.argmax(logits.data))

    dist = hop_distances(graph, graph.doc_node)
    near = (dist >= 0) & (dist <= config.hops)
    trainable = near[graph.edges[:, 0]] & near[graph.edges[:, 1]]
    keep = trainable.astype(dtype)

    rng = np.random.default_rng(config.seed)
    std = math.sqrt(2.0) * math.sqrt(2.0 / (2 * graph.n_nodes))
    logits_arr = (rng.standard_normal(graph.n_edges) * std).astype(dtype)
    logits_arr[~trainable] = 0.0
    state = {"mask": logits_arr}
    opt = Adam(state, lr=config.lr)
    tiny = np.asarray(1e-15, dtype=dtype)
    history = []
    for epoch in range(config.epochs):
        lt = ag.Tensor(state["mask"], requires_grad=True)
        sig = ag.sigmoid(lt)
        w = ag.add(ag.mul(sig, keep), 1.0 - keep)
        out, _ = model.forward(graph, edge_weight=w, requires_grad=False)
        loss = cross_entropy(out, predicted_class)
        if config.size_coef:
            loss = loss + ag.mul(np.asarray(config.size_coef, dtype), ag.sum(ag.mul(sig, keep)))
        if config.entropy_coef:
            one_minus = ag.add(np.asarray(1.0, dtype), ag.mul(np.asarray(-1.0, dtype), sig))
            ent = ag.add(ag.mul(sig, ag.log(ag.add(sig, tiny))), ag.mul(one_minus, ag.log(ag.add(one_minus, tiny))))
            loss = loss + ag.mul(np.asarray(-config.entropy_coef, dtype), ag.sum(ag.mul(ent, keep)))
        value = float(loss.data)
        if not math.isfinite(value):
            raise ExplainerError(f"non-finite explanation objective at epoch {epoch} on {graph.doc_id!r}")
        history.append(value)
        ag.backprop(loss)
        opt.step({"mask": lt.grad * keep})

    final = ag.sigmoid(ag.Tensor(state["mask"])).data
    weights = np.where(trainable, final, 1.0).astype(dtype)
    return EdgeMask(state["mask"].copy(), weights, trainable, config.hops, config.epochs,
                    predicted_class, history)


def rank_sentences(mask: EdgeMask, graph) -> SentenceRanking:
    """Sentences by descending weight of their sn_j -> dn edge; ties by index."""
    dn = graph.doc_node
    entries = []
    for j in range(graph.n_sentences):
        e = graph.edge_index(graph.sentence_node(j), dn)
        entries.append((j, float(mask.weights[e])))
    entries.sort(key=lambda t: (-t[1], t[0]))
    return SentenceRanking(entries)


def sentence_texts(sentences):
    return [" ".join(s.tokens) if s.tokens else f"sentence {s.sentence_index}" for s in sentences]


def emit_explanation(ranking: SentenceRanking, texts, k, path_stem=None, doc_id=""):
    """Top-``k`` sentences (clamped to the sentence count) with their scores.

    Returns the record list; with ``path_stem`` also writes ``.json`` and
    ``.txt`` files.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    top = ranking.entries[:min(k, len(ranking.entries))]
    records = [{"rank": r + 1, "sentence_index": j, "importance": w, "text": texts[j]}
               for r, (j, w) in enumerate(top)]
    if path_stem is not None:
        with open(f"{path_stem}.json", "w", encoding="utf-8") as fh:
            json.dump({"doc_id": doc_id, "top_sentences": records}, fh, indent=2)
            fh.write("\n")
        with open(f"{path_stem}.txt", "w", encoding="utf-8") as fh:
            fh.write(f"{'rank':>4}  {'sent':>4}  {'weight':>8}  text\n")
            for rec in records:
                fh.write(f"{rec['rank']:>4}  {rec['sentence_index']:>4}  {rec['importance']:>8.4f}  {rec['text']}\n")
    return records
