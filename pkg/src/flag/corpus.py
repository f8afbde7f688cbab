"""Corpus manifests and the synthetic planted-signal corpus.

A manifest is JSON Lines, one record per document::

    {"doc_id": "D0001", "amr_path": "amr/D0001.amr", "ticker": "TK001", "call_date": "2016-03-02"}

``amr_path`` is resolved relative to the manifest's directory.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import random
from dataclasses import dataclass

from flag.embeddings import PseudoEmbeddings, archive_from_provider
from flag.labeling import CallEvent, PriceSeries, write_prices
from flag.penman import AmrEdge, AmrNode, SentenceAmr, serialize_penman_document

MARKER_TOKEN = "windfall"

_WORDS = (
    "revenue", "quarter", "growth", "margin", "customer", "product", "market",
    "guidance", "expense", "segment", "demand", "pricing", "contract", "backlog",
    "inventory", "supply", "capital", "dividend", "debt", "cash", "earnings",
    "outlook", "volume", "region", "channel", "platform", "service", "subscriber",
    "pipeline", "investment", "acquisition", "integration", "headcount", "tax",
    "currency", "freight", "retail", "wholesale", "software", "hardware",
    "license", "renewal", "portfolio", "asset", "loan", "deposit", "premium",
    "claim", "reserve", "patent", "trial", "launch", "factory", "shipment",
    "order", "lease", "network", "storage", "payroll", "client",
)
_ROLES = (":ARG0", ":ARG1", ":ARG2", ":mod", ":poss", ":time", ":manner", ":location")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    doc_id: str
    amr_path: str
    ticker: str
    call_date: dt.date

    @property
    def event(self):
        return CallEvent(self.doc_id, self.ticker, self.call_date)


def read_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                amr = rec["amr_path"]
                records.append(ManifestRecord(
                    str(rec["doc_id"]),
                    amr if os.path.isabs(amr) else os.path.join(base, amr),
                    str(rec["ticker"]),
                    dt.date.fromisoformat(rec["call_date"]),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    ids = [r.doc_id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate doc_id in manifest")
    return records


def write_manifest(records, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            amr = os.path.relpath(r.amr_path, base)
            fh.write(json.dumps({
                "doc_id": r.doc_id, "amr_path": amr, "ticker": r.ticker,
                "call_date": r.call_date.isoformat(),
            }) + "\n")


def _sentence_graph(rng, tokens, sentence_index):
    """Random tree over one concept node per token, aligned one-to-one."""
    ids = [f"v{i}" for i in range(len(tokens))]
    nodes = [AmrNode(ids[i], tokens[i], (i, i + 1)) for i in range(len(tokens))]
    order = list(range(len(tokens)))
    rng.shuffle(order)
    root = order[0]
    edges = []
    for k in range(1, len(order)):
        parent = order[rng.randrange(k)]
        edges.append(AmrEdge(ids[parent], ids[order[k]], rng.choice(_ROLES)))
    return SentenceAmr(sentence_index, tokens, nodes, edges, ids[root])


def _weekdays(start, end):
    d = start
    while d <= end:
        if d.weekday() < 5:
            yield d
        d += dt.timedelta(days=1)


def _prices_for(rng, ticker, call_date, label):
    """Trading days around the call whose daily and weekly labels both equal ``label``."""
    days = list(_weekdays(call_date - dt.timedelta(days=21), call_date + dt.timedelta(days=21)))
    base = rng.uniform(20.0, 200.0)
    jump = base * rng.uniform(0.03, 0.08) * (1 if label else -1)
    closes = []
    for d in days:
        noise = base * rng.uniform(-0.005, 0.005)
        closes.append(round(base + noise + (jump if d > call_date else 0.0), 4))
    return PriceSeries(ticker, tuple(days), tuple(closes))


def generate_corpus(out_dir, n_trainval=80, n_test=32, seed=0, dim=32, test_year=2019,
                    sentences=(4, 8), tokens=(3, 7), marker=MARKER_TOKEN):
    """Write a planted-signal corpus under ``out_dir``.

    A document is labelled 1 exactly when one of its sentences contains the
    ``marker`` token; both the daily and weekly price labels are constructed
    to agree with that.  Produces ``amr/*.amr``, ``manifest.jsonl``,
    ``prices.csv``, ``embeddings.flage`` (pseudo vectors of width ``dim``)
    and ``truth.jsonl`` recording the planted label and marker sentence.
    """
    rng = random.Random(seed)
    os.makedirs(os.path.join(out_dir, "amr"), exist_ok=True)
    records, store, truth, docs = [], {}, [], {}
    total = n_trainval + n_test
    labels = [i % 2 for i in range(total)]
    rng.shuffle(labels)
    for i in range(total):
        doc_id = f"D{i:04d}"
        label = labels[i]
        m = rng.randint(*sentences)
        marker_at = rng.randrange(m) if label else -1
        graphs = []
        for j in range(m):
            toks = [rng.choice(_WORDS) for _ in range(rng.randint(*tokens))]
            if j == marker_at:
                toks[rng.randrange(len(toks))] = marker
            graphs.append(_sentence_graph(rng, toks, j))
        amr_path = os.path.join(out_dir, "amr", f"{doc_id}.amr")
        with open(amr_path, "w", encoding="utf-8") as fh:
            fh.write(serialize_penman_document(graphs))
        docs[doc_id] = graphs

        year = test_year if i >= n_trainval else rng.randint(test_year - 4, test_year - 1)
        call_date = dt.date(year, 1, 1) + dt.timedelta(days=rng.randrange(30, 330))
        ticker = f"TK{i:04d}"
        store[ticker] = _prices_for(rng, ticker, call_date, label)
        records.append(ManifestRecord(doc_id, amr_path, ticker, call_date))
        truth.append({"doc_id": doc_id, "label": label, "marker_sentence": marker_at})

    write_manifest(records, os.path.join(out_dir, "manifest.jsonl"))
    write_prices(store, os.path.join(out_dir, "prices.csv"))
    archive_from_provider(PseudoEmbeddings(dim, seed), docs).save(os.path.join(out_dir, "embeddings.flage"))
    with open(os.path.join(out_dir, "truth.jsonl"), "w", encoding="utf-8") as fh:
        for t in truth:
            fh.write(json.dumps(t) + "\n")
    return records


def read_truth(path):
    with open(path, encoding="utf-8") as fh:
        return {rec["doc_id"]: rec for rec in map(json.loads, filter(str.strip, fh))}
