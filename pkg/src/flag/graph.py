"""Document-level graphs built from a document's sentence AMR graphs.

Every sentence gets a virtual sentence node linked to all of its concept
nodes; consecutive sentence nodes are chained, and every sentence node is
linked to a single virtual document node.  All links are stored as two
directed arcs.  Virtual nodes start from zero features.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

CONCEPT, SENTENCE, DOCUMENT = 0, 1, 2
GRAPH_MAGIC = b"FLAGG1"
_NO_SENTENCE = 0xFFFFFFFF


class GraphBuildError(ValueError):
    pass


class GraphFormatError(ValueError):
    pass


@dataclass(eq=False)
class DocumentGraph:
    """Hierarchical document graph.

    ``kind[i]`` is one of CONCEPT / SENTENCE / DOCUMENT; ``sentence[i]`` is the
    owning sentence index (-1 for the document node); ``amr_id[i]`` is the AMR
    variable for concept nodes and ``""`` otherwise; ``alignment[i]`` is the
    token span of a concept node or (-1, -1).  ``edges`` is an (E, 2) array of
    directed (src, dst) arcs.
    """

    doc_id: str
    kind: np.ndarray
    sentence: np.ndarray
    amr_id: list
    alignment: np.ndarray
    edges: np.ndarray
    features: Optional[np.ndarray] = None

    @property
    def n_nodes(self):
        return len(self.kind)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_sentences(self):
        return int(np.count_nonzero(self.kind == SENTENCE))

    @property
    def doc_node(self):
        return int(np.flatnonzero(self.kind == DOCUMENT)[0])

    def sentence_node(self, j):
        return int(np.flatnonzero((self.kind == SENTENCE) & (self.sentence == j))[0])

    def edge_index(self, src, dst):
        hits = np.flatnonzero((self.edges[:, 0] == src) & (self.edges[:, 1] == dst))
        if len(hits) == 0:
            raise KeyError((src, dst))
        return int(hits[0])

    def with_features(self, features):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2 or features.shape[0] != self.n_nodes:
            raise ValueError(f"feature matrix must have {self.n_nodes} rows, got {features.shape}")
        return DocumentGraph(self.doc_id, self.kind, self.sentence, self.amr_id,
                             self.alignment, self.edges, features)

    def permuted(self, perm):
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return DocumentGraph(
            self.doc_id, self.kind[perm], self.sentence[perm], [self.amr_id[i] for i in perm],
            self.alignment[perm], inverse[self.edges],
            None if self.features is None else self.features[perm],
        )

    def __eq__(self, other):
        if not isinstance(other, DocumentGraph):
            return NotImplemented
        same_features = (
            self.features is None and other.features is None
            or self.features is not None and other.features is not None
            and np.array_equal(self.features, other.features)
        )
        return (
            self.doc_id == other.doc_id
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.sentence, other.sentence)
            and self.amr_id == other.amr_id
            and np.array_equal(self.alignment, other.alignment)
            and np.array_equal(self.edges, other.edges)
            and same_features
        )

    __hash__ = None


@dataclass(frozen=True)
class GraphStats:
    n_nodes: float
    n_edges: float
    avg_degree: float


def build_document_graph(doc_id, sentences) -> DocumentGraph:
    """Assemble the hierarchical graph; features are left unset."""
    if not sentences:
        raise GraphBuildError(f"{doc_id}: document has no sentences")
    indices = [s.sentence_index for s in sentences]
    if indices != list(range(len(sentences))):
        raise GraphBuildError(f"{doc_id}: sentence indices must be 0..m-1 in order, got {indices}")

    kind, sent, ids, align = [], [], [], []
    arcs = []
    offsets = []
    for s in sentences:
        if not s.nodes:
            raise GraphBuildError(f"{doc_id}: sentence {s.sentence_index} has an empty AMR graph")
        offsets.append(len(kind))
        local = {}
        for n in s.nodes:
            local[n.id] = len(kind)
            kind.append(CONCEPT)
            sent.append(s.sentence_index)
            ids.append(n.id)
            align.append(n.alignment if n.alignment is not None else (-1, -1))
        for e in s.edges:
            u, v = local[e.src], local[e.dst]
            arcs += [(u, v), (v, u)]

    m = len(sentences)
    first_sn = len(kind)
    for j in range(m):
        kind.append(SENTENCE)
        sent.append(j)
        ids.append("")
        align.append((-1, -1))
    dn = len(kind)
    kind.append(DOCUMENT)
    sent.append(-1)
    ids.append("")
    align.append((-1, -1))

    for j, s in enumerate(sentences):
        sn = first_sn + j
        for k in range(len(s.nodes)):
            c = offsets[j] + k
            arcs += [(c, sn), (sn, c)]
    for j in range(m - 1):
        arcs += [(first_sn + j, first_sn + j + 1), (first_sn + j + 1, first_sn + j)]
    for j in range(m):
        arcs += [(first_sn + j, dn), (dn, first_sn + j)]

    return DocumentGraph(
        doc_id=str(doc_id),
        kind=np.array(kind, dtype=np.int8),
        sentence=np.array(sent, dtype=np.int64),
        amr_id=ids,
        alignment=np.array(align, dtype=np.int64).reshape(-1, 2),
        edges=np.array(arcs, dtype=np.int64).reshape(-1, 2),
    )


def attach_features(graph, provider, sentences) -> DocumentGraph:
    """Return a copy of ``graph`` with an (N, provider.dim) float32 feature matrix.

    Aligned concept nodes take the provider's mean vector over their token
    span; unaligned concept nodes and all virtual nodes are zero.
    """
    if provider.dim <= 0:
        raise ValueError("provider dimension must be positive")
    tokens = {s.sentence_index: s.tokens for s in sentences}
    feats = np.zeros((graph.n_nodes, provider.dim), dtype=np.float32)
    for i in np.flatnonzero(graph.kind == CONCEPT):
        start, end = graph.alignment[i]
        if start < 0:
            continue
        j = int(graph.sentence[i])
        feats[i] = provider.lookup(graph.doc_id, j, tokens[j], (int(start), int(end)))
    return graph.with_features(feats)


def graph_stats(graphs) -> GraphStats:
    """Corpus means of node count, directed edge count and edges-per-node."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("graph_stats needs at least one graph")
    n = np.array([g.n_nodes for g in graphs], dtype=np.float64)
    e = np.array([g.n_edges for g in graphs], dtype=np.float64)
    return GraphStats(float(n.mean()), float(e.mean()), float((e / n).mean()))


def format_stats_table(rows):
    """Render ``[(label, GraphStats), ...]`` as an aligned text table."""
    header = f"{'':<16} {'Avg. # of nodes':>16} {'Avg. # of edges':>16} {'Avg. degree':>12}"
    lines = [header]
    for label, st in rows:
        lines.append(f"{label:<16} {st.n_nodes:>16.2f} {st.n_edges:>16.2f} {st.avg_degree:>12.2f}")
    return "\n".join(lines) + "\n"


def hop_distances(graph, source):
    """Undirected BFS distance from ``source`` to every node (-1 if unreachable)."""
    adj = [[] for _ in range(graph.n_nodes)]
    for u, v in graph.edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = np.full(graph.n_nodes, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


# -- binary format ---------------------------------------------------------


def serialize_graph(graph) -> bytes:
    d = 0 if graph.features is None else graph.features.shape[1]
    doc = graph.doc_id.encode("utf-8")
    parts = [
        GRAPH_MAGIC,
        struct.pack("<IIII", graph.n_nodes, graph.n_edges, graph.n_sentences, d),
        struct.pack("<H", len(doc)), doc,
    ]
    for i in range(graph.n_nodes):
        s = int(graph.sentence[i])
        raw = graph.amr_id[i].encode("utf-8")
        start, end = (int(x) for x in graph.alignment[i])
        parts.append(struct.pack("<BIii", int(graph.kind[i]), _NO_SENTENCE if s < 0 else s, start, end))
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(graph.edges.astype("<u4").tobytes())
    if d:
        parts.append(graph.features.astype("<f4").tobytes())
    return b"".join(parts)


def deserialize_graph(data: bytes) -> DocumentGraph:
    if data[:6] != GRAPH_MAGIC:
        raise GraphFormatError("not a document graph file (bad magic or version)")
    try:
        n, e, m, d = struct.unpack_from("<IIII", data, 6)
        pos = 22
        (ln,) = struct.unpack_from("<H", data, pos)
        doc_id = data[pos + 2:pos + 2 + ln].decode("utf-8")
        pos += 2 + ln
        kind = np.empty(n, dtype=np.int8)
        sent = np.empty(n, dtype=np.int64)
        align = np.empty((n, 2), dtype=np.int64)
        ids = []
        for i in range(n):
            k, s, start, end = struct.unpack_from("<BIii", data, pos)
            pos += 13
            (ln,) = struct.unpack_from("<H", data, pos)
            ids.append(data[pos + 2:pos + 2 + ln].decode("utf-8"))
            pos += 2 + ln
            kind[i] = k
            sent[i] = -1 if s == _NO_SENTENCE else s
            align[i] = (start, end)
    except (struct.error, UnicodeDecodeError) as exc:
        raise GraphFormatError(f"truncated or corrupt node table: {exc}") from None
    need = pos + e * 8 + n * d * 4
    if len(data) != need:
        raise GraphFormatError(f"expected {need} bytes, found {len(data)}")
    edges = np.frombuffer(data, dtype="<u4", count=2 * e, offset=pos).reshape(e, 2).astype(np.int64)
    pos += e * 8
    features = None
    if d:
        features = np.frombuffer(data, dtype="<f4", count=n * d, offset=pos).reshape(n, d).astype(np.float32)
    graph = DocumentGraph(doc_id, kind, sent, ids, align, edges, features)
    if graph.n_sentences != m:
        raise GraphFormatError(f"header says {m} sentences, node table has {graph.n_sentences}")
    return graph


def save_graph(graph, path):
    with open(path, "wb") as fh:
        fh.write(serialize_graph(graph))


def load_graph(path) -> DocumentGraph:
    with open(path, "rb") as fh:
        return deserialize_graph(fh.read())
