"""Reading and writing sentence-level AMR graphs in PENMAN notation.

Each sentence is one PENMAN block, optionally preceded by metadata comment
lines::

    # ::tok our stock
    # ::alignments w-0-1 s-1-2
    (s / stock
       :poss (w / we))

Blocks are separated by blank lines.  Alignments are ``nodeid-start-end``
entries with half-open token ranges.  Constants (quoted strings, numbers,
``-`` and friends) become literal nodes whose id is derived from the parent
variable and the role, e.g. ``n:op1``.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

__all__ = [
    "AmrNode",
    "AmrEdge",
    "SentenceAmr",
    "PenmanError",
    "parse_penman_document",
    "parse_penman_file",
    "serialize_penman",
    "serialize_penman_document",
    "generate_random_amr",
]

_VARIABLE = re.compile(r"^[a-z][a-z]?\d*$")
_TOKEN = re.compile(r'\s*(?:(\()|(\))|(/)|(:[^\s()"]*)|("(?:[^"\\]|\\.)*")|([^\s()"/:][^\s()"/]*))')


class PenmanError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class AmrNode:
    id: str
    concept: str
    alignment: Optional[Tuple[int, int]] = None
    literal: bool = False

    def __post_init__(self):
        if not self.concept:
            raise ValueError(f"node {self.id!r} has an empty concept")
        if self.alignment is not None and not self.alignment[0] < self.alignment[1]:
            raise ValueError(f"node {self.id!r} has an empty alignment {self.alignment}")


@dataclass(frozen=True)
class AmrEdge:
    src: str
    dst: str
    role: str

    def __post_init__(self):
        if not self.role.startswith(":"):
            raise ValueError(f"role {self.role!r} must start with ':'")


@dataclass(frozen=True, eq=False)
class SentenceAmr:
    """One sentence's AMR graph.

    Equality ignores the storage order of nodes and edges, so a graph equals
    its own PENMAN round-trip even when the text defined a variable after
    referencing it.
    """

    sentence_index: int
    tokens: Tuple[str, ...]
    nodes: Tuple[AmrNode, ...]
    edges: Tuple[AmrEdge, ...]
    root: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise ValueError(f"edge {e} references an unknown node")
        for n in self.nodes:
            if n.alignment is not None and not 0 <= n.alignment[0] < n.alignment[1] <= len(self.tokens):
                raise ValueError(f"alignment of {n.id!r} outside the {len(self.tokens)} tokens")
        if self.root is None and self.nodes:
            object.__setattr__(self, "root", self.nodes[0].id)
        elif self.root is not None and self.root not in known:
            raise ValueError(f"root {self.root!r} is not a node")

    def node(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def __eq__(self, other):
        if not isinstance(other, SentenceAmr):
            return NotImplemented
        return (
            self.sentence_index == other.sentence_index
            and self.tokens == other.tokens
            and self.root == other.root
            and sorted(self.nodes, key=_node_key) == sorted(other.nodes, key=_node_key)
            and sorted(self.edges, key=_edge_key) == sorted(other.edges, key=_edge_key)
        )

    __hash__ = None


def _node_key(n):
    return (n.id, n.concept, n.alignment or (-1, -1), n.literal)


def _edge_key(e):
    return (e.src, e.role, e.dst)


# -- parsing ---------------------------------------------------------------


def _split_blocks(text):
    """Yield [(lineno, line), ...] for each blank-line separated block."""
    block = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            block.append((lineno, line))
        elif block:
            yield block
            block = []
    if block:
        yield block


def _tokenize(lines):
    out = []
    for lineno, line in lines:
        pos = 0
        while pos < len(line):
            if line[pos:].strip() == "":
                break
            m = _TOKEN.match(line, pos)
            if m is None or m.end() == pos:
                raise PenmanError(f"unexpected character {line[pos:].strip()[:1]!r}", lineno)
            kind = m.lastindex
            out.append((kind, m.group(kind), lineno))
            pos = m.end()
    return out


_LP, _RP, _SLASH, _ROLE, _STRING, _SYMBOL = range(1, 7)


class _BlockParser:
    def __init__(self, tokens, first_lineno):
        self.toks = tokens
        self.i = 0
        self.first_lineno = first_lineno
        self.concepts = {}  # var -> (concept, lineno)
        self.order = []  # node ids in order of definition
        self.literals = {}  # id -> concept, filled by resolve()
        self.edges = []  # (src, dst, role, lineno)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, self._last_line())

    def _last_line(self):
        return self.toks[-1][2] if self.toks else self.first_lineno

    def take(self, kind=None):
        tok = self.peek()
        if tok[0] is None:
            raise PenmanError("unexpected end of graph (unbalanced parentheses)", tok[2])
        if kind is not None and tok[0] != kind:
            raise PenmanError(f"expected {_KIND_NAMES[kind]}, found {tok[1]!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        if not self.toks:
            raise PenmanError("empty graph", self.first_lineno)
        root = self.node()
        if self.i != len(self.toks):
            kind, value, lineno = self.toks[self.i]
            if kind == _RP:
                raise PenmanError("unbalanced parentheses: unexpected ')'", lineno)
            raise PenmanError(f"trailing content {value!r} after graph", lineno)
        if root not in self.concepts:
            raise PenmanError(f"root variable {root!r} has no concept", self.first_lineno)
        self.resolve()
        return root

    def resolve(self):
        counts = {}
        edges = []
        for src, child, role, lineno in self.edges:
            if src not in self.concepts:
                raise PenmanError(f"edge {role} leaves undeclared variable {src!r}", lineno)
            if isinstance(child, tuple):
                kind, value = child
                if kind == _SYMBOL and value in self.concepts:
                    child = value
                elif kind == _SYMBOL and _VARIABLE.match(value):
                    raise PenmanError(f"edge {role} refers to undeclared variable {value!r}", lineno)
                else:
                    n = counts.get((src, role), 0)
                    counts[src, role] = n + 1
                    child = f"{src}{role}" if n == 0 else f"{src}{role}~{n}"
                    self.literals[child] = value
                    self.order.append(child)
            elif child not in self.concepts:
                raise PenmanError(f"edge {role} refers to undeclared variable {child!r}", lineno)
            edges.append((src, child, role, lineno))
        self.edges = edges

    def node(self):
        _, _, open_line = self.take(_LP)
        _, var, lineno = self.take(_SYMBOL)
        if self.peek()[0] == _SLASH:
            self.take()
            kind, concept, cline = self.take()
            if kind not in (_SYMBOL, _STRING):
                raise PenmanError(f"expected concept after '/', found {concept!r}", cline)
            if var in self.concepts:
                raise PenmanError(
                    f"variable {var!r} already defined on line {self.concepts[var][1]}", lineno
                )
            self.concepts[var] = (concept, lineno)
            self.order.append(var)
        while self.peek()[0] == _ROLE:
            _, role, rline = self.take()
            if len(role) < 2:
                raise PenmanError("empty role", rline)
            kind, value, vline = self.peek()
            if kind == _LP:
                child = self.node()
            elif kind in (_SYMBOL, _STRING):
                self.take()
                child = (kind, value)  # resolved once all definitions are known
            else:
                raise PenmanError(f"missing target for role {role}", vline)
            self.edges.append((var, child, role, rline))
        if self.peek()[0] is None:
            raise PenmanError(f"unbalanced parentheses: '(' opened on line {open_line} never closed", self._last_line())
        self.take(_RP)
        return var


_KIND_NAMES = {_LP: "'('", _RP: "')'", _SLASH: "'/'", _ROLE: "role", _STRING: "string", _SYMBOL: "symbol"}


def _parse_alignments(value, lineno):
    spans = {}
    for item in value.split():
        parts = item.rsplit("-", 2)
        try:
            node_id, start, end = parts[0], int(parts[1]), int(parts[2])
        except (IndexError, ValueError):
            raise PenmanError(f"malformed alignment {item!r}", lineno) from None
        if not node_id or start < 0 or end <= start:
            raise PenmanError(f"malformed alignment span {item!r}", lineno)
        spans[node_id] = (start, end, lineno)
    return spans


def _parse_block(lines, sentence_index):
    meta = {}
    graph_lines = []
    for lineno, line in lines:
        stripped = line.lstrip()
        if stripped.startswith("#"):
            m = re.match(r"#\s*::(\S+)\s?(.*)$", stripped)
            if m:
                meta[m.group(1)] = (m.group(2), lineno)
            continue
        graph_lines.append((lineno, line))

    tokens = tuple(meta["tok"][0].split()) if "tok" in meta else ()
    spans = _parse_alignments(*meta["alignments"]) if "alignments" in meta else {}

    parser = _BlockParser(_tokenize(graph_lines), lines[0][0])
    root = parser.parse()

    nodes = []
    for node_id in parser.order:
        literal = node_id in parser.literals
        concept = parser.literals[node_id] if literal else parser.concepts[node_id][0]
        alignment = None
        if node_id in spans:
            start, end, lineno = spans.pop(node_id)
            if end > len(tokens):
                raise PenmanError(
                    f"alignment {node_id}-{start}-{end} exceeds the {len(tokens)} tokens", lineno
                )
            alignment = (start, end)
        nodes.append(AmrNode(node_id, concept, alignment, literal))
    if spans:
        node_id, (_, _, lineno) = next(iter(spans.items()))
        raise PenmanError(f"alignment for unknown node {node_id!r}", lineno)

    edges = [AmrEdge(src, dst, role) for src, dst, role, _ in parser.edges]
    return SentenceAmr(sentence_index, tokens, nodes, edges, root)


def parse_penman_document(text: str) -> List[SentenceAmr]:
    """Parse every PENMAN block of ``text``, in file order."""
    return [_parse_block(block, i) for i, block in enumerate(_split_blocks(text))]


def parse_penman_file(path) -> List[SentenceAmr]:
    with open(path, encoding="utf-8") as fh:
        return parse_penman_document(fh.read())


# -- serialization ---------------------------------------------------------


def serialize_penman(graph: SentenceAmr) -> str:
    """Render one graph as a PENMAN block with ``::tok``/``::alignments`` lines.

    Nodes unreachable from the root cannot be expressed in a single PENMAN
    tree and raise ``ValueError``.
    """
    by_id = {n.id: n for n in graph.nodes}
    out_edges = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        out_edges[e.src].append(e)
    defined = set()
    lines = []

    def fmt(node_id, depth):
        node = by_id[node_id]
        defined.add(node_id)
        parts = [f"({node_id} / {node.concept}"]
        for e in out_edges[node_id]:
            child = by_id[e.dst]
            pad = "\n" + "   " * (depth + 1)
            if child.literal:
                parts.append(f"{pad}{e.role} {child.concept}")
            elif e.dst in defined:
                parts.append(f"{pad}{e.role} {e.dst}")
            else:
                parts.append(f"{pad}{e.role} {fmt(e.dst, depth + 1)}")
        return "".join(parts) + ")"

    meta = []
    if graph.tokens:
        meta.append("# ::tok " + " ".join(graph.tokens))
    aligned = [f"{n.id}-{n.alignment[0]}-{n.alignment[1]}" for n in graph.nodes if n.alignment]
    if aligned:
        meta.append("# ::alignments " + " ".join(aligned))
    if not graph.nodes:
        raise ValueError("cannot serialize an empty graph")
    body = fmt(graph.root, 0)
    unreached = [n.id for n in graph.nodes if n.id not in defined and not n.literal]
    if unreached:
        raise ValueError(f"nodes not reachable from root {graph.root!r}: {unreached}")
    lines.extend(meta)
    lines.append(body)
    return "\n".join(lines) + "\n"


def serialize_penman_document(graphs) -> str:
    return "\n".join(serialize_penman(g) for g in graphs)


# -- fixtures --------------------------------------------------------------

_CONCEPTS = (
    "invest-01", "stock", "business", "we", "grow-01", "revenue", "quarter",
    "expect-01", "market", "increase-01", "company", "risk-01", "product",
    "customer", "year", "strong-02", "continue-01", "margin", "cost", "new-01",
)
_ROLES = (":ARG0", ":ARG1", ":ARG2", ":mod", ":poss", ":time", ":op1", ":op2", ":manner")


def _variable_names(n):
    names = []
    for i in range(n):
        letter = "abcdefghijklmnopqrstuvwxyz"[i % 26]
        names.append(letter if i < 26 else f"{letter}{i // 26}")
    return names


def generate_random_amr(seed: int, n_nodes: int, reentrancy_prob: float = 0.0,
                        sentence_index: int = 0) -> SentenceAmr:
    """A connected, rooted random AMR with one synthesized token per node.

    With ``reentrancy_prob == 0`` the result is a tree.  Otherwise each
    non-root node, with that probability, also receives an extra incoming
    edge from an earlier node, which keeps the graph acyclic.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if not 0.0 <= reentrancy_prob <= 1.0:
        raise ValueError("reentrancy_prob must lie in [0, 1]")
    rng = random.Random(seed)
    ids = _variable_names(n_nodes)
    tokens = [f"{rng.choice(_CONCEPTS).split('-')[0]}{i}" for i in range(n_nodes)]
    order = list(range(n_nodes))
    rng.shuffle(order)
    nodes = []
    for i in range(n_nodes):
        concept = rng.choice(_CONCEPTS)
        alignment = (order[i], order[i] + 1) if rng.random() < 0.9 else None
        nodes.append(AmrNode(ids[i], concept, alignment))
    children = {i: [] for i in range(n_nodes)}
    for i in range(1, n_nodes):
        parent = rng.randrange(i)
        children[parent].append((i, rng.choice(_ROLES)))
    for i in range(2, n_nodes):
        if rng.random() < reentrancy_prob:
            extra = rng.randrange(i)
            if all(c != i for c, _ in children[extra]):
                children[extra].append((i, rng.choice(_ROLES)))

    # store nodes and edges in the depth-first order the serializer uses
    node_order, edges, seen = [], [], set()

    def visit(i):
        seen.add(i)
        node_order.append(nodes[i])
        for c, role in children[i]:
            edges.append(AmrEdge(ids[i], ids[c], role))
            if c not in seen:
                visit(c)

    visit(0)
    return SentenceAmr(sentence_index, tokens, node_order, edges, ids[0])
