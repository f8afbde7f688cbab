"""Token embedding providers for initializing concept-node features.

Two providers share one lookup contract, ``lookup(doc_id, sentence_index,
tokens, span) -> vector``:

* :class:`FileEmbeddings` reads per-word vectors precomputed offline (for
  example by averaging a language model's last four hidden layers over each
  word's sub-tokens) from a binary archive.
* :class:`PseudoEmbeddings` hashes each token string to a seeded uniform
  vector.  It needs no model and is what the synthetic corpus uses.
"""

from __future__ import annotations

import hashlib
import struct
from functools import lru_cache

import numpy as np

DEFAULT_DIM = 768
ARCHIVE_MAGIC = b"FLAGE1"


class EmbeddingError(LookupError):
    pass


class ArchiveFormatError(ValueError):
    pass


class TokenEmbeddingArchive:
    """Per-sentence ``(T, D)`` float32 matrices keyed by ``(doc_id, sentence_index)``."""

    def __init__(self, dim):
        if dim <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dim = int(dim)
        self._rows = {}

    def add(self, doc_id, sentence_index, matrix):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[1] != self.dim:
            raise ValueError(f"expected a (T, {self.dim}) matrix, got {matrix.shape}")
        self._rows[(str(doc_id), int(sentence_index))] = matrix

    def get(self, doc_id, sentence_index):
        try:
            return self._rows[(doc_id, sentence_index)]
        except KeyError:
            raise EmbeddingError(f"archive has no sentence {sentence_index} of {doc_id!r}") from None

    def keys(self):
        return list(self._rows)

    def __len__(self):
        return len(self._rows)

    def __eq__(self, other):
        if not isinstance(other, TokenEmbeddingArchive):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._rows.keys() == other._rows.keys()
            and all(np.array_equal(m, other._rows[k]) for k, m in self._rows.items())
        )

    def to_bytes(self):
        keys = sorted(self._rows)
        index, offset = [], 0
        for doc_id, sentence_index in keys:
            t = self._rows[(doc_id, sentence_index)].shape[0]
            raw = doc_id.encode("utf-8")
            index.append(struct.pack("<H", len(raw)) + raw + struct.pack("<IIQ", sentence_index, t, offset))
            offset += t * self.dim * 4
        head = ARCHIVE_MAGIC + struct.pack("<II", self.dim, len(keys))
        body = b"".join(self._rows[k].astype("<f4").tobytes() for k in keys)
        return head + b"".join(index) + body

    @classmethod
    def from_bytes(cls, data):
        if data[:6] != ARCHIVE_MAGIC:
            raise ArchiveFormatError("not an embedding archive (bad magic)")
        try:
            dim, count = struct.unpack_from("<II", data, 6)
            pos = 14
            entries = []
            for _ in range(count):
                (n,) = struct.unpack_from("<H", data, pos)
                doc_id = data[pos + 2:pos + 2 + n].decode("utf-8")
                pos += 2 + n
                sentence_index, t, offset = struct.unpack_from("<IIQ", data, pos)
                pos += 16
                entries.append((doc_id, sentence_index, t, offset))
        except struct.error as exc:
            raise ArchiveFormatError(f"truncated archive index: {exc}") from None
        archive = cls(dim)
        for doc_id, sentence_index, t, offset in entries:
            start = pos + offset
            end = start + t * dim * 4
            if end > len(data):
                raise ArchiveFormatError(f"truncated matrix for ({doc_id!r}, {sentence_index})")
            matrix = np.frombuffer(data[start:end], dtype="<f4").reshape(t, dim)
            archive._rows[(doc_id, sentence_index)] = matrix.astype(np.float32)
        return archive

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class EmbeddingProvider:
    """Base class: ``dim`` plus :meth:`lookup`."""

    dim: int
    mode: str

    def lookup(self, doc_id, sentence_index, tokens, span):
        raise NotImplementedError


class FileEmbeddings(EmbeddingProvider):
    mode = "file"

    def __init__(self, archive, dim=None):
        if dim is not None and dim != archive.dim:
            raise EmbeddingError(f"archive dimension {archive.dim} does not match configured {dim}")
        self.archive = archive
        self.dim = archive.dim

    def lookup(self, doc_id, sentence_index, tokens, span):
        """Mean of the archive rows in the half-open token ``span``."""
        rows = self.archive.get(doc_id, sentence_index)
        start, end = span
        if not 0 <= start < end <= rows.shape[0]:
            raise EmbeddingError(
                f"span {span} outside the {rows.shape[0]} tokens of ({doc_id!r}, {sentence_index})"
            )
        return rows[start:end].astype(np.float64).mean(axis=0)


class PseudoEmbeddings(EmbeddingProvider):
    """Deterministic stand-in vectors: each distinct token string maps to
    ``dim`` draws from uniform(-0.5, 0.5) seeded by a hash of the token."""

    mode = "pseudo"

    def __init__(self, dim=DEFAULT_DIM, seed=0):
        if dim <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dim = int(dim)
        self.seed = int(seed)
        self._vector = lru_cache(maxsize=None)(self._draw)

    def _draw(self, token):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
        v = rng.uniform(-0.5, 0.5, self.dim)
        v.setflags(write=False)
        return v

    def token_vector(self, token):
        return self._vector(token)

    def lookup(self, doc_id, sentence_index, tokens, span):
        start, end = span
        if not 0 <= start < end <= len(tokens):
            raise EmbeddingError(f"span {span} outside the {len(tokens)} tokens")
        return np.mean([self._vector(t) for t in tokens[start:end]], axis=0)


def archive_from_provider(provider, documents):
    """Materialize an archive for ``{doc_id: [SentenceAmr, ...]}`` using ``provider``."""
    archive = TokenEmbeddingArchive(provider.dim)
    for doc_id, sentences in documents.items():
        for s in sentences:
            rows = [provider.lookup(doc_id, s.sentence_index, s.tokens, (i, i + 1)) for i in range(len(s.tokens))]
            archive.add(doc_id, s.sentence_index, np.array(rows).reshape(len(s.tokens), provider.dim))
    return archive
