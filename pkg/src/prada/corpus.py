"""Corpus ingestion, tokenization and word-vector lookup.

File formats
------------
* Documents / queries: JSON lines, UTF-8, one object per line with string
  fields ``id`` and ``text``. Blank lines are skipped.
* Embeddings: plain text, one ``word v1 v2 ... vD`` per line,
  space-separated, period decimal separator.
* Qrels: TSV ``query_id<TAB>doc_id<TAB>relevance``.

All loaded objects are immutable; concurrent readers are safe.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\S+")


class CorpusError(ValueError):
    """Raised for malformed corpus, query or embedding inputs."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str


@dataclass(frozen=True)
class Query:
    id: str
    text: str


@dataclass(frozen=True)
class TokenSeq:
    """Lowercase word tokens of one text, in order.

    ``spans`` holds the (start, end) character range of each token's core
    (punctuation-stripped) in the source text, so single-token substitutions
    can be written back without disturbing surrounding punctuation.
    """

    tokens: tuple[str, ...]
    source_doc: str = ""
    spans: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def with_replacements(self, replacements: dict[int, str]) -> "TokenSeq":
        toks = list(self.tokens)
        for pos, word in replacements.items():
            toks[pos] = word
        return TokenSeq(tuple(toks), self.source_doc, self.spans)


class Corpus:
    """Ordered, id-unique document collection."""

    def __init__(self, docs: Iterable[Document]):
        self._docs: dict[str, Document] = {}
        for d in docs:
            if d.id in self._docs:
                raise CorpusError(f"duplicate document id {d.id!r}")
            self._docs[d.id] = d

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __getitem__(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def ids(self) -> list[str]:
        return list(self._docs)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str, source_id: str = "") -> TokenSeq:
    """Lowercase whitespace tokenization with edge punctuation stripped.

    Raises :class:`CorpusError` when no token survives ("no tokens").
    """
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for m in _TOKEN_RE.finditer(text):
        raw = m.group()
        i, j = 0, len(raw)
        while i < j and _is_punct(raw[i]):
            i += 1
        while j > i and _is_punct(raw[j - 1]):
            j -= 1
        if i == j:
            continue
        tokens.append(raw[i:j].lower())
        spans.append((m.start() + i, m.start() + j))
    if not tokens:
        raise CorpusError(f"no tokens in text {text!r}")
    return TokenSeq(tuple(tokens), source_id, tuple(spans))


def apply_replacements(text: str, ts: TokenSeq, replacements: dict[int, str]) -> str:
    """Write single-word substitutions back into the source text.

    Token positions map to their recorded spans; everything outside the
    spans (punctuation, spacing) is preserved. ``ts`` must have been
    produced by :func:`tokenize` on ``text``.
    """
    if not ts.spans:
        raise ValueError("token sequence carries no source spans")
    out = text
    for pos in sorted(replacements, reverse=True):
        start, end = ts.spans[pos]
        out = out[:start] + replacements[pos] + out[end:]
    return out


def _load_jsonl(path, kind: str) -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ident, text = obj["id"], obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}: malformed line {lineno}: {exc}") from exc
            if not isinstance(ident, str) or not ident:
                raise CorpusError(f"{path}: line {lineno}: id must be a non-empty string")
            if not isinstance(text, str) or not text.strip():
                raise CorpusError(f"{path}: line {lineno}: text empty for id {ident!r}")
            if ident in seen:
                raise CorpusError(f"{path}: duplicate id {ident!r} at line {lineno}")
            seen.add(ident)
            rows.append((ident, text))
    if not rows:
        raise CorpusError(f"{path}: empty {kind}")
    return rows


def load_corpus(path) -> Corpus:
    return Corpus(Document(i, t) for i, t in _load_jsonl(path, "corpus"))


def load_queries(path) -> list[Query]:
    return [Query(i, t) for i, t in _load_jsonl(path, "query file")]


def load_qrels(path) -> dict[str, str]:
    """query_id -> relevant doc_id; only positive-relevance rows kept."""
    rel: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}: malformed qrels line {lineno}")
            qid, did, grade = parts
            if int(grade) > 0:
                rel[qid] = did
    return rel


class EmbeddingStore:
    """Immutable word -> vector map for one named vector space.

    Lookups of absent words raise ``KeyError`` (or return ``None`` from
    :meth:`get`); there is no silent zero vector.
    """

    def __init__(self, space_name: str, words: Iterable[str], matrix: np.ndarray):
        self.space_name = space_name
        self.words: tuple[str, ...] = tuple(words)
        mat = np.ascontiguousarray(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(self.words):
            raise CorpusError("embedding matrix shape does not match word count")
        if not np.isfinite(mat).all():
            raise CorpusError(f"non-finite embedding component in space {space_name!r}")
        self.matrix = mat
        self.dim = int(mat.shape[1])
        self._index = {w: i for i, w in enumerate(self.words)}
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def row(self, word: str) -> int:
        return self._index[word]

    def vector(self, word: str) -> np.ndarray:
        return self.matrix[self._index[word]]

    def get(self, word: str) -> np.ndarray | None:
        i = self._index.get(word)
        return None if i is None else self.matrix[i]

    @property
    def row_norms(self) -> np.ndarray:
        if self._norms is None:
            self._norms = np.linalg.norm(self.matrix, axis=1)
        return self._norms


def load_embeddings(path, space_name: str) -> EmbeddingStore:
    """Parse a word-vector text file. Duplicate words: last one wins, with a
    logged warning. Inconsistent dimensions or unparsable components fail."""
    words: list[str] = []
    vectors: list[list[float]] = []
    index: dict[str, int] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            word, comps = parts[0], parts[1:]
            if dim is None:
                dim = len(comps)
                if dim == 0:
                    raise CorpusError(f"{path}: line {lineno}: no vector components")
            elif len(comps) != dim:
                raise CorpusError(
                    f"{path}: line {lineno}: expected {dim} components, got {len(comps)}"
                )
            try:
                vec = [float(c) for c in comps]
            except ValueError as exc:
                raise CorpusError(f"{path}: line {lineno}: non-numeric component") from exc
            if not all(np.isfinite(vec)):
                raise CorpusError(f"{path}: line {lineno}: non-finite component")
            if word in index:
                log.warning("%s: duplicate word %r at line %d, keeping last", path, word, lineno)
                vectors[index[word]] = vec
            else:
                index[word] = len(words)
                words.append(word)
                vectors.append(vec)
    if not words:
        raise CorpusError(f"{path}: empty embedding file")
    return EmbeddingStore(space_name, words, np.array(vectors, dtype=np.float64))


def synonyms(
    word: str, cf_store: EmbeddingStore, s_max: int, min_cos: float
) -> list[tuple[str, float]]:
    """Up to ``s_max`` closest words to ``word`` in the counter-fitted space.

    Only candidates with cosine >= ``min_cos`` qualify; the word itself is
    excluded. Sorted by cosine descending, ties lexicographic. A word absent
    from the store is out-of-lexicon and yields an empty list (the caller
    skips the token).
    """
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    if word not in cf_store:
        return []
    v = cf_store.vector(word)
    if not np.any(v):
        return []
    cos = kernels.cosine_scores(cf_store.matrix, cf_store.row_norms, v)
    picked = [
        (cf_store.words[i], float(c))
        for i, c in enumerate(cos)
        if c >= min_cos and cf_store.words[i] != word
    ]
    picked.sort(key=lambda wc: (-wc[1], wc[0]))
    return picked[:s_max]


def nearest_word(v: np.ndarray, store: EmbeddingStore, exclude: set[str] = frozenset()) -> str:
    """Word whose vector has the highest cosine with ``v``; ties break
    lexicographically."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (store.dim,):
        raise ValueError(f"query vector has dim {v.shape}, store dim {store.dim}")
    if float(np.linalg.norm(v)) == 0.0:
        raise ValueError("zero-norm query vector")
    cos = kernels.cosine_scores(store.matrix, store.row_norms, v)
    best: tuple[float, str] | None = None
    for i, w in enumerate(store.words):
        if w in exclude:
            continue
        key = (-cos[i], w)
        if best is None or key < best:
            best = key
    if best is None:
        raise ValueError("no words left after exclusion")
    return best[1]
