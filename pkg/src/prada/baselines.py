"""Comparison attacks: step-wise word selection + substitution, and
classic term spamming (query-term repetition, sentence stitching).

Step-wise methods pick n token positions (first / last / tf-idf /
TextRank) and substitute every one of them (random word or nearest
general-space neighbor), then ask the oracle once for the new rank.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .attack import AttackResult, Replacement
from .corpus import (
    Document,
    EmbeddingStore,
    Query,
    TokenSeq,
    apply_replacements,
    nearest_word,
    tokenize,
)
from .oracle import RankedList, TargetOracle

log = logging.getLogger(__name__)

_SENTENCE_SPLIT = re.compile(r"[.!?]+")


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    doc_freq: dict[str, int]


def build_corpus_stats(doc_tokens: dict[str, TokenSeq]) -> CorpusStats:
    df: dict[str, int] = {}
    for ts in doc_tokens.values():
        for w in set(ts.tokens):
            df[w] = df.get(w, 0) + 1
    return CorpusStats(len(doc_tokens), df)


def textrank_scores(
    d: TokenSeq,
    window: int = 4,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> dict[str, float]:
    """Stationary scores of the word co-occurrence graph.

    Words co-occurring within the window are connected (undirected,
    unweighted); scores follow ``(1 - damping) + damping * sum of
    neighbor score / neighbor degree`` iterated to convergence.
    """
    words = sorted(set(d.tokens))
    pos_of = {w: i for i, w in enumerate(words)}
    n = len(words)
    adj = np.zeros((n, n))
    for i, w in enumerate(d.tokens):
        for j in range(i + 1, min(i + window, len(d.tokens))):
            u, v = pos_of[w], pos_of[d.tokens[j]]
            if u != v:
                adj[u, v] = adj[v, u] = 1.0
    deg = adj.sum(axis=1)
    safe_deg = np.where(deg > 0, deg, 1.0)
    scores = np.ones(n)
    for _ in range(max_iter):
        nxt = (1.0 - damping) + damping * (adj @ (scores / safe_deg))
        if np.max(np.abs(nxt - scores)) < tol:
            scores = nxt
            break
        scores = nxt
    return {w: float(scores[pos_of[w]]) for w in words}


def select_words(method: str, d: TokenSeq, n: int, stats: CorpusStats | None = None) -> list[int]:
    """Token positions to attack; always exactly min(n, len(d)) of them,
    ties broken by ascending position."""
    if n < 1:
        raise BaselineError("n must be >= 1")
    take = min(n, len(d))
    if method == "first":
        return list(range(take))
    if method == "last":
        return list(range(len(d) - take, len(d)))
    if method == "tfidf":
        if stats is None:
            raise BaselineError("tfidf selection needs corpus statistics")
        tf: dict[str, int] = {}
        for w in d.tokens:
            tf[w] = tf.get(w, 0) + 1
        def tfidf(w: str) -> float:
            return tf[w] * float(np.log(stats.doc_count / stats.doc_freq.get(w, stats.doc_count)))
        ranked = sorted(range(len(d)), key=lambda i: (-tfidf(d.tokens[i]), i))
        return sorted(ranked[:take])
    if method == "textrank":
        scores = textrank_scores(d)
        ranked = sorted(range(len(d)), key=lambda i: (-scores[d.tokens[i]], i))
        return sorted(ranked[:take])
    raise BaselineError(f"unknown selection method {method!r}")


def replace_words(
    strategy: str,
    d: TokenSeq,
    indices: list[int],
    general_store: EmbeddingStore,
    rng: np.random.Generator,
) -> TokenSeq:
    """Substitute each selected position: RR draws a different random word
    from the general vocabulary, NR takes the nearest general-space
    neighbor (out-of-lexicon words stay unchanged)."""
    repl: dict[int, str] = {}
    for pos in indices:
        word = d.tokens[pos]
        if strategy == "rr":
            new = word
            while new == word:
                new = general_store.words[int(rng.integers(len(general_store.words)))]
            repl[pos] = new
        elif strategy == "nr":
            if word not in general_store:
                continue
            repl[pos] = nearest_word(general_store.vector(word), general_store, exclude={word})
        else:
            raise BaselineError(f"unknown replacement strategy {strategy!r}")
    return d.with_replacements(repl)


def term_spam_repetition(
    d: TokenSeq, q: TokenSeq, n: int, rng: np.random.Generator, start: int | None = None
) -> TokenSeq:
    """Overwrite n successive tokens from a random start with the query
    terms, cycling them when n exceeds the query length."""
    if n > len(d):
        raise BaselineError(f"window {n} exceeds document length {len(d)}")
    if start is None:
        start = int(rng.integers(0, len(d) - n + 1))
    repl = {start + i: q.tokens[i % len(q.tokens)] for i in range(n)}
    return d.with_replacements(repl)


@dataclass(frozen=True)
class SentencePool:
    """Sentences harvested from documents ranked strictly higher than the
    target, as token lists with their source doc ids."""

    sentences: tuple[tuple[str, ...], ...]
    provenance: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.sentences)


def build_sentence_pool(lst: RankedList, docs: dict[str, Document], target_rank: int) -> SentencePool:
    sentences: list[tuple[str, ...]] = []
    provenance: list[str] = []
    for did in lst.doc_ids[: target_rank - 1]:
        for chunk in _SENTENCE_SPLIT.split(docs[did].text):
            if not chunk.strip():
                continue
            try:
                sentences.append(tokenize(chunk).tokens)
            except ValueError:
                continue
            provenance.append(did)
    return SentencePool(tuple(sentences), tuple(provenance))


def term_spam_stitching(
    d: TokenSeq, pool: SentencePool, n: int, rng: np.random.Generator, start: int | None = None
) -> TokenSeq:
    """Overwrite n successive tokens with the first n tokens of randomly
    chosen pool sentences, concatenated until n tokens are available."""
    if len(pool) == 0:
        raise BaselineError("no higher-ranked documents")
    if n > len(d):
        raise BaselineError(f"window {n} exceeds document length {len(d)}")
    if start is None:
        start = int(rng.integers(0, len(d) - n + 1))
    stitched: list[str] = []
    while len(stitched) < n:
        stitched.extend(pool.sentences[int(rng.integers(len(pool)))])
    repl = {start + i: stitched[i] for i in range(n)}
    return d.with_replacements(repl)


def _result_from_substitution(
    query: Query,
    doc: Document,
    d_ts: TokenSeq,
    adv_ts: TokenSeq,
    oracle: TargetOracle,
    rank_before: int,
    cf_store: EmbeddingStore | None,
) -> AttackResult:
    repl = {
        pos: adv_ts.tokens[pos]
        for pos in range(len(d_ts))
        if adv_ts.tokens[pos] != d_ts.tokens[pos]
    }
    replacements = []
    for pos in sorted(repl):
        old, new = d_ts.tokens[pos], repl[pos]
        cf_cos = None
        if cf_store is not None and old in cf_store and new in cf_store:
            a, b = cf_store.vector(old), cf_store.vector(new)
            na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
            if na > 0 and nb > 0:
                cf_cos = float(a @ b) / (na * nb)
        replacements.append(Replacement(pos, old, new, cf_cos))
    adv_text = apply_replacements(doc.text, d_ts, repl)
    rank_after = oracle.rank_of(query.id, adv_text, doc.id)
    return AttackResult(
        query_id=query.id,
        doc_id=doc.id,
        rank_before=rank_before,
        rank_after=rank_after,
        replacements=replacements,
        oracle_queries=2,
        success=rank_after < rank_before,
    )


def run_stepwise_attack(
    query: Query,
    doc: Document,
    oracle: TargetOracle,
    general_store: EmbeddingStore,
    cf_store: EmbeddingStore,
    stats: CorpusStats,
    selection: str,
    strategy: str,
    n: int,
    doc_tokens: dict[str, TokenSeq],
    rng: np.random.Generator,
) -> AttackResult:
    lst = oracle.ranked_list(query.id)
    rank_before = lst.position(doc.id)
    d_ts = doc_tokens[doc.id]
    indices = select_words(selection, d_ts, n, stats)
    adv_ts = replace_words(strategy, d_ts, indices, general_store, rng)
    return _result_from_substitution(query, doc, d_ts, adv_ts, oracle, rank_before, cf_store)


def run_term_spam_attack(
    kind: str,
    query: Query,
    doc: Document,
    oracle: TargetOracle,
    cf_store: EmbeddingStore,
    docs: dict[str, Document],
    doc_tokens: dict[str, TokenSeq],
    n: int,
    rng: np.random.Generator,
) -> AttackResult:
    lst = oracle.ranked_list(query.id)
    rank_before = lst.position(doc.id)
    d_ts = doc_tokens[doc.id]
    n_eff = min(n, len(d_ts))
    if kind == "rep":
        q_ts = tokenize(query.text, query.id)
        adv_ts = term_spam_repetition(d_ts, q_ts, n_eff, rng)
    elif kind == "sti":
        pool = build_sentence_pool(lst, docs, rank_before)
        adv_ts = term_spam_stitching(d_ts, pool, n_eff, rng)
    else:
        raise BaselineError(f"unknown term-spam kind {kind!r}")
    return _result_from_substitution(query, doc, d_ts, adv_ts, oracle, rank_before, cf_store)
