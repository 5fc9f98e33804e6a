"""Attack evaluation metrics and the term-density spam detector.

SR: share of attacked documents whose rank strictly improved, averaged per
query first. PP: share of token positions changed. SS: cosine between
mean-pooled general-space embeddings, document-level and averaged over
index-paired sentences. Spamicity: fraction of token positions holding a
query term; a document is detected as spam when spamicity exceeds the
threshold.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingStore, TokenSeq, apply_replacements, tokenize

log = logging.getLogger(__name__)

_SENTENCE_SPLIT = re.compile(r"[.!?]+")


class MetricsError(ValueError):
    pass


def _pooled(ts: TokenSeq, store: EmbeddingStore) -> np.ndarray:
    vecs = [store.vector(t) for t in ts.tokens if t in store]
    if not vecs:
        raise MetricsError(f"unrepresentable text in space {store.space_name!r}")
    return np.mean(vecs, axis=0)


def doc_sim01(a: TokenSeq, b: TokenSeq, store: EmbeddingStore) -> float:
    """Pooled-embedding cosine clamped to [0, 1]."""
    va, vb = _pooled(a, store), _pooled(b, store)
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise MetricsError("zero-norm pooled embedding")
    return min(1.0, max(0.0, float(va @ vb) / (na * nb)))


def semantic_sim_doc(a: TokenSeq, b: TokenSeq, store: EmbeddingStore) -> float:
    return 100.0 * doc_sim01(a, b, store)


def semantic_sim_sen(a_text: str, b_text: str, store: EmbeddingStore) -> float:
    """Mean similarity over index-paired sentences ('.', '!', '?' bounded).

    In-place word substitution preserves sentence structure, so the two
    texts normally segment identically; if they do not, this falls back to
    the document-level similarity with a warning.
    """
    a_chunks = [c for c in _SENTENCE_SPLIT.split(a_text) if c.strip()]
    b_chunks = [c for c in _SENTENCE_SPLIT.split(b_text) if c.strip()]
    if len(a_chunks) != len(b_chunks):
        log.warning("sentence counts differ (%d vs %d); document-level fallback", len(a_chunks), len(b_chunks))
        return semantic_sim_doc(tokenize(a_text), tokenize(b_text), store)
    sims = []
    for ca, cb in zip(a_chunks, b_chunks):
        try:
            sims.append(semantic_sim_doc(tokenize(ca), tokenize(cb), store))
        except (MetricsError, ValueError):
            continue
    if not sims:
        return semantic_sim_doc(tokenize(a_text), tokenize(b_text), store)
    return float(np.mean(sims))


def success_rate(results: list) -> float:
    """Percentage of attacks achieving a strictly better rank, averaged
    within each query first and across queries second."""
    if not results:
        raise MetricsError("empty result set")
    per_query: dict[str, list[bool]] = {}
    for r in results:
        per_query.setdefault(r.query_id, []).append(r.rank_after < r.rank_before)
    fractions = [sum(v) / len(v) for v in per_query.values()]
    return 100.0 * sum(fractions) / len(fractions)


def perturbation_pct(original: TokenSeq, adv: TokenSeq) -> float:
    if len(original) != len(adv):
        raise MetricsError(f"token counts differ: {len(original)} vs {len(adv)}")
    changed = sum(1 for a, b in zip(original.tokens, adv.tokens) if a != b)
    return 100.0 * changed / len(original)


def spamicity(d: TokenSeq, q: TokenSeq) -> float:
    """Fraction of document token positions holding any query term."""
    if len(d) < 1:
        raise MetricsError("empty document")
    terms = set(q.tokens)
    return sum(1 for t in d.tokens if t in terms) / len(d)


@dataclass(frozen=True)
class SpamVerdict:
    doc_id: str
    spamicity: float
    tau: float
    detected: bool


def spam_verdict(doc_id: str, d: TokenSeq, q: TokenSeq, tau: float) -> SpamVerdict:
    s = spamicity(d, q)
    return SpamVerdict(doc_id, s, tau, s > tau)


def detection_rate(
    results: list,
    query_tokens: dict[str, TokenSeq],
    doc_tokens: dict[str, TokenSeq],
    tau: float,
) -> float:
    """Percentage of adversarial documents with spamicity above ``tau``."""
    if not (0.0 <= tau <= 1.0):
        raise MetricsError("tau must lie in [0, 1]")
    if not results:
        raise MetricsError("empty result set")
    hits = 0
    for r in results:
        adv = doc_tokens[r.doc_id].with_replacements({rep.pos: rep.new for rep in r.replacements})
        if spamicity(adv, query_tokens[r.query_id]) > tau:
            hits += 1
    return 100.0 * hits / len(results)


@dataclass(frozen=True)
class EvalReport:
    method: str
    sr: float
    pp: float
    ss_doc: float
    ss_sen: float
    num_queries: int
    docs_per_query: int


def build_report(
    method: str,
    results: list,
    docs: dict,
    doc_tokens: dict[str, TokenSeq],
    general_store: EmbeddingStore,
) -> EvalReport:
    """Aggregate one method's results into a report row. ``docs`` maps doc
    ids to Documents (texts are needed for sentence-level similarity)."""
    if not results:
        raise MetricsError("empty result set")
    pp_vals, ssd_vals, sss_vals = [], [], []
    queries = {r.query_id for r in results}
    for r in results:
        orig = doc_tokens[r.doc_id]
        repl = {rep.pos: rep.new for rep in r.replacements}
        adv = orig.with_replacements(repl)
        pp_vals.append(perturbation_pct(orig, adv))
        ssd_vals.append(semantic_sim_doc(orig, adv, general_store))
        adv_text = apply_replacements(docs[r.doc_id].text, orig, repl)
        sss_vals.append(semantic_sim_sen(docs[r.doc_id].text, adv_text, general_store))
    return EvalReport(
        method=method,
        sr=success_rate(results),
        pp=float(np.mean(pp_vals)),
        ss_doc=float(np.mean(ssd_vals)),
        ss_sen=float(np.mean(sss_vals)),
        num_queries=len(queries),
        docs_per_query=len(results) // len(queries),
    )


def write_report_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,SR,PP,SS_doc,SS_sen\n")
        for r in sorted(reports, key=lambda r: r.method):
            fh.write(f"{r.method},{r.sr!r},{r.pp!r},{r.ss_doc!r},{r.ss_sen!r}\n")


def write_spam_sweep_csv(path, rows: list[tuple[float, str, float]]) -> None:
    """Rows are (tau, method, detection_rate) triples."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau,method,detection_rate\n")
        for tau, method, rate in sorted(rows, key=lambda r: (r[0], r[1])):
            fh.write(f"{tau!r},{method},{rate!r}\n")
