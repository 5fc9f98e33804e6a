"""Black-box ranking target.

Holds a hidden trained :class:`BilinearRanker` and answers two kinds of
request: the truncated ranked list for a known query, and the rank position
a document would take if its text were replaced. Only ordinal positions
cross the interface; scores and gradients stay inside. Every request bumps
``query_count`` by exactly one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Query, TokenSeq, tokenize
from .ranker import (
    BilinearRanker,
    RankerError,
    grad_surrogate_loss_wrt_params,
    load_ranker,
    pooled_embedding,
    save_ranker,
    score_pooled,
)

log = logging.getLogger(__name__)


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class RankedList:
    """Truncated result list; position 1 is the most relevant."""

    query_id: str
    doc_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.doc_ids)

    def position(self, doc_id: str) -> int:
        return self.doc_ids.index(doc_id) + 1

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_ids


@dataclass
class TargetTrainConfig:
    epochs: int = 100
    lr: float = 0.3
    negatives_per_query: int = 6
    plateau_rel_tol: float = 1e-3
    w_init_noise: float = 0.0
    seed: int = 0


def overlap_candidates(query_tokens: TokenSeq, corpus_tokens: dict[str, TokenSeq], n: int) -> list[str]:
    """Top-n document ids by distinct shared terms with the query, ties by
    ascending doc id. A crude first-stage retriever."""
    q_terms = set(query_tokens.tokens)
    scored = sorted(
        corpus_tokens.items(), key=lambda kv: (-len(q_terms & set(kv[1].tokens)), kv[0])
    )
    return [doc_id for doc_id, _ in scored[:n]]


class TargetOracle:
    """Decision-only interface over a hidden ranker.

    Public surface: :meth:`ranked_list`, :meth:`rank_of`, ``query_count``,
    ``n`` and the persisted state helpers. Nothing returns a score.
    """

    def __init__(
        self,
        hidden_ranker: BilinearRanker,
        corpus: Corpus,
        queries: list[Query],
        candidate_pool: dict[str, list[str]],
        n: int,
    ):
        self._ranker = hidden_ranker
        self._corpus = corpus
        self._queries = {q.id: q for q in queries}
        self._pool = {qid: list(dids) for qid, dids in candidate_pool.items()}
        self.n = n
        self.query_count = 0
        self._doc_tokens = {d.id: tokenize(d.text, d.id) for d in corpus}
        self._base_scores: dict[str, dict[str, float]] = {}
        self._q_vecs: dict[str, np.ndarray] = {}

    # -- internal scoring ------------------------------------------------

    def _query_vec(self, qid: str) -> np.ndarray:
        if qid not in self._q_vecs:
            self._q_vecs[qid] = pooled_embedding(tokenize(self._queries[qid].text, qid), self._ranker)
        return self._q_vecs[qid]

    def _scores_for(self, qid: str) -> dict[str, float]:
        if qid not in self._base_scores:
            q_vec = self._query_vec(qid)
            self._base_scores[qid] = {
                did: score_pooled(q_vec, pooled_embedding(self._doc_tokens[did], self._ranker), self._ranker)
                for did in self._pool[qid]
            }
        return self._base_scores[qid]

    # -- public decision interface ---------------------------------------

    def ranked_list(self, query_id: str) -> RankedList:
        if query_id not in self._pool:
            raise OracleError(f"unknown query {query_id!r}")
        self.query_count += 1
        scores = self._scores_for(query_id)
        order = sorted(scores, key=lambda did: (-scores[did], did))
        return RankedList(query_id, tuple(order))

    def rank_of(self, query_id: str, replacement_text: str, doc_id: str) -> int:
        """Rank the document would take with its text replaced, among the
        other unmodified candidates. The corpus itself is untouched.

        Text with tokens but none in the hidden vocabulary ranks last
        (flagged in the log); text with no tokens at all is an error.
        """
        if query_id not in self._pool:
            raise OracleError(f"unknown query {query_id!r}")
        if doc_id not in self._pool[query_id]:
            raise OracleError(f"document {doc_id!r} not in candidate pool of {query_id!r}")
        self.query_count += 1
        ts = tokenize(replacement_text, doc_id)  # raises CorpusError on empty text
        scores = self._scores_for(query_id)
        try:
            mod_score = score_pooled(
                self._query_vec(query_id), pooled_embedding(ts, self._ranker), self._ranker
            )
        except RankerError:
            log.warning("unrepresentable replacement for %s/%s: ranked last", query_id, doc_id)
            return len(self._pool[query_id])
        ahead = sum(
            1
            for did, s in scores.items()
            if did != doc_id and (s > mod_score or (s == mod_score and did < doc_id))
        )
        return ahead + 1

    # -- persistence -------------------------------------------------------

    def save(self, ckpt_path, pool_path) -> None:
        save_ranker(ckpt_path, self._ranker)
        payload = {"n": self.n, "pools": {qid: self._pool[qid] for qid in sorted(self._pool)}}
        with open(pool_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=0, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, ckpt_path, pool_path, corpus: Corpus, queries: list[Query]) -> "TargetOracle":
        with open(pool_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(load_ranker(ckpt_path), corpus, queries, payload["pools"], payload["n"])


def build_target(
    corpus: Corpus,
    queries: list[Query],
    relevant: dict[str, str],
    n: int,
    embeddings,
    train: TargetTrainConfig | None = None,
) -> TargetOracle:
    """Assemble candidate pools and train the hidden ranker.

    ``relevant`` maps query ids to their one relevant document (qrels or
    synthetic designation). Training runs (query, relevant, sampled
    irrelevant) triples through the pairwise hinge until the epoch-mean
    loss plateaus. Queries whose terms overlap no document are dropped
    with a warning.
    """
    train = train or TargetTrainConfig()
    if n > len(corpus):
        raise OracleError(f"list length {n} exceeds corpus size {len(corpus)}")
    doc_tokens = {d.id: tokenize(d.text, d.id) for d in corpus}
    pools: dict[str, list[str]] = {}
    kept: list[Query] = []
    for q in queries:
        q_ts = tokenize(q.text, q.id)
        q_terms = set(q_ts.tokens)
        if not any(q_terms & set(ts.tokens) for ts in doc_tokens.values()):
            log.warning("query %s overlaps no document; excluded", q.id)
            continue
        pools[q.id] = overlap_candidates(q_ts, doc_tokens, n)
        kept.append(q)
    if not kept:
        raise OracleError("no usable query")

    ranker = BilinearRanker.init_from_store(embeddings, seed=train.seed)
    rng = np.random.default_rng(train.seed)
    if train.w_init_noise > 0.0:
        # the hidden model is not the public prior: distort its interaction
        # matrix privately before training restores relevance through it
        ranker.w += train.w_init_noise * rng.standard_normal((ranker.dim, ranker.dim))
    triples_src = [
        (q, relevant[q.id]) for q in kept if q.id in relevant and relevant[q.id] in pools[q.id]
    ]
    prev = None
    for epoch in range(train.epochs):
        epoch_loss = 0.0
        steps = 0
        order = rng.permutation(len(triples_src))
        for i in order:
            q, rel_id = triples_src[int(i)]
            q_ts = tokenize(q.text, q.id)
            negatives = [d for d in pools[q.id] if d != rel_id]
            for _ in range(train.negatives_per_query):
                neg_id = negatives[int(rng.integers(len(negatives)))]
                batch = [(q_ts, doc_tokens[rel_id], doc_tokens[neg_id])]
                loss, grad_w, grad_rows = grad_surrogate_loss_wrt_params(batch, ranker, beta=1.0)
                ranker.w -= train.lr * grad_w
                for r, g in grad_rows.items():
                    ranker.emb[r] -= train.lr * g
                epoch_loss += loss
                steps += 1
        mean_loss = epoch_loss / max(steps, 1)
        if not np.isfinite(mean_loss):
            raise OracleError(f"target training diverged at epoch {epoch}")
        log.debug("target epoch %d mean loss %.5f", epoch, mean_loss)
        if prev is not None and abs(prev - mean_loss) <= train.plateau_rel_tol * max(prev, 1e-12):
            break
        prev = mean_loss
    return TargetOracle(ranker, corpus, kept, pools, n)
