"""Surrogate ranker trained from pseudo-relevance feedback.

The attacker's only access to the target is the rank-positions interface,
so training labels come from harvested ranked lists: the top-k documents
of each list count as relevant, the rest as irrelevant. A fresh bilinear
ranker (public word vectors, own W noise) is then fit with a pairwise
hinge by plain SGD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Query, TokenSeq
from .oracle import RankedList, TargetOracle
from .ranker import BilinearRanker, grad_surrogate_loss_wrt_params

log = logging.getLogger(__name__)


class SurrogateError(ValueError):
    pass


@dataclass
class PrfDataset:
    """(query, pseudo-positive, pseudo-negative) triples.

    Positives come from positions 1..k of the harvested list, negatives
    from k+1..N; a triple never pairs a document with itself.
    """

    triples: list[tuple[str, str, str]]
    k: int
    n: int
    lists: dict[str, RankedList] = field(default_factory=dict)

    def audit(self) -> None:
        """Re-check every triple against the stored lists; raises on any
        positional violation."""
        for qid, pos, neg in self.triples:
            lst = self.lists[qid]
            if not 1 <= lst.position(pos) <= self.k:
                raise SurrogateError(f"positive {pos} outside top-{self.k} for {qid}")
            if not self.k < lst.position(neg) <= self.n:
                raise SurrogateError(f"negative {neg} outside {self.k + 1}..{self.n} for {qid}")
            if pos == neg:
                raise SurrogateError(f"degenerate triple for {qid}")


def collect_prf_labels(
    oracle: TargetOracle,
    queries: list[Query],
    k: int,
    n: int,
    negatives: int | str = 10,
    seed: int = 0,
) -> PrfDataset:
    """Harvest one ranked list per query and emit pseudo-labeled triples.

    ``negatives`` is the per-positive sample count (uniform over positions
    k+1..N, seeded) or ``"all"`` for the full cross product. Exactly one
    oracle call is spent per query.
    """
    if k < 1 or k >= n:
        raise SurrogateError(f"need 1 <= k < N, got k={k}, N={n}")
    rng = np.random.default_rng(seed)
    triples: list[tuple[str, str, str]] = []
    lists: dict[str, RankedList] = {}
    for q in queries:
        try:
            lst = oracle.ranked_list(q.id)
        except Exception as exc:  # noqa: BLE001 - excluded queries are skipped
            log.warning("query %s skipped during collection: %s", q.id, exc)
            continue
        lists[q.id] = lst
        positives = lst.doc_ids[:k]
        pool = lst.doc_ids[k:n]
        for pos_id in positives:
            if negatives == "all":
                chosen = list(pool)
            else:
                idx = rng.integers(len(pool), size=int(negatives))
                chosen = [pool[int(i)] for i in idx]
            triples.extend((q.id, pos_id, neg_id) for neg_id in chosen)
    return PrfDataset(triples, k, n, lists)


def save_prf_tsv(path, ds: PrfDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, pos, neg in ds.triples:
            fh.write(f"{qid}\t{pos}\t{neg}\n")


def load_prf_tsv(path, k: int, n: int) -> PrfDataset:
    triples: list[tuple[str, str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                qid, pos, neg = line.rstrip("\n").split("\t")
                triples.append((qid, pos, neg))
    return PrfDataset(triples, k, n)


def train_surrogate(
    ds: PrfDataset,
    query_tokens: dict[str, TokenSeq],
    doc_tokens: dict[str, TokenSeq],
    ranker: BilinearRanker,
    epochs: int = 20,
    lr: float = 0.05,
    beta: float = 1.0,
    seed: int = 0,
) -> list[float]:
    """Plain SGD over shuffled triples; mutates ``ranker`` in place and
    returns the per-epoch mean losses (measured before each step).

    Aborts with a diagnostic if the loss stops being finite.
    """
    if epochs < 1:
        raise SurrogateError("epochs must be >= 1")
    if lr <= 0:
        raise SurrogateError("lr must be > 0")
    if not ds.triples:
        raise SurrogateError("empty dataset")
    rng = np.random.default_rng(seed)
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(ds.triples))
        total = 0.0
        for i in order:
            qid, pos, neg = ds.triples[int(i)]
            batch = [(query_tokens[qid], doc_tokens[pos], doc_tokens[neg])]
            loss, grad_w, grad_rows = grad_surrogate_loss_wrt_params(batch, ranker, beta)
            if not np.isfinite(loss):
                raise SurrogateError(f"training diverged at epoch {epoch} (non-finite loss)")
            ranker.w -= lr * grad_w
            for r, g in grad_rows.items():
                ranker.emb[r] -= lr * g
            total += loss
        history.append(total / len(ds.triples))
        log.debug("surrogate epoch %d mean loss %.5f", epoch, history[-1])
    log.info("surrogate training final mean loss %.5f", history[-1])
    return history
