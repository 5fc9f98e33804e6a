"""Bilinear mean-pooled relevance model with analytic gradients.

``score(q, d) = pooled(q)^T W pooled(d)`` where ``pooled`` is the arithmetic
mean of in-vocabulary token embeddings. The interaction matrix W and the
embedding rows are trainable. Rank promotion is driven by the pairwise
hinge ``sum_d' max(0, beta - score(q, d_adv) + score(q, d'))`` over the
other documents of a ranked list.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import EmbeddingStore, TokenSeq

log = logging.getLogger(__name__)


class RankerError(ValueError):
    pass


class BilinearRanker:
    """Embedding table plus dim x dim interaction matrix.

    Holds its own trainable copy of the vectors; the store it was built
    from stays untouched.
    """

    def __init__(self, words, matrix: np.ndarray, w: np.ndarray):
        self.words: tuple[str, ...] = tuple(words)
        self.emb = np.ascontiguousarray(matrix, dtype=np.float64)
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.dim = int(self.emb.shape[1])
        if self.w.shape != (self.dim, self.dim):
            raise RankerError(f"W shape {self.w.shape} does not match dim {self.dim}")
        if not (np.isfinite(self.emb).all() and np.isfinite(self.w).all()):
            raise RankerError("non-finite ranker parameters")
        self._index = {w_: i for i, w_ in enumerate(self.words)}

    @classmethod
    def init_from_store(cls, store: EmbeddingStore, seed: int, w_noise: float = 0.01) -> "BilinearRanker":
        """Fresh ranker: copied vectors, W = identity + seeded Gaussian noise."""
        rng = np.random.default_rng(seed)
        w = np.eye(store.dim) + w_noise * rng.standard_normal((store.dim, store.dim))
        return cls(store.words, store.matrix.copy(), w)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def row(self, word: str) -> int:
        return self._index[word]

    def vector(self, word: str) -> np.ndarray:
        return self.emb[self._index[word]]

    def in_vocab_rows(self, ts: TokenSeq) -> np.ndarray:
        """Embedding row per in-vocabulary token position (repeats kept)."""
        return np.array(
            [self._index[t] for t in ts.tokens if t in self._index], dtype=np.intp
        )


def pooled_embedding(ts: TokenSeq, ranker: BilinearRanker) -> np.ndarray:
    """Mean embedding of the in-vocabulary tokens of ``ts``.

    Out-of-vocabulary tokens contribute nothing; with no in-vocabulary token
    the text is unrepresentable and this raises.
    """
    rows = ranker.in_vocab_rows(ts)
    if len(rows) == 0:
        raise RankerError(f"unrepresentable text (no in-vocabulary token): {ts.tokens[:5]}...")
    return kernels.mean_rows(ranker.emb, rows)


def pooled_with_overrides(
    ts: TokenSeq, ranker: BilinearRanker, overrides: dict[int, np.ndarray]
) -> np.ndarray:
    """Pooled embedding where selected token positions use replacement
    vectors instead of their word's row. Override positions must hold
    in-vocabulary tokens."""
    total = np.zeros(ranker.dim)
    n = 0
    for pos, tok in enumerate(ts.tokens):
        if pos in overrides:
            total += overrides[pos]
            n += 1
        elif tok in ranker:
            total += ranker.vector(tok)
            n += 1
    if n == 0:
        raise RankerError("unrepresentable text (no in-vocabulary token)")
    return total / n


def score(q: TokenSeq, d: TokenSeq, ranker: BilinearRanker) -> float:
    return kernels.bilinear_score(pooled_embedding(q, ranker), ranker.w, pooled_embedding(d, ranker))


def score_pooled(q_vec: np.ndarray, d_vec: np.ndarray, ranker: BilinearRanker) -> float:
    return kernels.bilinear_score(q_vec, ranker.w, d_vec)


def rank_loss_from_scores(adv_score: float, other_scores: np.ndarray, beta: float) -> float:
    if len(other_scores) == 0:
        raise RankerError("no reference documents")
    loss, _ = kernels.hinge_total(adv_score, np.asarray(other_scores, dtype=np.float64), beta)
    return loss


def rank_loss(
    q: TokenSeq,
    d_adv: TokenSeq,
    others: list[TokenSeq],
    ranker: BilinearRanker,
    beta: float,
    overrides: dict[int, np.ndarray] | None = None,
) -> float:
    """Pairwise hinge of the (possibly perturbed) target document against
    every other document of the list."""
    if not others:
        raise RankerError("no reference documents")
    q_vec = pooled_embedding(q, ranker)
    adv_vec = pooled_with_overrides(d_adv, ranker, overrides or {})
    adv_score = score_pooled(q_vec, adv_vec, ranker)
    other_scores = np.array([score_pooled(q_vec, pooled_embedding(o, ranker), ranker) for o in others])
    return rank_loss_from_scores(adv_score, other_scores, beta)


def _active_count(adv_score: float, other_scores: np.ndarray, beta: float) -> int:
    _, active = kernels.hinge_total(adv_score, other_scores, beta)
    return active


def grad_rank_loss_common(
    q_vec: np.ndarray,
    adv_vec: np.ndarray,
    other_scores: np.ndarray,
    n_in_vocab: int,
    ranker: BilinearRanker,
    beta: float,
) -> np.ndarray:
    """Gradient of the rank loss w.r.t. any single in-vocabulary token
    embedding of the target document. The pooled score is linear in each
    position's vector with weight 1/n, so the gradient is shared:
    ``-(active / n) * W^T q`` with ``active`` the number of unsatisfied
    hinge terms. Returns the zero vector on a flat region."""
    adv_score = score_pooled(q_vec, adv_vec, ranker)
    active = _active_count(adv_score, other_scores, beta)
    if active == 0:
        return np.zeros(ranker.dim)
    return -(active / n_in_vocab) * (ranker.w.T @ q_vec)


def grad_rank_loss_wrt_token(
    q: TokenSeq,
    d_adv: TokenSeq,
    others: list[TokenSeq],
    ranker: BilinearRanker,
    beta: float,
    token_index: int,
    overrides: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Exact gradient of the rank loss w.r.t. the embedding used at one
    token position. Out-of-vocabulary positions have no gradient (zeros)."""
    if not others:
        raise RankerError("no reference documents")
    overrides = overrides or {}
    tok = d_adv.tokens[token_index]
    if token_index not in overrides and tok not in ranker:
        log.debug("no gradient for out-of-vocabulary token %r", tok)
        return np.zeros(ranker.dim)
    q_vec = pooled_embedding(q, ranker)
    adv_vec = pooled_with_overrides(d_adv, ranker, overrides)
    n_iv = sum(1 for p, t in enumerate(d_adv.tokens) if p in overrides or t in ranker)
    other_scores = np.array([score_pooled(q_vec, pooled_embedding(o, ranker), ranker) for o in others])
    return grad_rank_loss_common(q_vec, adv_vec, other_scores, n_iv, ranker, beta)


def surrogate_loss(
    batch: list[tuple[TokenSeq, TokenSeq, TokenSeq]], ranker: BilinearRanker, beta: float
) -> float:
    """Mean pairwise hinge over (query, positive, negative) triples."""
    total = 0.0
    for q, pos, neg in batch:
        q_vec = pooled_embedding(q, ranker)
        margin = beta - score_pooled(q_vec, pooled_embedding(pos, ranker), ranker) + score_pooled(
            q_vec, pooled_embedding(neg, ranker), ranker
        )
        total += max(0.0, margin)
    return total / len(batch)


def grad_surrogate_loss_wrt_params(
    batch: list[tuple[TokenSeq, TokenSeq, TokenSeq]], ranker: BilinearRanker, beta: float
) -> tuple[float, np.ndarray, dict[int, np.ndarray]]:
    """Loss plus analytic gradients of the mean triple hinge.

    Returns ``(loss, grad_W, grad_rows)`` where ``grad_rows`` maps touched
    embedding-row indices to gradient vectors (word rows are shared, so a
    word repeated in a text accumulates once per occurrence). Satisfied
    margins contribute nothing.
    """
    if not batch:
        raise RankerError("empty batch")
    grad_w = np.zeros_like(ranker.w)
    grad_rows: dict[int, np.ndarray] = {}
    total = 0.0

    def add_rows(ts: TokenSeq, vec: np.ndarray) -> None:
        rows = ranker.in_vocab_rows(ts)
        contrib = vec / len(rows)
        for r in rows:
            r = int(r)
            if r in grad_rows:
                grad_rows[r] = grad_rows[r] + contrib
            else:
                grad_rows[r] = contrib.copy()

    scale = 1.0 / len(batch)
    for q, pos, neg in batch:
        q_vec = pooled_embedding(q, ranker)
        p_vec = pooled_embedding(pos, ranker)
        n_vec = pooled_embedding(neg, ranker)
        margin = beta - score_pooled(q_vec, p_vec, ranker) + score_pooled(q_vec, n_vec, ranker)
        if margin <= 0.0:
            continue
        total += margin
        grad_w += scale * np.outer(q_vec, n_vec - p_vec)
        add_rows(q, scale * (ranker.w @ (n_vec - p_vec)))
        add_rows(pos, scale * (-(ranker.w.T @ q_vec)))
        add_rows(neg, scale * (ranker.w.T @ q_vec))
    return total * scale, grad_w, grad_rows


@dataclass(frozen=True)
class ScoredList:
    """Descending score order, ties broken by ascending doc id."""

    query_id: str
    entries: tuple[tuple[str, float], ...]

    @classmethod
    def from_scores(cls, query_id: str, scores: dict[str, float]) -> "ScoredList":
        entries = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(query_id, tuple(entries))


def save_ranker(path, ranker: BilinearRanker) -> None:
    """Text checkpoint: dim, W rows, then sorted ``word v1 .. vD`` lines.

    Floats are written with ``repr`` so a reload is bit-exact and the byte
    output is a pure function of the parameters.
    """
    lines = [f"dim {ranker.dim}", "W"]
    for row in ranker.w:
        lines.append(" ".join(repr(float(x)) for x in row))
    order = sorted(range(len(ranker.words)), key=lambda i: ranker.words[i])
    lines.append(f"emb {len(order)}")
    for i in order:
        lines.append(ranker.words[i] + " " + " ".join(repr(float(x)) for x in ranker.emb[i]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ranker(path) -> BilinearRanker:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim "):
        raise RankerError(f"{path}: not a ranker checkpoint")
    dim = int(lines[0].split()[1])
    if lines[1] != "W":
        raise RankerError(f"{path}: missing W block")
    w = np.array([[float(x) for x in lines[2 + i].split()] for i in range(dim)])
    head = lines[2 + dim].split()
    if head[0] != "emb":
        raise RankerError(f"{path}: missing emb block")
    count = int(head[1])
    words: list[str] = []
    vecs: list[list[float]] = []
    for line in lines[3 + dim : 3 + dim + count]:
        parts = line.split()
        words.append(parts[0])
        vecs.append([float(x) for x in parts[1:]])
    return BilinearRanker(words, np.array(vecs), w)
