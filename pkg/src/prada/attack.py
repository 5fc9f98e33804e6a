"""Gradient-guided synonym substitution against the decision-only oracle.

Pipeline per (query, target document): rank tokens by the squared norm of
the surrogate's rank-loss gradient, keep the top m, push their embeddings
along the descent direction for a few normalized steps, then walk the
token list greedily, substituting the synonym closest to each perturbed
vector and keeping a substitution only when the oracle reports a strictly
better rank and the document still reads as the same document (pooled
cosine >= the similarity floor).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import Document, EmbeddingStore, Query, TokenSeq, apply_replacements, synonyms, tokenize
from .metrics import doc_sim01
from .oracle import OracleError, TargetOracle
from .ranker import (
    BilinearRanker,
    grad_rank_loss_common,
    pooled_embedding,
    pooled_with_overrides,
    score_pooled,
)

log = logging.getLogger(__name__)


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """Attack budget and knobs.

    max_tokens: most token positions that may be modified.
    max_synonyms: candidate synonyms considered per word.
    min_synonym_cos: counter-fitted cosine floor for a synonym.
    min_doc_sim: pooled-cosine floor between original and modified document.
    step_size / pgd_steps: perturbation step size and iteration count.
    margin: hinge margin of the rank loss.
    grad_norm: "squared" divides each step by the squared gradient norm
    (the default update rule); "plain" divides by the norm instead.
    """

    max_tokens: int = 20
    max_synonyms: int = 10
    min_synonym_cos: float = 0.5
    min_doc_sim: float = 0.8
    step_size: float = 45.0
    pgd_steps: int = 3
    margin: float = 1.0
    seed: int = 0
    grad_norm: str = "squared"

    def __post_init__(self):
        if self.max_tokens < 1:
            raise AttackError("max_tokens must be >= 1")
        if self.max_synonyms < 1:
            raise AttackError("max_synonyms must be >= 1")
        if not (0.0 <= self.min_synonym_cos <= 1.0 and 0.0 <= self.min_doc_sim <= 1.0):
            raise AttackError("similarity floors must lie in [0, 1]")
        if self.step_size <= 0:
            raise AttackError("step_size must be > 0")
        if self.pgd_steps < 1:
            raise AttackError("pgd_steps must be >= 1")
        if self.grad_norm not in ("squared", "plain"):
            raise AttackError(f"unknown grad_norm {self.grad_norm!r}")


@dataclass(frozen=True)
class Replacement:
    pos: int
    old: str
    new: str
    cf_cosine: float | None


@dataclass
class AttackResult:
    query_id: str
    doc_id: str
    rank_before: int
    rank_after: int
    replacements: list[Replacement]
    oracle_queries: int
    success: bool
    partial: bool = field(default=False, compare=False)

    def to_json_dict(self) -> dict:
        d = {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "rank_before": self.rank_before,
            "rank_after": self.rank_after,
            "replacements": [
                {"pos": r.pos, "old": r.old, "new": r.new, "cf_cosine": r.cf_cosine}
                for r in self.replacements
            ],
            "oracle_queries": self.oracle_queries,
            "success": self.success,
        }
        if self.partial:
            d["partial"] = True
        return d


def _other_scores(q_vec: np.ndarray, others: list[TokenSeq], surrogate: BilinearRanker) -> np.ndarray:
    return np.array(
        [score_pooled(q_vec, pooled_embedding(o, surrogate), surrogate) for o in others]
    )


def token_importance(
    q: TokenSeq,
    d: TokenSeq,
    others: list[TokenSeq],
    surrogate: BilinearRanker,
    beta: float,
) -> list[tuple[int, float]]:
    """Squared L2 norm of the rank-loss gradient at each token position.

    Out-of-vocabulary positions score 0 (they cannot be perturbed in
    embedding space and are never selected)."""
    in_vocab = [pos for pos, t in enumerate(d.tokens) if t in surrogate]
    if not in_vocab:
        return [(pos, 0.0) for pos in range(len(d.tokens))]
    q_vec = pooled_embedding(q, surrogate)
    grad = grad_rank_loss_common(
        q_vec,
        pooled_embedding(d, surrogate),
        _other_scores(q_vec, others, surrogate),
        len(in_vocab),
        surrogate,
        beta,
    )
    imp = float(grad @ grad)
    in_vocab_set = set(in_vocab)
    return [(pos, imp if pos in in_vocab_set else 0.0) for pos in range(len(d.tokens))]


def top_m_tokens(scores: list[tuple[int, float]], m: int) -> list[int]:
    """Indices of the m most important tokens, importance descending, ties
    by ascending position; zero-importance tokens never qualify."""
    if m < 1:
        raise AttackError("m must be >= 1")
    ranked = sorted(((imp, pos) for pos, imp in scores if imp > 0.0), key=lambda t: (-t[0], t[1]))
    return [pos for _, pos in ranked[:m]]


def pgd_perturb(
    q: TokenSeq,
    d: TokenSeq,
    others: list[TokenSeq],
    surrogate: BilinearRanker,
    T: list[int],
    alpha: float,
    eta: int,
    beta: float,
    grad_norm: str = "squared",
) -> dict[int, np.ndarray]:
    """Iterated joint gradient steps on the selected tokens' vectors.

    Every selected position starts at its word's embedding. Each of the
    eta iterations evaluates the gradient of the rank loss w.r.t. all
    selected vectors at once and moves each one by
    ``-alpha * g_v / ||g||^2`` (``||g||`` with grad_norm="plain"), where
    ||g|| is the norm of the full concatenated gradient. No clipping. A
    vanished gradient stops the loop early.
    """
    if not T:
        raise AttackError("empty token selection")
    for pos in T:
        if d.tokens[pos] not in surrogate:
            raise AttackError(f"selected token {d.tokens[pos]!r} is out of vocabulary")
    q_vec = pooled_embedding(q, surrogate)
    other_scores = _other_scores(q_vec, others, surrogate)
    n_iv = len(surrogate.in_vocab_rows(d))
    vectors = {pos: surrogate.vector(d.tokens[pos]).copy() for pos in T}
    for _ in range(eta):
        adv_vec = pooled_with_overrides(d, surrogate, vectors)
        block = grad_rank_loss_common(q_vec, adv_vec, other_scores, n_iv, surrogate, beta)
        # every selected position shares this gradient block, so the
        # concatenated squared norm is |T| * ||block||^2
        g_sq = len(T) * float(block @ block)
        if g_sq == 0.0:
            break
        denom = g_sq if grad_norm == "squared" else np.sqrt(g_sq)
        step = (alpha / denom) * block
        for pos in T:
            vectors[pos] = vectors[pos] - step
        if not all(np.isfinite(v).all() for v in vectors.values()):
            raise AttackError("perturbation produced non-finite vectors")
    return vectors


def _pick_synonym(
    word: str,
    perturbed_vec: np.ndarray,
    surrogate: BilinearRanker,
    cf_store: EmbeddingStore,
    cfg: AttackConfig,
) -> tuple[str, float] | None:
    """Synonym of ``word`` whose surrogate embedding is closest (cosine) to
    the perturbed vector; None when the word has no usable synonym."""
    cands = synonyms(word, cf_store, cfg.max_synonyms, cfg.min_synonym_cos)
    pnorm = float(np.linalg.norm(perturbed_vec))
    if pnorm == 0.0:
        return None
    best: tuple[float, str] | None = None
    cf_cos = {w: c for w, c in cands}
    for w, _ in cands:
        if w not in surrogate:
            continue
        e = surrogate.vector(w)
        enorm = float(np.linalg.norm(e))
        if enorm == 0.0:
            continue
        key = (-float(e @ perturbed_vec) / (enorm * pnorm), w)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return best[1], cf_cos[best[1]]


def greedy_replace(
    query: Query,
    doc: Document,
    d_ts: TokenSeq,
    T: list[int],
    perturbed: dict[int, np.ndarray],
    oracle: TargetOracle,
    surrogate: BilinearRanker,
    cf_store: EmbeddingStore,
    general_store: EmbeddingStore,
    cfg: AttackConfig,
    rank_before: int,
) -> AttackResult:
    """Walk the selected tokens in importance order, substituting each one's
    best synonym and keeping the substitution only if the oracle rank
    strictly improves and pooled similarity to the original stays at or
    above the floor. Candidates failing the similarity floor are reverted
    without spending an oracle query.
    """
    accepted: dict[int, str] = {}
    replacements: list[Replacement] = []
    current_rank = rank_before
    trials = 0
    partial = False
    rejected: set[tuple[str, str]] = set()
    for pos in T:
        word = d_ts.tokens[pos]
        pick = _pick_synonym(word, perturbed[pos], surrogate, cf_store, cfg)
        if pick is None:
            continue
        new_word, cf_cos = pick
        if (word, new_word) in rejected:
            # same word, same synonym, same accepted set: the pooled
            # document is identical, so the oracle verdict is already known
            continue
        trial = dict(accepted)
        trial[pos] = new_word
        trial_ts = d_ts.with_replacements(trial)
        if doc_sim01(d_ts, trial_ts, general_store) < cfg.min_doc_sim:
            continue
        trial_text = apply_replacements(doc.text, d_ts, trial)
        try:
            new_rank = oracle.rank_of(query.id, trial_text, doc.id)
        except OracleError as exc:
            log.warning("oracle failed mid-attack on %s/%s: %s", query.id, doc.id, exc)
            partial = True
            break
        trials += 1
        if new_rank < current_rank:
            accepted = trial
            current_rank = new_rank
            replacements.append(Replacement(pos, word, new_word, cf_cos))
            rejected.clear()
        else:
            rejected.add((word, new_word))
    return AttackResult(
        query_id=query.id,
        doc_id=doc.id,
        rank_before=rank_before,
        rank_after=current_rank,
        replacements=replacements,
        oracle_queries=trials,
        success=current_rank < rank_before,
        partial=partial,
    )


def _unconditional_replace(
    query: Query,
    doc: Document,
    d_ts: TokenSeq,
    T: list[int],
    perturbed: dict[int, np.ndarray],
    oracle: TargetOracle,
    surrogate: BilinearRanker,
    cf_store: EmbeddingStore,
    cfg: AttackConfig,
    rank_before: int,
) -> AttackResult:
    """Variant without the verified synonym replacement: every selected
    token becomes the vocabulary word nearest to its perturbed vector,
    applied unconditionally, and the oracle is asked once at the end. When
    the nearest word is the token itself nothing changes at that position;
    the final rank may be worse than the starting one."""
    applied: dict[int, str] = {}
    replacements: list[Replacement] = []
    row_norms = np.linalg.norm(surrogate.emb, axis=1)
    for pos in T:
        word = d_ts.tokens[pos]
        cos = kernels.cosine_scores(surrogate.emb, row_norms, perturbed[pos])
        best = min(range(len(surrogate.words)), key=lambda i: (-cos[i], surrogate.words[i]))
        new_word = surrogate.words[best]
        if new_word == word:
            continue
        cf_cos = None
        if word in cf_store and new_word in cf_store:
            a, b = cf_store.vector(word), cf_store.vector(new_word)
            na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
            if na > 0 and nb > 0:
                cf_cos = float(a @ b) / (na * nb)
        applied[pos] = new_word
        replacements.append(Replacement(pos, word, new_word, cf_cos))
    if not applied:
        return AttackResult(query.id, doc.id, rank_before, rank_before, [], 0, False)
    adv_text = apply_replacements(doc.text, d_ts, applied)
    rank_after = oracle.rank_of(query.id, adv_text, doc.id)
    return AttackResult(
        query_id=query.id,
        doc_id=doc.id,
        rank_before=rank_before,
        rank_after=rank_after,
        replacements=replacements,
        oracle_queries=1,
        success=rank_after < rank_before,
    )


def prada_attack(
    query: Query,
    doc: Document,
    oracle: TargetOracle,
    surrogate: BilinearRanker,
    cf_store: EmbeddingStore,
    general_store: EmbeddingStore,
    cfg: AttackConfig,
    doc_tokens: dict[str, TokenSeq],
    select: str = "importance",
    perturb: str = "pgd",
    replace: str = "greedy",
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Full attack on one (query, document) pair.

    The reference list for the loss comes from a single ranked-list call
    at attack start (also yielding the starting rank); it is not refreshed
    afterwards. ``select``/``perturb``/``replace`` switch in the ablation
    variants: random token selection, norm-matched random perturbation,
    unconditional replacement.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    lst = oracle.ranked_list(query.id)
    if doc.id not in lst:
        raise AttackError(f"document {doc.id!r} not in the ranked list of {query.id!r}")
    rank_before = lst.position(doc.id)
    d_ts = doc_tokens[doc.id]
    q_ts = tokenize(query.text, query.id)
    others = [doc_tokens[did] for did in lst.doc_ids if did != doc.id]

    if select == "importance":
        T = top_m_tokens(token_importance(q_ts, d_ts, others, surrogate, cfg.margin), cfg.max_tokens)
    elif select == "random":
        in_vocab = [pos for pos, t in enumerate(d_ts.tokens) if t in surrogate]
        take = min(cfg.max_tokens, len(in_vocab))
        T = [in_vocab[int(i)] for i in rng.choice(len(in_vocab), size=take, replace=False)] if take else []
    else:
        raise AttackError(f"unknown selection mode {select!r}")
    if not T:
        return AttackResult(query.id, doc.id, rank_before, rank_before, [], 1, False)

    perturbed = pgd_perturb(
        q_ts, d_ts, others, surrogate, T, cfg.step_size, cfg.pgd_steps, cfg.margin, cfg.grad_norm
    )
    if perturb == "random":
        # direction randomized, magnitude kept: isolates what the descent
        # direction itself contributes
        for pos in T:
            origin = surrogate.vector(d_ts.tokens[pos])
            norm = float(np.linalg.norm(perturbed[pos] - origin))
            direction = rng.standard_normal(surrogate.dim)
            dnorm = float(np.linalg.norm(direction))
            perturbed[pos] = origin + (norm / dnorm) * direction if dnorm > 0 else origin.copy()
    elif perturb != "pgd":
        raise AttackError(f"unknown perturbation mode {perturb!r}")

    if replace == "greedy":
        result = greedy_replace(
            query, doc, d_ts, T, perturbed, oracle, surrogate, cf_store, general_store, cfg, rank_before
        )
    elif replace == "unconditional":
        result = _unconditional_replace(
            query, doc, d_ts, T, perturbed, oracle, surrogate, cf_store, cfg, rank_before
        )
    else:
        raise AttackError(f"unknown replacement mode {replace!r}")
    result.oracle_queries += 1  # the initial ranked-list call
    return result
