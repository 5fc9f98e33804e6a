"""Experiment orchestration: configuration, synthetic data generation,
target-document sampling, attack execution and report emission.

The synthetic corpus is organized around topics. Content words come in
small synonym groups (mutually close in the counter-fitted and general
spaces); filler words are isolated vectors with no close neighbor, so
they have no usable synonyms. Each query holds a few content words of one
topic and designates one relevant document whose title-like lead sentence
contains every query term.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from . import attack as attack_mod
from . import baselines as base_mod
from .attack import AttackConfig, AttackResult, Replacement
from .corpus import (
    Corpus,
    Document,
    EmbeddingStore,
    Query,
    TokenSeq,
    load_corpus,
    load_embeddings,
    load_qrels,
    load_queries,
    tokenize,
)
from .metrics import EvalReport, build_report, detection_rate, write_report_csv, write_spam_sweep_csv
from .oracle import RankedList, TargetOracle, TargetTrainConfig, build_target
from .ranker import BilinearRanker, ScoredList, pooled_embedding, save_ranker, score_pooled
from .surrogate import collect_prf_labels, save_prf_tsv, train_surrogate

log = logging.getLogger(__name__)


class HarnessError(ValueError):
    pass


def derived_seed(*parts) -> int:
    """Stable 64-bit seed from string parts; platform-independent."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derived_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derived_seed(*parts))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthParams:
    n_docs: int = 200
    n_train_queries: int = 40
    n_eval_queries: int = 20
    vocab_size: int = 500
    dim: int = 50
    n_topics: int = 20
    group_size: int = 5
    filler_fraction: float = 0.3
    doc_len_mean: int = 60
    query_len: int = 3
    lead_len: int = 15
    body_sentence_len: int = 10
    body_topic_frac: float = 0.15
    body_other_frac: float = 0.05
    cf_noise: float = 0.3
    model_group_noise: float = 0.0
    model_syn_noise: float = 0.55
    general_noise: float = 0.35
    model_scale: float = 3.5

    def validate(self) -> None:
        if self.n_docs < self.n_train_queries + self.n_eval_queries:
            raise HarnessError("need at least one document per query")
        if self.vocab_size < self.n_topics * self.group_size + 1:
            raise HarnessError("vocabulary too small for the topic layout")
        if self.query_len > self.group_size * 2:
            raise HarnessError("query_len too large for the group layout")
        if self.doc_len_mean < self.lead_len + self.body_sentence_len:
            raise HarnessError("doc_len_mean too small for lead + one sentence")


@dataclass
class SynthData:
    corpus: Corpus
    train_queries: list[Query]
    eval_queries: list[Query]
    relevant: dict[str, str]
    stores: dict[str, EmbeddingStore]


def _make_words(rng: np.random.Generator, count: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        w = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(3)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _noisy(base: np.ndarray, scale: float, rng: np.random.Generator, dim: int) -> np.ndarray:
    return _unit(base + scale * rng.standard_normal(dim) / np.sqrt(dim))


def generate_synthetic_corpus(params: SynthParams, seed: int) -> SynthData:
    """Deterministic topic-structured corpus, queries and all three
    embedding spaces."""
    params.validate()
    p = params
    n_groups = int((p.vocab_size * (1 - p.filler_fraction)) // p.group_size)
    n_content = n_groups * p.group_size
    n_filler = p.vocab_size - n_content

    word_rng = derived_rng(seed, "words")
    all_words = _make_words(word_rng, p.vocab_size)
    content = all_words[:n_content]
    fillers = all_words[n_content:]
    group_words = [content[g * p.group_size : (g + 1) * p.group_size] for g in range(n_groups)]
    topic_of_group = [g % p.n_topics for g in range(n_groups)]
    topic_groups: list[list[int]] = [[] for _ in range(p.n_topics)]
    for g, t in enumerate(topic_of_group):
        topic_groups[t].append(g)
    topic_words = [
        [w for g in topic_groups[t] for w in group_words[g]] for t in range(p.n_topics)
    ]

    # counter-fitted space: synonym groups tight, fillers isolated
    cf_rng = derived_rng(seed, "cf")
    cf_vecs: dict[str, np.ndarray] = {}
    for g in range(n_groups):
        base = _unit(cf_rng.standard_normal(p.dim))
        for w in group_words[g]:
            cf_vecs[w] = _noisy(base, p.cf_noise, cf_rng, p.dim)
    for w in fillers:
        cf_vecs[w] = _unit(cf_rng.standard_normal(p.dim))

    # model space: topic plus per-group offset plus per-word spread, scaled
    # to a realistic word-vector magnitude (dot products, not cosines, feed
    # the rankers, so this scale matters). The per-word spread is what a
    # synonym substitution can move.
    model_rng = derived_rng(seed, "model")
    topic_dirs = [_unit(model_rng.standard_normal(p.dim)) for _ in range(p.n_topics)]
    model_vecs: dict[str, np.ndarray] = {}
    for g in range(n_groups):
        offset = p.model_group_noise * model_rng.standard_normal(p.dim) / np.sqrt(p.dim)
        base = topic_dirs[topic_of_group[g]] + offset
        for w in group_words[g]:
            model_vecs[w] = p.model_scale * _noisy(base, p.model_syn_noise, model_rng, p.dim)
    for w in fillers:
        model_vecs[w] = p.model_scale * _unit(model_rng.standard_normal(p.dim))

    # general space: group structure again (different draw), used by the
    # similarity metric and the nearest-word baseline
    gen_rng = derived_rng(seed, "general")
    gen_vecs: dict[str, np.ndarray] = {}
    for g in range(n_groups):
        base = _unit(gen_rng.standard_normal(p.dim))
        for w in group_words[g]:
            gen_vecs[w] = _noisy(base, p.general_noise, gen_rng, p.dim)
    for w in fillers:
        gen_vecs[w] = _unit(gen_rng.standard_normal(p.dim))

    def store(name: str, vecs: dict[str, np.ndarray]) -> EmbeddingStore:
        return EmbeddingStore(name, all_words, np.array([vecs[w] for w in all_words]))

    # queries: one topic each (round robin), a few distinct content words
    q_rng = derived_rng(seed, "queries")
    queries: list[Query] = []
    query_topics: dict[str, int] = {}
    n_queries = p.n_train_queries + p.n_eval_queries
    for i in range(n_queries):
        qid = f"qt{i:03d}" if i < p.n_train_queries else f"qe{i - p.n_train_queries:03d}"
        topic = i % p.n_topics
        words = list(q_rng.choice(topic_words[topic], size=p.query_len, replace=False))
        queries.append(Query(qid, " ".join(words)))
        query_topics[qid] = topic

    # documents: every query designates one relevant document whose lead
    # holds all query terms; the rest are background documents
    doc_rng = derived_rng(seed, "docs")

    def body_word(topic: int) -> str:
        u = doc_rng.random()
        if u < p.body_topic_frac:
            return topic_words[topic][int(doc_rng.integers(len(topic_words[topic])))]
        if u < p.body_topic_frac + p.body_other_frac:
            other = int(doc_rng.integers(p.n_topics))
            return topic_words[other][int(doc_rng.integers(len(topic_words[other])))]
        return fillers[int(doc_rng.integers(len(fillers)))]

    def make_text(topic: int, must_include: list[str]) -> str:
        length = max(
            p.lead_len + p.body_sentence_len,
            int(round(doc_rng.normal(p.doc_len_mean, 0.12 * p.doc_len_mean))),
        )
        lead = list(must_include)
        while len(lead) < p.lead_len:
            lead.append(topic_words[topic][int(doc_rng.integers(len(topic_words[topic])))])
        sentences = [" ".join(lead) + "."]
        remaining = length - len(lead)
        while remaining > 0:
            k = min(p.body_sentence_len, remaining)
            sentences.append(" ".join(body_word(topic) for _ in range(k)) + ".")
            remaining -= k
        return " ".join(sentences)

    specs: list[tuple[int, list[str], str | None]] = []
    for q in queries:
        specs.append((query_topics[q.id], list(tokenize(q.text).tokens), q.id))
    for i in range(p.n_docs - n_queries):
        specs.append((i % p.n_topics, [], None))
    order = doc_rng.permutation(len(specs))
    docs: list[Document] = []
    relevant: dict[str, str] = {}
    for slot, spec_idx in enumerate(order):
        topic, must, qid = specs[int(spec_idx)]
        did = f"d{slot:04d}"
        docs.append(Document(did, make_text(topic, must)))
        if qid is not None:
            relevant[qid] = did

    return SynthData(
        corpus=Corpus(docs),
        train_queries=queries[: p.n_train_queries],
        eval_queries=queries[p.n_train_queries :],
        relevant=relevant,
        stores={
            "model": store("model", model_vecs),
            "counter-fitted": store("counter-fitted", cf_vecs),
            "general": store("general", gen_vecs),
        },
    )


def write_synth_data(data: SynthData, out_dir) -> dict[str, Path]:
    """Emit the generated artifacts as the standard on-disk formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "queries_train": out / "queries_train.jsonl",
        "queries_eval": out / "queries_eval.jsonl",
        "qrels": out / "qrels.tsv",
        "emb_model": out / "emb_model.txt",
        "emb_cf": out / "emb_cf.txt",
        "emb_general": out / "emb_general.txt",
    }
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for d in data.corpus:
            fh.write(json.dumps({"id": d.id, "text": d.text}) + "\n")
    for key, queries in (("queries_train", data.train_queries), ("queries_eval", data.eval_queries)):
        with open(paths[key], "w", encoding="utf-8") as fh:
            for q in queries:
                fh.write(json.dumps({"id": q.id, "text": q.text}) + "\n")
    with open(paths["qrels"], "w", encoding="utf-8") as fh:
        for qid in sorted(data.relevant):
            fh.write(f"{qid}\t{data.relevant[qid]}\t1\n")
    for key, space in (("emb_model", "model"), ("emb_cf", "counter-fitted"), ("emb_general", "general")):
        store = data.stores[space]
        with open(paths[key], "w", encoding="utf-8") as fh:
            for i, w in enumerate(store.words):
                fh.write(w + " " + " ".join(repr(float(x)) for x in store.matrix[i]) + "\n")
    return paths


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

STEPWISE_METHODS = {
    "first_rr": ("first", "rr"),
    "first_nr": ("first", "nr"),
    "last_rr": ("last", "rr"),
    "last_nr": ("last", "nr"),
    "tfidf_rr": ("tfidf", "rr"),
    "tfidf_nr": ("tfidf", "nr"),
    "textrank_rr": ("textrank", "rr"),
    "textrank_nr": ("textrank", "nr"),
}

TERM_SPAM_METHODS = {"ts_rep": "rep", "ts_sti": "sti"}

PRADA_VARIANTS = {
    "prada": ("importance", "pgd", "greedy"),
    "prada_tir": ("random", "pgd", "greedy"),
    "prada_esp": ("importance", "random", "greedy"),
    "prada_iwr": ("importance", "pgd", "unconditional"),
    "prada_esp_iwr": ("importance", "random", "unconditional"),
}

ALL_METHODS = sorted(STEPWISE_METHODS) + sorted(TERM_SPAM_METHODS) + sorted(PRADA_VARIANTS)

DEFAULT_TAU_GRID = (0.050, 0.055, 0.060, 0.065, 0.070, 0.075, 0.080)


@dataclass
class ExperimentConfig:
    seed: int | None = None
    out_dir: str = "out"
    methods: list[str] = field(default_factory=lambda: ["prada", "ts_rep"])

    # data: explicit paths, or synthetic generation under out/data
    synthetic: bool = True
    corpus_path: str | None = None
    queries_train_path: str | None = None
    queries_eval_path: str | None = None
    qrels_path: str | None = None
    emb_model_path: str | None = None
    emb_cf_path: str | None = None
    emb_general_path: str | None = None
    synth: SynthParams = field(default_factory=SynthParams)

    # oracle
    list_length: int = 100
    target_epochs: int = 100
    target_lr: float = 0.3
    target_negatives: int = 6
    target_w_noise: float = 0.2

    # surrogate
    prf_k: int = 1
    prf_negatives: int | str = 10
    surrogate_epochs: int = 20
    surrogate_lr: float = 0.05
    fidelity_queries: int = 5

    # attack
    attack: AttackConfig = field(default_factory=AttackConfig)
    per_query_targets: int = 9
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID

    def validate(self) -> None:
        if self.seed is None:
            raise HarnessError("seed is mandatory")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise HarnessError(f"unknown methods {unknown}; registered: {ALL_METHODS}")
        if not self.synthetic:
            for name in (
                "corpus_path",
                "queries_train_path",
                "queries_eval_path",
                "qrels_path",
                "emb_model_path",
                "emb_cf_path",
                "emb_general_path",
            ):
                value = getattr(self, name)
                if value is None:
                    raise HarnessError(f"{name} required when synthetic=false")
                if not Path(value).exists():
                    raise HarnessError(f"{name}: no such file {value!r}")


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise HarnessError(f"expected boolean, got {raw!r}") from None
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return [part.strip() for part in raw.split(",") if part.strip()]
    if isinstance(current, tuple):
        return tuple(float(part) for part in raw.split(",") if part.strip())
    return raw


def config_from_items(items: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply flat ``key = value`` settings over a base config.

    Attack and synthetic-generation settings use ``attack.<field>`` and
    ``synth.<field>`` keys. ``prf_negatives`` accepts a count or ``all``;
    ``seed`` and path values are plain keys.
    """
    cfg = base if base is not None else ExperimentConfig()
    top = {f.name: f for f in fields(ExperimentConfig)}
    attack_fields = {f.name for f in fields(AttackConfig)}
    synth_fields = {f.name for f in fields(SynthParams)}
    attack_updates: dict = {}
    synth_updates: dict = {}
    for key, raw in items.items():
        if key.startswith("attack."):
            name = key[len("attack.") :]
            if name not in attack_fields:
                raise HarnessError(f"unknown config key {key!r}")
            attack_updates[name] = _parse_value(raw, getattr(cfg.attack, name))
        elif key.startswith("synth."):
            name = key[len("synth.") :]
            if name not in synth_fields:
                raise HarnessError(f"unknown config key {key!r}")
            synth_updates[name] = _parse_value(raw, getattr(cfg.synth, name))
        elif key in top:
            if key == "seed":
                setattr(cfg, key, int(raw))
            elif key == "prf_negatives":
                setattr(cfg, key, raw.strip() if raw.strip() == "all" else int(raw))
            elif key == "attack" or key == "synth":
                raise HarnessError(f"use {key}.<field> keys")
            else:
                setattr(cfg, key, _parse_value(raw, getattr(cfg, key)))
        else:
            raise HarnessError(f"unknown config key {key!r}")
    if attack_updates:
        cfg.attack = replace(cfg.attack, **attack_updates)
    if synth_updates:
        cfg.synth = replace(cfg.synth, **synth_updates)
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    items: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise HarnessError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            items[key.strip()] = raw.strip()
    return config_from_items(items, base)


# ---------------------------------------------------------------------------
# experiment stages
# ---------------------------------------------------------------------------


def pick_target_documents(lst: RankedList, per_query: int, rng: np.random.Generator) -> list[str]:
    """One uniformly drawn document per ten-position band, starting at
    positions 11-20; the top ten are never picked. Shorter lists yield
    proportionally fewer picks."""
    bands = min(per_query, len(lst) // 10 - 1)
    if bands < 1:
        raise HarnessError(f"ranked list of {len(lst)} is too short to pick targets")
    picks = []
    for b in range(bands):
        lo, hi = 10 * (b + 1) + 1, 10 * (b + 2)
        picks.append(lst.doc_ids[int(rng.integers(lo, hi + 1)) - 1])
    return picks


@dataclass
class LoadedData:
    corpus: Corpus
    train_queries: list[Query]
    eval_queries: list[Query]
    relevant: dict[str, str]
    stores: dict[str, EmbeddingStore]
    doc_tokens: dict[str, TokenSeq]
    docs: dict[str, Document]


def data_paths(config: ExperimentConfig) -> dict[str, Path]:
    """Where the experiment inputs live: explicit config paths, or the
    standard filenames under <out>/data in synthetic mode."""
    if not config.synthetic:
        return {
            "corpus": Path(config.corpus_path),
            "queries_train": Path(config.queries_train_path),
            "queries_eval": Path(config.queries_eval_path),
            "qrels": Path(config.qrels_path),
            "emb_model": Path(config.emb_model_path),
            "emb_cf": Path(config.emb_cf_path),
            "emb_general": Path(config.emb_general_path),
        }
    base = Path(config.out_dir) / "data"
    return {
        "corpus": base / "corpus.jsonl",
        "queries_train": base / "queries_train.jsonl",
        "queries_eval": base / "queries_eval.jsonl",
        "qrels": base / "qrels.tsv",
        "emb_model": base / "emb_model.txt",
        "emb_cf": base / "emb_cf.txt",
        "emb_general": base / "emb_general.txt",
    }


def load_data_files(paths: dict[str, Path]) -> LoadedData:
    corpus = load_corpus(paths["corpus"])
    return LoadedData(
        corpus=corpus,
        train_queries=load_queries(paths["queries_train"]),
        eval_queries=load_queries(paths["queries_eval"]),
        relevant=load_qrels(paths["qrels"]),
        stores={
            "model": load_embeddings(paths["emb_model"], "model"),
            "counter-fitted": load_embeddings(paths["emb_cf"], "counter-fitted"),
            "general": load_embeddings(paths["emb_general"], "general"),
        },
        doc_tokens={d.id: tokenize(d.text, d.id) for d in corpus},
        docs={d.id: d for d in corpus},
    )


def prepare_data(config: ExperimentConfig) -> LoadedData:
    """Generate-and-write (synthetic mode) or load the experiment data.

    Synthetic data is always round-tripped through the on-disk formats so
    a run is a pure function of the emitted files.
    """
    if config.synthetic:
        data = generate_synthetic_corpus(config.synth, config.seed)
        write_synth_data(data, Path(config.out_dir) / "data")
    return load_data_files(data_paths(config))


def build_oracle(config: ExperimentConfig, data: LoadedData) -> TargetOracle:
    return build_target(
        data.corpus,
        data.train_queries + data.eval_queries,
        data.relevant,
        config.list_length,
        data.stores["model"],
        TargetTrainConfig(
            epochs=config.target_epochs,
            lr=config.target_lr,
            negatives_per_query=config.target_negatives,
            w_init_noise=config.target_w_noise,
            seed=derived_seed(config.seed, "target"),
        ),
    )


def surrogate_rank_positions(
    surrogate: BilinearRanker, query: Query, doc_ids: tuple[str, ...], doc_tokens: dict[str, TokenSeq]
) -> dict[str, int]:
    q_vec = pooled_embedding(tokenize(query.text, query.id), surrogate)
    scores = {
        did: score_pooled(q_vec, pooled_embedding(doc_tokens[did], surrogate), surrogate)
        for did in doc_ids
    }
    entries = ScoredList.from_scores(query.id, scores).entries
    return {did: i + 1 for i, (did, _) in enumerate(entries)}


def ranking_fidelity(
    surrogate: BilinearRanker,
    fidelity_lists: list[tuple[Query, RankedList]],
    doc_tokens: dict[str, TokenSeq],
) -> float:
    """Mean Kendall tau between surrogate and target orderings."""
    taus = []
    for query, lst in fidelity_lists:
        positions = surrogate_rank_positions(surrogate, query, lst.doc_ids, doc_tokens)
        target = [i + 1 for i in range(len(lst.doc_ids))]
        ours = [positions[did] for did in lst.doc_ids]
        taus.append(kendalltau(target, ours).statistic)
    return float(np.mean(taus))


@dataclass
class RunResult:
    reports: dict[str, EvalReport]
    results: dict[str, list[AttackResult]]
    fidelity_pre: float
    fidelity_post: float
    spam_sweep: list[tuple[float, str, float]]
    targets: dict[str, list[str]]
    oracle_queries_total: int
    elapsed_s: float
    out_dir: Path


def _attack_rng(config: ExperimentConfig, method: str, qid: str, did: str) -> np.random.Generator:
    return derived_rng(config.seed, method, qid, did)


def run_method(
    method: str,
    config: ExperimentConfig,
    data: LoadedData,
    oracle: TargetOracle,
    surrogate: BilinearRanker,
    targets: dict[str, list[str]],
    stats: base_mod.CorpusStats,
) -> list[AttackResult]:
    results: list[AttackResult] = []
    eval_by_id = {q.id: q for q in data.eval_queries}
    for qid in sorted(targets):
        query = eval_by_id[qid]
        for did in targets[qid]:
            rng = _attack_rng(config, method, qid, did)
            doc = data.docs[did]
            if method in PRADA_VARIANTS:
                select, perturb, replace_mode = PRADA_VARIANTS[method]
                res = attack_mod.prada_attack(
                    query,
                    doc,
                    oracle,
                    surrogate,
                    data.stores["counter-fitted"],
                    data.stores["general"],
                    config.attack,
                    data.doc_tokens,
                    select=select,
                    perturb=perturb,
                    replace=replace_mode,
                    rng=rng,
                )
            elif method in STEPWISE_METHODS:
                selection, strategy = STEPWISE_METHODS[method]
                res = base_mod.run_stepwise_attack(
                    query,
                    doc,
                    oracle,
                    data.stores["general"],
                    data.stores["counter-fitted"],
                    stats,
                    selection,
                    strategy,
                    config.attack.max_tokens,
                    data.doc_tokens,
                    rng,
                )
            elif method in TERM_SPAM_METHODS:
                res = base_mod.run_term_spam_attack(
                    TERM_SPAM_METHODS[method],
                    query,
                    doc,
                    oracle,
                    data.stores["counter-fitted"],
                    data.docs,
                    data.doc_tokens,
                    config.attack.max_tokens,
                    rng,
                )
            else:
                raise HarnessError(f"unknown method {method!r}")
            results.append(res)
    return results


def write_attack_jsonl(path, results: list[AttackResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json_dict()) + "\n")


def read_attack_jsonl(path) -> list[AttackResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            results.append(
                AttackResult(
                    query_id=obj["query_id"],
                    doc_id=obj["doc_id"],
                    rank_before=obj["rank_before"],
                    rank_after=obj["rank_after"],
                    replacements=[
                        Replacement(r["pos"], r["old"], r["new"], r["cf_cosine"])
                        for r in obj["replacements"]
                    ],
                    oracle_queries=obj["oracle_queries"],
                    success=obj["success"],
                    partial=obj.get("partial", False),
                )
            )
    return results


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Full pipeline: data, target oracle, surrogate, attacks, metrics.

    Writes report.csv, spam_sweep.csv, attacks/<method>.jsonl and
    checkpoints/ under the configured output directory. Deterministic for
    a fixed (config, seed): reruns produce byte-identical outputs.
    """
    started = time.monotonic()
    config.validate()
    out = Path(config.out_dir)
    (out / "attacks").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    log.info("stage data: preparing inputs")
    data = prepare_data(config)

    log.info("stage target: building hidden ranker (N=%d)", config.list_length)
    oracle = build_oracle(config, data)
    oracle.save(out / "checkpoints" / "target.txt", out / "checkpoints" / "target_pool.json")

    log.info("stage surrogate: PRF collection and training")
    queries_before = oracle.query_count
    prf = collect_prf_labels(
        oracle,
        data.train_queries,
        config.prf_k,
        config.list_length,
        negatives=config.prf_negatives,
        seed=derived_seed(config.seed, "prf"),
    )
    prf.audit()
    save_prf_tsv(out / "checkpoints" / "prf.tsv", prf)
    prf_calls = oracle.query_count - queries_before

    surrogate = BilinearRanker.init_from_store(
        data.stores["model"], seed=derived_seed(config.seed, "surrogate-init")
    )
    fidelity_queries = data.eval_queries[: config.fidelity_queries]
    fidelity_lists = [(q, oracle.ranked_list(q.id)) for q in fidelity_queries]
    fidelity_pre = ranking_fidelity(surrogate, fidelity_lists, data.doc_tokens)
    query_tokens = {q.id: tokenize(q.text, q.id) for q in data.train_queries + data.eval_queries}
    train_surrogate(
        prf,
        query_tokens,
        data.doc_tokens,
        surrogate,
        epochs=config.surrogate_epochs,
        lr=config.surrogate_lr,
        beta=config.attack.margin,
        seed=derived_seed(config.seed, "surrogate-train"),
    )
    fidelity_post = ranking_fidelity(surrogate, fidelity_lists, data.doc_tokens)
    save_ranker(out / "checkpoints" / "surrogate.txt", surrogate)
    log.info("surrogate fidelity tau: %.4f -> %.4f", fidelity_pre, fidelity_post)

    log.info("stage targets: sampling attack documents")
    pick_calls_before = oracle.query_count
    targets: dict[str, list[str]] = {}
    for q in data.eval_queries:
        lst = oracle.ranked_list(q.id)
        targets[q.id] = pick_target_documents(
            lst, config.per_query_targets, derived_rng(config.seed, "targets", q.id)
        )
    pick_calls = oracle.query_count - pick_calls_before

    stats = base_mod.build_corpus_stats(data.doc_tokens)
    results: dict[str, list[AttackResult]] = {}
    attack_calls = 0
    for method in sorted(set(config.methods)):
        log.info("stage attack: %s", method)
        before = oracle.query_count
        results[method] = run_method(method, config, data, oracle, surrogate, targets, stats)
        spent = oracle.query_count - before
        reported = sum(r.oracle_queries for r in results[method])
        if spent != reported:
            raise HarnessError(
                f"oracle accounting mismatch for {method}: spent {spent}, reported {reported}"
            )
        attack_calls += spent
        write_attack_jsonl(out / "attacks" / f"{method}.jsonl", results[method])

    log.info("stage metrics: reports and spam sweep")
    reports = {
        m: build_report(m, res, data.docs, data.doc_tokens, data.stores["general"])
        for m, res in results.items()
    }
    write_report_csv(out / "report.csv", list(reports.values()))
    sweep = [
        (tau, m, detection_rate(results[m], query_tokens, data.doc_tokens, tau))
        for tau in config.tau_grid
        for m in sorted(results)
    ]
    write_spam_sweep_csv(out / "spam_sweep.csv", sweep)

    expected = prf_calls + len(fidelity_lists) + pick_calls + attack_calls
    if oracle.query_count != expected:
        raise HarnessError(
            f"oracle accounting mismatch: count {oracle.query_count}, expected {expected}"
        )
    elapsed = time.monotonic() - started
    log.info("run complete in %.1fs, %d oracle queries", elapsed, oracle.query_count)
    return RunResult(
        reports=reports,
        results=results,
        fidelity_pre=fidelity_pre,
        fidelity_post=fidelity_post,
        spam_sweep=sweep,
        targets=targets,
        oracle_queries_total=oracle.query_count,
        elapsed_s=elapsed,
        out_dir=out,
    )
