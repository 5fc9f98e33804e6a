"""Command-line driver.

Subcommands mirror the experiment stages and communicate through files
under the output directory:

    gen-corpus       write synthetic data to <out>/data/
    build-target     train the hidden ranker, save checkpoints
    train-surrogate  harvest PRF labels, train the surrogate
    attack           run one attack method, write <out>/attacks/<m>.jsonl
    evaluate         aggregate metrics into <out>/report.csv
    detect-spam      spamicity threshold sweep into <out>/spam_sweep.csv
    report           pretty-print the two CSV files

Global flags: --config <file>, --seed <int>, --out <dir>; flags win over
config-file values.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import harness
from .harness import ALL_METHODS, ExperimentConfig, HarnessError
from .metrics import build_report, detection_rate, write_report_csv, write_spam_sweep_csv
from .oracle import TargetOracle
from .ranker import BilinearRanker, load_ranker, save_ranker
from .corpus import tokenize
from .surrogate import collect_prf_labels, save_prf_tsv, train_surrogate

log = logging.getLogger(__name__)


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = harness.load_config(args.config, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "method", None):
        cfg.methods = [args.method]
    cfg.validate()
    return cfg


def _checkpoint_paths(cfg: ExperimentConfig) -> dict[str, Path]:
    base = Path(cfg.out_dir) / "checkpoints"
    return {
        "target": base / "target.txt",
        "pool": base / "target_pool.json",
        "surrogate": base / "surrogate.txt",
        "prf": base / "prf.tsv",
    }


def _load_stage_data(cfg: ExperimentConfig) -> harness.LoadedData:
    paths = harness.data_paths(cfg)
    if not paths["corpus"].exists():
        raise HarnessError(f"no corpus at {paths['corpus']}; run gen-corpus first")
    return harness.load_data_files(paths)


def _load_oracle(cfg: ExperimentConfig, data: harness.LoadedData) -> TargetOracle:
    ckpt = _checkpoint_paths(cfg)
    if not ckpt["target"].exists():
        raise HarnessError(f"no target checkpoint at {ckpt['target']}; run build-target first")
    return TargetOracle.load(
        ckpt["target"], ckpt["pool"], data.corpus, data.train_queries + data.eval_queries
    )


def cmd_gen_corpus(args) -> int:
    cfg = _resolve_config(args)
    data = harness.generate_synthetic_corpus(cfg.synth, cfg.seed)
    paths = harness.write_synth_data(data, Path(cfg.out_dir) / "data")
    print(
        f"wrote {len(data.corpus)} documents, "
        f"{len(data.train_queries)}+{len(data.eval_queries)} queries, "
        f"3 embedding spaces to {paths['corpus'].parent}"
    )
    return 0


def cmd_build_target(args) -> int:
    cfg = _resolve_config(args)
    data = _load_stage_data(cfg)
    oracle = harness.build_oracle(cfg, data)
    ckpt = _checkpoint_paths(cfg)
    ckpt["target"].parent.mkdir(parents=True, exist_ok=True)
    oracle.save(ckpt["target"], ckpt["pool"])
    print(f"target oracle saved under {ckpt['target'].parent} (N={cfg.list_length})")
    return 0


def cmd_train_surrogate(args) -> int:
    cfg = _resolve_config(args)
    data = _load_stage_data(cfg)
    oracle = _load_oracle(cfg, data)
    prf = collect_prf_labels(
        oracle,
        data.train_queries,
        cfg.prf_k,
        cfg.list_length,
        negatives=cfg.prf_negatives,
        seed=harness.derived_seed(cfg.seed, "prf"),
    )
    prf.audit()
    ckpt = _checkpoint_paths(cfg)
    save_prf_tsv(ckpt["prf"], prf)
    surrogate = BilinearRanker.init_from_store(
        data.stores["model"], seed=harness.derived_seed(cfg.seed, "surrogate-init")
    )
    fidelity_queries = data.eval_queries[: cfg.fidelity_queries]
    fidelity_lists = [(q, oracle.ranked_list(q.id)) for q in fidelity_queries]
    pre = harness.ranking_fidelity(surrogate, fidelity_lists, data.doc_tokens)
    query_tokens = {q.id: tokenize(q.text, q.id) for q in data.train_queries + data.eval_queries}
    history = train_surrogate(
        prf,
        query_tokens,
        data.doc_tokens,
        surrogate,
        epochs=cfg.surrogate_epochs,
        lr=cfg.surrogate_lr,
        beta=cfg.attack.margin,
        seed=harness.derived_seed(cfg.seed, "surrogate-train"),
    )
    post = harness.ranking_fidelity(surrogate, fidelity_lists, data.doc_tokens)
    save_ranker(ckpt["surrogate"], surrogate)
    print(
        f"surrogate trained on {len(prf.triples)} triples, final loss {history[-1]:.4f}, "
        f"ranking fidelity tau {pre:.4f} -> {post:.4f}"
    )
    return 0


def cmd_attack(args) -> int:
    cfg = _resolve_config(args)
    data = _load_stage_data(cfg)
    oracle = _load_oracle(cfg, data)
    ckpt = _checkpoint_paths(cfg)
    if not ckpt["surrogate"].exists():
        raise HarnessError(f"no surrogate checkpoint at {ckpt['surrogate']}; run train-surrogate first")
    surrogate = load_ranker(ckpt["surrogate"])
    targets = {}
    for q in data.eval_queries:
        lst = oracle.ranked_list(q.id)
        targets[q.id] = harness.pick_target_documents(
            lst, cfg.per_query_targets, harness.derived_rng(cfg.seed, "targets", q.id)
        )
    stats = harness.base_mod.build_corpus_stats(data.doc_tokens)
    method = args.method
    results = harness.run_method(method, cfg, data, oracle, surrogate, targets, stats)
    out = Path(cfg.out_dir) / "attacks"
    out.mkdir(parents=True, exist_ok=True)
    harness.write_attack_jsonl(out / f"{method}.jsonl", results)
    succ = sum(r.success for r in results)
    print(f"{method}: {succ}/{len(results)} attacks improved the rank -> {out / (method + '.jsonl')}")
    return 0


def _collect_results(cfg: ExperimentConfig) -> dict[str, list]:
    out = Path(cfg.out_dir) / "attacks"
    found = {}
    for method in cfg.methods:
        path = out / f"{method}.jsonl"
        if not path.exists():
            raise HarnessError(f"no attack log for {method!r} at {path}; run attack --method {method}")
        found[method] = harness.read_attack_jsonl(path)
    return found


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    data = _load_stage_data(cfg)
    results = _collect_results(cfg)
    reports = [
        build_report(m, res, data.docs, data.doc_tokens, data.stores["general"])
        for m, res in sorted(results.items())
    ]
    path = Path(cfg.out_dir) / "report.csv"
    write_report_csv(path, reports)
    print(f"wrote {len(reports)} report rows to {path}")
    return 0


def cmd_detect_spam(args) -> int:
    cfg = _resolve_config(args)
    data = _load_stage_data(cfg)
    results = _collect_results(cfg)
    query_tokens = {q.id: tokenize(q.text, q.id) for q in data.train_queries + data.eval_queries}
    rows = [
        (tau, m, detection_rate(res, query_tokens, data.doc_tokens, tau))
        for tau in cfg.tau_grid
        for m, res in sorted(results.items())
    ]
    path = Path(cfg.out_dir) / "spam_sweep.csv"
    write_spam_sweep_csv(path, rows)
    print(f"wrote {len(rows)} sweep rows to {path}")
    return 0


def cmd_report(args) -> int:
    cfg = _resolve_config(args)
    report_path = Path(cfg.out_dir) / "report.csv"
    sweep_path = Path(cfg.out_dir) / "spam_sweep.csv"
    if not report_path.exists():
        raise HarnessError(f"no report at {report_path}; run evaluate first")
    with open(report_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'method':<16} {'SR':>7} {'PP':>7} {'SS_doc':>7} {'SS_sen':>7}")
    for row in rows:
        print(
            f"{row['method']:<16} {float(row['SR']):>7.1f} {float(row['PP']):>7.1f} "
            f"{float(row['SS_doc']):>7.1f} {float(row['SS_sen']):>7.1f}"
        )
    if sweep_path.exists():
        with open(sweep_path, encoding="utf-8") as fh:
            sweep = list(csv.DictReader(fh))
        methods = sorted({r["method"] for r in sweep})
        taus = sorted({float(r["tau"]) for r in sweep})
        by_key = {(float(r["tau"]), r["method"]): float(r["detection_rate"]) for r in sweep}
        print("\ndetection rate (%) by spamicity threshold")
        print(f"{'tau':<8}" + "".join(f"{m:>14}" for m in methods))
        for tau in taus:
            print(f"{tau:<8.3f}" + "".join(f"{by_key[(tau, m)]:>14.1f}" for m in methods))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prada", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="write synthetic corpus, queries and embeddings").set_defaults(
        func=cmd_gen_corpus
    )
    sub.add_parser("build-target", help="train and save the hidden target ranker").set_defaults(
        func=cmd_build_target
    )
    sub.add_parser("train-surrogate", help="harvest PRF labels and train the surrogate").set_defaults(
        func=cmd_train_surrogate
    )
    p_attack = sub.add_parser("attack", help="run one attack method")
    p_attack.add_argument("--method", required=True, choices=ALL_METHODS)
    p_attack.set_defaults(func=cmd_attack)
    sub.add_parser("evaluate", help="aggregate metrics into report.csv").set_defaults(func=cmd_evaluate)
    sub.add_parser("detect-spam", help="spamicity threshold sweep").set_defaults(func=cmd_detect_spam)
    sub.add_parser("report", help="pretty-print report.csv and spam_sweep.csv").set_defaults(
        func=cmd_report
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single exit point with stage tag
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
