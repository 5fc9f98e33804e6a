# scratch calibration driver, not part of the package
import logging
import sys
import time

import numpy as np

from prada.harness import (
    ALL_METHODS,
    ExperimentConfig,
    SynthParams,
    run_experiment,
    prepare_data,
    build_oracle,
)
from prada.attack import AttackConfig

logging.basicConfig(level=logging.WARNING)


def probe(cfg, label, methods=("prada", "prada_tir", "prada_iwr", "prada_esp", "first_nr", "first_rr", "tfidf_rr", "ts_rep")):
    cfg.methods = list(methods)
    t0 = time.time()
    res = run_experiment(cfg)
    elapsed = time.time() - t0

    # relevant-in-top-10 health of the target
    data = prepare_data(cfg)
    oracle = build_oracle(cfg, data)
    hits = 0
    total = 0
    for q in data.train_queries + data.eval_queries:
        rel = data.relevant.get(q.id)
        if rel is None:
            continue
        lst = oracle.ranked_list(q.id)
        total += 1
        if rel in lst.doc_ids[:10]:
            hits += 1
    rel10 = 100.0 * hits / total

    print(f"=== {label} seed={cfg.seed} elapsed={elapsed:.0f}s rel@10={rel10:.0f}% "
          f"tau {res.fidelity_pre:.3f}->{res.fidelity_post:.3f}")
    for m in methods:
        r = res.reports[m]
        results = res.results[m]
        trials = np.mean([x.oracle_queries - 1 for x in results])
        acc = np.mean([len(x.replacements) for x in results])
        print(f"  {m:<12} SR {r.sr:6.1f} PP {r.pp:6.2f} SSd {r.ss_doc:5.1f} trials~{trials:5.1f} accepted~{acc:4.1f}")
    det = {m: [d for t, mm, d in sorted(res.spam_sweep) if mm == m] for m in ("prada", "ts_rep") if m in res.results}
    print(f"  det prada {det.get('prada')}  ts_rep {det.get('ts_rep')}")
    return res


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    cfg = ExperimentConfig(
        seed=seed,
        out_dir=f"/tmp/cal{seed}",
        synth=SynthParams(
            lead_len=15,
            body_topic_frac=0.25,
            body_other_frac=0.05,
            model_noise=0.8,
            model_scale=3.5,
        ),
        target_epochs=60,
        target_lr=0.15,
        target_negatives=6,
        surrogate_epochs=20,
    )
    probe(cfg, "base")
