#!/usr/bin/env python3
"""Train the full model and its ablations on the synthetic corpus, then tabulate test criteria.

Example:
    python3 scripts/run_synthetic_experiment.py --out runs/synth --seeds 0 1 2

The corpus is generated under OUT/corpus unless it already exists. Results go
to OUT/results.json and a text table on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from spatialq import qnet, stats
from spatialq.corpus import CorpusSpec, build_corpus
from spatialq.pipeline import DifferenceCache, analysis_for
from spatialq.render import load_heads
from spatialq.trainer import TrainHyper, evaluate_model, load_manifest, train

VARIANTS = {
    "full": qnet.NetConfig(),
    "no_preweight": qnet.NetConfig(use_preweight=False),
    "no_diffuseness": qnet.NetConfig(feature_count=3),
    "frame_400ms": qnet.NetConfig(frame_ms=400),
}
SUBSETS = {"all": "*", "codecs": "condition!=anchor", "spat_rev": "scene==reverberant"}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/synthetic"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=CorpusSpec.duration, help="seconds per content")
    ap.add_argument("--variants", nargs="+", choices=sorted(VARIANTS), default=list(VARIANTS))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    corpus_dir = args.out / "corpus"
    manifest = corpus_dir / "manifest.csv"
    if not manifest.exists():
        build_corpus(CorpusSpec(seed=args.corpus_seed, duration=args.duration), corpus_dir)
    pairs = load_manifest(manifest)
    heads = load_heads(corpus_dir / "filters")
    split = {s: [p for p in pairs if p.split == s] for s in ("train", "val", "test")}
    subsets = {k: stats.parse_subset(v) for k, v in SUBSETS.items()}

    results = {}
    caches: dict[tuple, DifferenceCache] = {}
    for name in args.variants:
        net = VARIANTS[name]
        analysis = analysis_for(net)
        key = (analysis.frame_duration, analysis.include_diffuseness)
        if key not in caches:
            caches[key] = DifferenceCache(heads, analysis, args.threads)
        cache = caches[key]
        for seed in args.seeds:
            start = time.perf_counter()
            params, report = train(split["train"], split["val"], heads, net, TrainHyper(seed=seed), cache=cache)
            rows = evaluate_model(split["test"], heads, params, net, cache=cache).rows
            table = stats.report(rows, subsets)
            results[f"{name}/seed{seed}"] = {
                "variant": name, "seed": seed, "parameters": qnet.param_count(net),
                "epochs": report.epochs_run, "best_epoch": report.best_epoch,
                "seconds": round(time.perf_counter() - start, 1), "test": table,
            }
            args.out.mkdir(parents=True, exist_ok=True)
            qnet.save_params(params, net, args.out / f"{name}_seed{seed}.qsta")
            logging.info("%s seed %d: test spearman %.3f", name, seed, table["all"]["spearman"])

    (args.out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    print(f"{'variant':<16}{'params':>7}{'pearson':>9}{'spearman':>10}{'rmse':>8}{'rmse*':>8}")
    for name in args.variants:
        runs = [r for r in results.values() if r["variant"] == name]
        mean = {c: np.mean([r["test"]["all"][c] for r in runs]) for c in ("pearson", "spearman", "rmse", "rmse_star")}
        print(f"{name:<16}{runs[0]['parameters']:>7}{mean['pearson']:>9.3f}{mean['spearman']:>10.3f}"
              f"{mean['rmse']:>8.2f}{mean['rmse_star']:>8.2f}")


if __name__ == "__main__":
    main()
