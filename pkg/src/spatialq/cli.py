"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, gradcheck, qnet, stats, trainer
from .errors import DataError, NumericalError
from .hoa import load_soundfield
from .pipeline import DifferenceCache, analysis_for, score_pair
from .render import MAX_HEADS, cardioid_head, load_heads

log = logging.getLogger("spatialq")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _heads(args, order: int = 3):
    directory = Path(args.filters) if args.filters else None
    if directory is not None and directory.is_dir():
        return load_heads(directory)
    if args.allow_builtin_head:
        log.info("using the built-in cardioid head")
        return [cardioid_head(order)]
    raise DataError(f"filter directory {directory} not found (use --allow-builtin-head to fall back)")


def _net_from_flags(args, band_count: int = 32) -> qnet.NetConfig:
    return qnet.NetConfig(
        feature_count=3 if args.no_diffuseness else 4,
        band_count=band_count,
        use_preweight=not args.no_preweight,
        frame_ms=args.frame_ms,
        freq_weighting=qnet.FREQ_LINEAR if args.freq_weighting == "linear" else qnet.FREQ_SOFTMAX,
    )


def cmd_score(args) -> int:
    params, net = qnet.load_params(args.model)
    ref = load_soundfield(args.ref, args.normalization)
    deg = load_soundfield(args.deg, args.normalization)
    if args.trim:
        deg = deg.with_samples(deg.samples[:, args.trim:])
        ref = ref.with_samples(ref.samples[:, : deg.n_samples])
    result = score_pair(ref, deg, _heads(args, ref.order), params, net)
    if args.json:
        print(json.dumps({"score": result.score, "per_head": result.per_head}, sort_keys=True))
    else:
        print(f"score: {result.score:.3f}")
        for name, value in result.per_head.items():
            print(f"  {name}: {value:.3f}")
    return EXIT_OK


def _split(pairs, split):
    return [p for p in pairs if p.split == split]


def cmd_train(args) -> int:
    pairs = trainer.load_manifest(args.manifest)
    net = _net_from_flags(args)
    heads = _heads(args)
    hyper = trainer.TrainHyper(seed=args.seed, max_epochs=args.max_epochs)
    params, report = trainer.train(_split(pairs, "train"), _split(pairs, "val"), heads, net, hyper,
                                   threads=args.threads)
    qnet.save_params(params, net, args.out)
    summary = {"parameters": qnet.param_count(net), **report.to_dict()}
    report_path = Path(str(args.out) + ".report.json")
    report_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"model: {args.out}")
    print(f"epochs: {report.epochs_run}, best epoch: {report.best_epoch}, "
          f"val pearson: {summary['best_val_pearson']:.4f}, steps: {report.total_steps}")
    return EXIT_OK


def default_subsets(pairs) -> dict[str, str]:
    subsets = {"all": "*", "codecs": "condition!=anchor"}
    if any("scene" in p.extra for p in pairs):
        subsets["spat_rev"] = "scene==reverberant"
    return subsets


def _subset_exprs(args, pairs) -> dict:
    exprs = default_subsets(pairs)
    for item in args.subset or []:
        if "=" not in item:
            raise UsageError(f"--subset expects NAME=EXPR, got {item!r}")
        name, expr = item.split("=", 1)
        exprs[name] = expr
    return {k: stats.parse_subset(v) for k, v in exprs.items()}


def cmd_eval(args) -> int:
    pairs = trainer.load_manifest(args.manifest)
    subsets = _subset_exprs(args, pairs)
    if args.split != "all":
        pairs = _split(pairs, args.split)
    params, net = qnet.load_params(args.model)
    heads = _heads(args)
    cache = DifferenceCache(heads, analysis_for(net), args.threads)
    result = trainer.evaluate_model(pairs, heads, params, net, exclude_hidden=not args.include_hidden,
                                    cache=cache)
    table = stats.report(result.rows, subsets)
    print(stats.format_report(table, as_json=args.json))
    if args.out:
        Path(args.out).write_text(json.dumps(
            {"report": table, "predictions": result.rows}, indent=2, sort_keys=True) + "\n")
    for pid, message in result.errors:
        print(f"error: {pid}: {message}", file=sys.stderr)
    return EXIT_DATA if result.errors else EXIT_OK


def cmd_synth(args) -> int:
    spec = corpus.CorpusSpec(seed=args.seed, variants=args.variants, duration=args.duration,
                             n_heads=args.heads)
    manifest = corpus.build_corpus(spec, args.out)
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(range(args.seed, args.seed + args.seeds))
    worst = max(r.max_error for r in results)
    for r in results:
        if not r.passed:
            print(f"FAIL F={r.config.feature_count} frame={r.config.frame_ms}ms "
                  f"preweight={r.config.use_preweight} seed={r.seed}: {r.max_error:.3e}")
    print(f"checks: {len(results)}, max relative error: {worst:.3e} (tolerance {gradcheck.REL_TOL:g})")
    if worst < gradcheck.REL_TOL:
        print("gradcheck: pass")
        return EXIT_OK
    print("gradcheck: FAIL")
    return EXIT_NUMERIC


def cmd_info(args) -> int:
    params, net = qnet.load_params(args.model)
    count = qnet.param_count(net)
    info = {
        "parameters": count,
        "reference_parameters": qnet.REFERENCE_PARAM_COUNT,
        "feature_count": net.feature_count,
        "features": ["envelope", "ild", "coherence", "diffuseness"][: net.feature_count],
        "band_count": net.band_count,
        "frame_ms": net.frame_ms,
        "preweight": net.use_preweight,
        "freq_weighting": "linear" if net.freq_weighting == qnet.FREQ_LINEAR else "softmax",
        "head_policy": f"mean score over up to {MAX_HEADS} filter sets, sorted by filename",
    }
    if args.json:
        print(json.dumps(info, sort_keys=True))
        return EXIT_OK
    print(f"parameters: {count}")
    print(f"reference target: {qnet.REFERENCE_PARAM_COUNT} (delta {count - qnet.REFERENCE_PARAM_COUNT:+d})")
    for key in ("features", "band_count", "frame_ms", "preweight", "freq_weighting", "head_policy"):
        print(f"{key}: {info[key]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spatialq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def heads_args(p):
        p.add_argument("--filters", help="directory of filter-set WAV files (one per head)")
        p.add_argument("--allow-builtin-head", action="store_true",
                       help="fall back to an analytic cardioid head if --filters is missing")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("score", help="score one reference/degraded pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--deg", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--normalization", choices=["SN3D", "N3D"], default="SN3D")
    p.add_argument("--trim", type=int, default=0, help="samples to drop from the start of --deg")
    p.add_argument("--json", action="store_true")
    heads_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="fit a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-diffuseness", action="store_true")
    p.add_argument("--no-preweight", action="store_true")
    p.add_argument("--frame-ms", type=int, choices=[40, 400], default=40)
    p.add_argument("--freq-weighting", choices=["softmax", "linear"], default="softmax")
    p.add_argument("--max-epochs", type=int, default=1000)
    heads_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="criteria table for a trained model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--subset", action="append", metavar="NAME=EXPR",
                   help="extra subset, e.g. speech=recipe==speech (terms joined by &)")
    p.add_argument("--include-hidden", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="write report and predictions as JSON")
    heads_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variants", type=int, default=3)
    p.add_argument("--duration", type=float, default=1.5)
    p.add_argument("--heads", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("info", help="describe a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_info)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
