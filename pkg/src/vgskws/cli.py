"""Command-line interface.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusError, load_corpus, read_audio
from .features import FeatureConfig, compute_mfcc
from .fileio import atomic_target, write_text_atomic
from .metrics import (
    MetricsError,
    aggregate_runs,
    aggregate_values,
    build_pairs,
    cooccurrence_kappa,
    evaluate,
    random_baseline,
)
from .model import ModelError, load_checkpoint, localise, read_checkpoint_meta
from .pipeline import SplitData, evaluate_split, load_split, split_pairs
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .training import TrainingError, checkpoint_id, train

log = logging.getLogger("vgskws")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# synth / validate


def cmd_synth(args) -> int:
    overrides = {}
    if args.spec:
        import yaml

        data = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError("<root>: synthetic spec must be a mapping")
        overrides.update(data)
    for name in ("n_keywords", "n_train", "n_dev", "n_test"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    try:
        spec = SyntheticSpec(**overrides)
    except TypeError as exc:
        raise ConfigError(f"spec: {exc}") from None
    try:
        spec.validate()
    except CorpusError as exc:
        raise ConfigError(f"spec: {exc}") from None
    corpus = generate_synthetic_corpus(spec, args.seed, args.out)
    write_text_atomic(Path(args.out) / "synthetic_spec.json", json.dumps({"seed": args.seed, **spec.to_dict()}, indent=2, sort_keys=True) + "\n")
    counts = corpus.validate()
    print(f"wrote {len(corpus.records)} utterances to {args.out} " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_validate(args) -> int:
    corpus = load_corpus(args.corpus)
    counts = corpus.validate()
    n_aligned = sum(len(v) for v in corpus.alignments.values())
    print(f"ok: W={len(corpus.vocab)} " + " ".join(f"{k}={v}" for k, v in counts.items()) + f" intervals={n_aligned}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    corpus = load_corpus(cfg.corpus)
    corpus.validate()
    train_data = load_split(corpus, "train", cfg.features, with_targets=True)
    dev_data = load_split(corpus, "dev", cfg.features)
    run_dir = cfg.output_dir / f"seed_{seed}"
    model, report = train(
        train_data,
        dev_data,
        corpus.vocab,
        cfg.model_config(len(corpus.vocab)),
        replace(cfg.train, seed=seed),
        out_dir=run_dir,
        feature_config=cfg.features.to_dict(),
    )
    result = {"seed": seed, "best_epoch": report.best_epoch, "best_dev_f1": report.best_dev_f1}
    test = load_split(corpus, "test", cfg.features)
    if len(test) and len(corpus.alignments):
        metrics = evaluate_split(model, test, corpus, cfg.theta)
        write_text_atomic(run_dir / "metrics.json", metrics.to_json())
        write_text_atomic(run_dir / "metrics.csv", metrics.to_csv())
        result.update({name: getattr(metrics, name) for name in metrics.HEADLINE})
    return result


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seeds:
        cfg.seeds = args.seeds
    if args.out:
        cfg.output_dir = Path(args.out)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    if args.parallel and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=len(cfg.seeds)) as pool:
            results = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [_run_seed(cfg, s) for s in cfg.seeds]

    summary: dict = {"seeds": cfg.seeds, "theta": cfg.theta, "runs": results, "aggregate": {}}
    keys = ["best_dev_f1", "actual_localisation_precision", "oracle_localisation_accuracy", "detection_precision"]
    for key in keys:
        values = [r[key] for r in results if r.get(key) is not None]
        if values:
            agg = aggregate_values(values)
            summary["aggregate"][key] = {"mean": agg.mean, "std": agg.std, "n": agg.n}
            print(f"{key}: {agg}")
    write_text_atomic(cfg.output_dir / "aggregate.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _feature_config(meta_features: dict) -> FeatureConfig:
    return FeatureConfig(**meta_features) if meta_features else FeatureConfig()


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    corpus.validate()
    out = Path(args.out)
    header: dict = {"theta": args.theta, "split": args.split}

    if args.baseline == "random":
        test = _durations_only(corpus, args.split)
        grid = _empty_grid(test, corpus)
        durations = dict(zip(test.ids, map(float, test.durations)))
        reports = [evaluate(random_baseline(grid, durations, seed), args.theta, corpus.vocab) for seed in args.seeds]
        header.update({"baseline": "random", "seeds": args.seeds})
        report = reports[0]
        if len(reports) > 1:
            agg = aggregate_runs(reports)
            header["aggregate"] = {k: {"mean": v.mean, "std": v.std, "n": v.n} for k, v in agg.items()}
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --baseline is given")
        meta = read_checkpoint_meta(args.checkpoint)
        if meta.vocab_hash != corpus.vocab.hash():
            if not args.allow_transfer_vocab:
                raise UsageError(
                    "vocabulary hash mismatch between checkpoint and corpus "
                    "(pass --allow-transfer-vocab if only the target-language words differ)"
                )
            if meta.query_words != corpus.vocab.query_words:
                raise UsageError("checkpoint and corpus query vocabularies differ")
        model, meta = load_checkpoint(args.checkpoint)
        features = _feature_config(meta.feature_config)
        test = load_split(corpus, args.split, features)
        report = evaluate(split_pairs(model, test, corpus.alignments), args.theta, corpus.vocab)
        header.update({"checkpoint": checkpoint_id(args.checkpoint), "seed": meta.seed})

    body = {**header, **report.to_dict()}
    write_text_atomic(out / "metrics.json", json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    write_text_atomic(out / "metrics.csv", report.to_csv())
    print(f"actual localisation precision: {100 * report.actual_localisation_precision:.1f}%")
    print(f"oracle localisation accuracy:  {100 * report.oracle_localisation_accuracy:.1f}%")
    print(f"keyword detection precision:   {100 * report.detection_precision:.1f}%")
    return EXIT_OK


def _durations_only(corpus, split: str) -> SplitData:
    records = corpus.split(split)
    durations = np.array([corpus.duration(r) for r in records])
    return SplitData(records, [], durations, FeatureConfig().frame_hop_s)


def _empty_grid(data: SplitData, corpus):
    n, W = len(data), len(corpus.vocab)
    return build_pairs(data.ids, np.zeros((n, W)), np.zeros((n, W)), corpus.alignments)


# ---------------------------------------------------------------------------
# localise


def cmd_localise(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    words = meta.query_words
    if args.query not in words:
        raise UsageError(f"unknown query word {args.query!r}; vocabulary: {', '.join(words)}")
    kid = words.index(args.query)
    features = _feature_config(meta.feature_config)
    wave = read_audio(args.audio, features.sample_rate)
    duration = len(wave) / features.sample_rate
    seq = compute_mfcc(wave, features, utterance_id=Path(args.audio).stem)
    result = localise(seq, kid, model, args.theta, duration)
    print(f"query: {args.query}")
    print(f"detection score: {result.detection_score:.4f}")
    print(f"detected: {'yes' if result.detected else 'no'} (theta={args.theta})")
    print(f"predicted time: {result.predicted_time_s:.3f} s")
    if args.plot:
        out = Path(args.out)
        stem = f"{Path(args.audio).stem}_{args.query}"
        period = model.downsample_factor * features.frame_hop_s
        lines = ["frame,time_s,weight"] + [
            f"{i},{(i + 0.5) * period:.3f},{w:.8f}" for i, w in enumerate(result.attention.weights)
        ]
        write_text_atomic(out / f"{stem}_attention.csv", "\n".join(lines) + "\n")
        from .plotting import plot_attention

        png = out / f"{stem}_attention.png"
        tmp = atomic_target(png)
        plot_attention(
            tmp, wave, features.sample_rate, result.attention.weights, period, result.predicted_time_s,
            title=f"{args.query}: p={result.detection_score:.2f}",
        )
        os.replace(tmp, png)
        print(f"wrote {png} and {png.with_suffix('.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# cooccur


def cmd_cooccur(args) -> int:
    from .corpus import VOCAB_NAME, load_manifest, load_vocabulary

    root = Path(args.corpus)
    vocab = load_vocabulary(Path(args.vocab) if args.vocab else root / VOCAB_NAME)
    records = load_manifest(Path(args.manifest) if args.manifest else root / "manifest.jsonl")
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    usable = [r for r in records if r.caption_query_lang is not None and r.caption_target_lang is not None]
    skipped = len(records) - len(usable)
    if skipped:
        print(f"warning: skipped {skipped} utterances with a missing caption", file=sys.stderr)
    matrix = cooccurrence_kappa([r.caption_query_lang for r in usable], [r.caption_target_lang for r in usable], vocab)
    if not np.any(matrix.kappa):
        print("warning: no keyword co-occurrences found; matrix is all zero", file=sys.stderr)
    out = Path(args.out)
    write_text_atomic(out / "kappa_normalised.csv", matrix.to_csv(normalised=True))
    write_text_atomic(out / "kappa_raw.csv", matrix.to_csv(normalised=False))
    write_text_atomic(out / "kappa_long.csv", matrix.to_long_csv())
    if args.plot:
        from .plotting import plot_cooccurrence

        png = out / "kappa_heatmap.png"
        tmp = atomic_target(png)
        plot_cooccurrence(tmp, matrix.normalised, matrix.query_words, matrix.target_words)
        os.replace(tmp, png)
    diag = float(np.mean(np.diag(matrix.normalised))) if len(vocab) else 0.0
    print(f"utterances: {len(usable)} (skipped {skipped}); mean normalised diagonal: {diag:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgskws", description="Visually grounded cross-lingual keyword localisation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--spec", help="YAML file with SyntheticSpec fields")
    p.add_argument("--n-keywords", dest="n_keywords", type=int, help="vocabulary size W")
    p.add_argument("--n-train", dest="n_train", type=int, help="train utterances")
    p.add_argument("--n-dev", dest="n_dev", type=int, help="dev utterances")
    p.add_argument("--n-test", dest="n_test", type=int, help="test utterances")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a corpus directory for consistency")
    p.add_argument("corpus", help="corpus directory")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train one model per seed and aggregate")
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.add_argument("--seeds", type=int, nargs="+", help="override the seed list")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--parallel", action="store_true", help="run seeds as parallel processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (or the random baseline) on a split")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--theta", type=float, default=0.5, help="detection threshold (default 0.5)")
    p.add_argument("--split", default="test", choices=["train", "dev", "test"], help="split to score (default test)")
    p.add_argument("--out", required=True, help="output directory for metrics files")
    p.add_argument("--baseline", choices=["random"], help="score a baseline instead of a checkpoint")
    p.add_argument("--seed", dest="seeds", type=int, nargs="+", default=[0], help="baseline seed(s)")
    p.add_argument("--allow-transfer-vocab", action="store_true", help="accept a checkpoint whose target words differ")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localise", help="detect and locate one query word in one audio file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--audio", required=True, help="WAV file")
    p.add_argument("--query", required=True, help="query-language keyword")
    p.add_argument("--theta", type=float, default=0.5, help="detection threshold (default 0.5)")
    p.add_argument("--plot", action="store_true", help="write attention plot (PNG) and attention CSV")
    p.add_argument("--out", default=".", help="directory for --plot outputs")
    p.set_defaults(func=cmd_localise)

    p = sub.add_parser("cooccur", help="keyword co-occurrence (Cohen's kappa) across paired captions")
    p.add_argument("--corpus", required=True, help="corpus directory (manifest.jsonl, vocab.csv)")
    p.add_argument("--manifest", help="manifest path (default <corpus>/manifest.jsonl)")
    p.add_argument("--vocab", help="vocabulary path (default <corpus>/vocab.csv)")
    p.add_argument("--split", default="test", choices=["train", "dev", "test", "all"], help="utterances to use (default test)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true", help="also write a heatmap PNG")
    p.set_defaults(func=cmd_cooccur)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "theta", None) is not None and not 0 < args.theta < 1:
        parser.error("--theta must lie in (0, 1)")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ModelError, MetricsError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
