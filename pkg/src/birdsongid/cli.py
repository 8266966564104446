"""Command-line entry points: preprocess, train, predict, evaluate.

Every command takes `--config` (one structured file for all settings),
`--seed`, and `--threads`; specific flags override config-file paths.
Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import FULL_SPLIT, RunConfig, load_run_config
from .corpus import decode_audio, load_manifest, split_train_val
from .errors import BirdsongError, ConfigError, DataError
from .infer import (MAIN_ONLY, WITH_BACKGROUND, ensemble_average,
                    predict_recording, read_judgments, read_predictions,
                    recording_average_precisions, write_predictions)
from .metadata import compute_species_stats, metadata_vector
from .segmentation import format_mask_dump, separate_recording
from .train import (TrainingConfig, build_sources, build_training_pools,
                    load_checkpoint, run_training)

FAILURES_FILE = "failures.txt"
SUMMARY_FILE = "summary.txt"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2
    # for data errors and reports usage problems as 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="birdsongid",
                     description="Bird-song identification pipeline")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration file (YAML/JSON)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--threads", type=int,
                        help="worker threads for per-recording stages")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("preprocess", parents=[common],
                       help="decode recordings and cache sound/noise masks")
    p.add_argument("--manifest", help="recording manifest CSV")
    p.add_argument("--out-dir", help="directory for mask dumps")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common],
                       help="train a model from a preprocess cache")
    p.add_argument("--manifest")
    p.add_argument("--cache-dir", help="preprocess output directory")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log", help="epoch log CSV path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--train-split",
                   help=f"training fraction per species, or '{FULL_SPLIT}'")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common],
                       help="write per-recording class probabilities")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", action="append", default=None,
                   help="model checkpoint; repeat to ensemble")
    p.add_argument("--out", help="prediction CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score predictions against judgments with MAP")
    p.add_argument("--predictions")
    p.add_argument("--judgments")
    p.add_argument("--mode", choices=[MAIN_ONLY, WITH_BACKGROUND],
                   default=MAIN_ONLY)
    p.add_argument("--out", help="optional per-recording AP CSV")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    return cfg.override(seed=args.seed, threads=args.threads)


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing {what} (flag or config path)")
    return value


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(_require(args.manifest or cfg.path("manifest"),
                                      "manifest"))
    out_dir = Path(_require(args.out_dir or cfg.path("cache_dir"),
                            "output directory"))
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry):
        try:
            w = decode_audio(entry.audio_path, cfg.training.sample_rate)
            return entry.recording_id, format_mask_dump(
                separate_recording(w, cfg.segmentation)), None
        except DataError as exc:
            return entry.recording_id, None, str(exc)

    results = _parallel_map(work, manifest.entries, cfg.threads)
    failures = []
    processed = 0
    for rid, dump, error in results:
        if error is not None:
            failures.append(f"{rid}: {error}")
            continue
        (out_dir / f"{rid}.mask").write_text(dump)
        processed += 1
    (out_dir / FAILURES_FILE).write_text(
        "".join(line + "\n" for line in failures))
    summary = (f"recordings: {len(manifest.entries)}\n"
               f"processed: {processed}\n"
               f"failed: {len(failures)}\n")
    (out_dir / SUMMARY_FILE).write_text(summary)
    print(summary, end="")
    if failures:
        print(f"failures listed in {out_dir / FAILURES_FILE}", file=sys.stderr)
    return 2 if failures and processed == 0 else 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.train_split is not None:
        RunConfig.validate_split(args.train_split)
        cfg = cfg.override(train_split=args.train_split)
    training: TrainingConfig = dataclasses.replace(
        cfg.training, seed=cfg.seed,
        **({"epochs": args.epochs} if args.epochs is not None else {}))
    manifest = load_manifest(_require(args.manifest or cfg.path("manifest"),
                                      "manifest"))
    cache_dir = _require(args.cache_dir or cfg.path("cache_dir"),
                         "preprocess cache directory")
    checkpoint_dir = Path(_require(
        args.checkpoint_dir or cfg.path("checkpoint_dir"),
        "checkpoint directory"))
    log_path = args.log or cfg.path("log") or checkpoint_dir / "train_log.csv"
    net_cfg = cfg.network_config(manifest.num_species)
    resume = load_checkpoint(args.resume) if args.resume else None

    train_manifest, val_manifest = split_train_val(
        manifest, cfg.val_fraction, cfg.seed)
    sources = build_sources(manifest, cfg.segmentation, training.sample_rate,
                            cache_dir)
    tp = build_training_pools(train_manifest, sources)
    run = run_training(tp, net_cfg, training, cfg.augment,
                       checkpoint_dir=checkpoint_dir, log_path=log_path,
                       val_manifest=val_manifest if val_manifest.entries else None,
                       val_sources=sources, resume=resume)
    if run.history:
        last = run.history[-1]
        val = "" if last.val_map is None else f" val_map={last.val_map:.4f}"
        print(f"epoch {last.epoch}: mean_loss={last.mean_loss:.6f}{val}")
    print(f"checkpoints in {checkpoint_dir}, log at {log_path}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("predict needs at least one --checkpoint")
    manifest = load_manifest(_require(args.manifest or cfg.path("manifest"),
                                      "manifest"))
    out = _require(args.out or cfg.path("predictions"), "prediction output path")
    checkpoints = [load_checkpoint(p) for p in args.checkpoint]
    classes = {c.network.num_classes for c in checkpoints}
    if len(classes) != 1:
        raise DataError(f"checkpoints disagree on class count: {sorted(classes)}")
    stats = compute_species_stats(manifest)

    runs = []
    for ckpt in checkpoints:
        def work(item):
            i, entry = item
            w = decode_audio(entry.audio_path, ckpt.feature.sample_rate)
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, i)))
            meta = metadata_vector(entry.metadata, stats, rng)
            return predict_recording(w.samples, meta, ckpt.params,
                                     ckpt.network, ckpt.feature,
                                     entry.recording_id)
        runs.append(_parallel_map(work, list(enumerate(manifest.entries)),
                                  cfg.threads))
    predictions = ensemble_average(runs) if len(runs) > 1 else runs[0]
    write_predictions(out, predictions)
    print(f"wrote {len(predictions)} recording(s) x "
          f"{checkpoints[0].network.num_classes} classes to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    predictions = read_predictions(_require(
        args.predictions or cfg.path("predictions"), "predictions file"))
    judgments = read_judgments(_require(
        args.judgments or cfg.path("judgments"), "judgments file"))
    aps = recording_average_precisions(predictions, judgments, args.mode)
    value = float(np.mean([ap for _, ap in aps]))
    if args.out:
        lines = ["recording_id,average_precision"]
        lines += [f"{rid},{ap!r}" for rid, ap in aps]
        Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"MAP={value:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BirdsongError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
