"""Command-line interface.

Subcommands: synth-gen, extract, build-codebook, train, predict, evaluate,
ablate.  Configuration comes from a flat ``key = value`` file plus a few
common flag overrides; reports are line-delimited ``key<TAB>value`` records
with figures rendered alongside.

Exit codes: 0 success, 2 configuration/usage error, 3 data or file-format
error, 4 internal numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, format_config, load_config, normalize_streams
from .errors import ConfigError, DataError, TristreamError
from .pipeline import (
    fit_pipeline_models,
    generate_synthetic_dataset,
    load_models,
    classify_frames_dir,
    run_ablation,
    run_evaluate,
    run_extract,
    save_models,
)
from .report import (
    ablation_records,
    records_to_text,
    render_ablation_figure,
    render_report_figures,
    write_ablation_report,
    write_report,
)
from .video import SYNTH_CLASSES


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="flat key = value configuration file")
    sub.add_argument("--seed", type=int, help="override pipeline.master_seed")
    sub.add_argument("--streams", help="comma-separated subset of lt,st,gt")
    sub.add_argument("--codebook-size", type=int, help="override encoding.codebook_size")
    sub.add_argument("--svm-c", type=float, help="override svm.c")


def _load_cfg(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "streams", None):
        overrides["streams"] = normalize_streams(args.streams)
    if getattr(args, "codebook_size", None) is not None:
        overrides["codebook_size"] = args.codebook_size
    if getattr(args, "svm_c", None) is not None:
        overrides["svm_c"] = args.svm_c
    if getattr(args, "cache", None):
        overrides["cache_dir"] = str(args.cache)
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    if getattr(args, "train_per_class", None) is not None:
        from .config import SplitSpec

        overrides["split"] = SplitSpec(train_per_class=args.train_per_class)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_synth_gen(args) -> int:
    cfg = _load_cfg(args)
    entries = generate_synthetic_dataset(
        args.out, cfg, classes=SYNTH_CLASSES, videos_per_class=args.videos_per_class
    )
    print(f"wrote {len(entries)} synthetic videos under {args.out}")
    return 0


def _cmd_extract(args) -> int:
    cfg = _load_cfg(args)
    result = run_extract(args.data, cfg)
    print(
        f"extracted {result.computed} descriptor file(s), "
        f"{result.cache_hits} cache hit(s), {len(result.excluded)} video(s) excluded"
    )
    for vid in result.excluded:
        print(f"warning: {vid}: no trajectories survived", file=sys.stderr)
    return 0


def _train_ids(args, extract) -> list[str]:
    usable = [e.video_id for e in extract.entries if e.video_id not in extract.excluded]
    if getattr(args, "train_list", None):
        listed = [
            line.strip()
            for line in Path(args.train_list).read_text().splitlines()
            if line.strip()
        ]
        unknown = sorted(set(listed) - set(usable))
        if unknown:
            raise DataError(f"train list names unknown or excluded videos: {unknown}")
        return listed
    return usable


def _cmd_build_codebook(args) -> int:
    cfg = _load_cfg(args)
    extract = run_extract(args.data, cfg)
    models = fit_pipeline_models(
        extract, _train_ids(args, extract), cfg, cfg.streams, cfg.master_seed
    )
    save_models(models, cfg, args.model)
    print(f"codebook of {models.codebook.size} centers written under {args.model}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    extract = run_extract(args.data, cfg)
    models = fit_pipeline_models(
        extract, _train_ids(args, extract), cfg, cfg.streams, cfg.master_seed
    )
    save_models(models, cfg, args.model)
    print(f"trained models for classes {','.join(models.svm.labels)} under {args.model}")
    return 0


def _cmd_predict(args) -> int:
    models, cfg = load_models(args.model)
    label, scores = classify_frames_dir(args.video, models, cfg)
    print(f"label\t{label}")
    for cls, score in zip(models.svm.labels, scores):
        print(f"score_{cls}\t{float(score)!r}")
    return 0


def _report_paths(args) -> tuple[Path, Path, str]:
    report_path = Path(args.report)
    return report_path, report_path.parent, report_path.stem


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    report = run_evaluate(args.data, cfg)
    report_path, fig_dir, stem = _report_paths(args)
    write_report(report_path, report)
    outputs = [report_path]
    if not args.no_figures:
        outputs += render_report_figures(report, fig_dir, stem)
    print(f"mean accuracy {report.mean_accuracy:.4f} over {report.repeats} repeat(s)")
    for path in outputs:
        print(f"wrote {path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    rows = run_ablation(args.data, cfg)
    report_path, fig_dir, stem = _report_paths(args)
    write_ablation_report(report_path, rows)
    outputs = [report_path]
    if not args.no_figures:
        outputs.append(render_ablation_figure(rows, fig_dir, stem))
    print(records_to_text(ablation_records(rows)), end="")
    for path in outputs:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tristream",
        description="Three-stream trajectory-pooled video classification pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth-gen", help="render the synthetic benchmark dataset")
    p.add_argument("--out", type=Path, required=True, help="dataset root to create")
    p.add_argument("--videos-per-class", type=int, default=None)
    _common_flags(p)
    p.set_defaults(func=_cmd_synth_gen)

    p = subs.add_parser("extract", help="extract per-video descriptors into the cache")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cache", type=Path, help="descriptor cache directory")
    _common_flags(p)
    p.set_defaults(func=_cmd_extract)

    p = subs.add_parser("build-codebook", help="fit stream PCAs and the codebook")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cache", type=Path)
    p.add_argument("--model", type=Path, required=True, help="output model directory")
    p.add_argument("--train-list", type=Path, help="file of video ids to fit on")
    _common_flags(p)
    p.set_defaults(func=_cmd_build_codebook)

    p = subs.add_parser("train", help="fit all models (PCA, codebook, whitening, SVM)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cache", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--train-list", type=Path)
    _common_flags(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("predict", help="classify one video directory of frames")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--video", type=Path, required=True, help="directory of frame_*.pgm files")
    p.set_defaults(func=_cmd_predict)

    p = subs.add_parser("evaluate", help="repeated-split evaluation with a report")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cache", type=Path)
    p.add_argument("--report", type=Path, required=True, help="report file to write")
    p.add_argument("--repeats", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--no-figures", action="store_true")
    _common_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser("ablate", help="per-stream-subset evaluation on shared splits")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--cache", type=Path)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--repeats", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--no-figures", action="store_true")
    _common_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = subs.add_parser("show-config", help="print the effective configuration")
    _common_flags(p)
    p.set_defaults(func=lambda a: (print(format_config(_load_cfg(a)), end=""), 0)[1])
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except TristreamError as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
