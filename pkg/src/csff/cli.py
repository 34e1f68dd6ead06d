"""Command-line entry point.

Subcommands cover individual pipeline stages plus the full run and the two
hyperparameter sweeps. Stage commands reuse the content-hash checkpoint
cache, so invoking them in sequence never retrains an unchanged stage.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import annc, classify, discriminant as disc, fusion, ingest, pipeline, report
from .config import ExperimentConfig, emit_text, parse_config
from .errors import ConfigError, CsffError, DataError, FormatError, NumericError, ShapeError


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _seeds(args, cfg: ExperimentConfig) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.seeds


def _trained_models(cfg, cube, labels, seed):
    cache_dir = os.path.join(cfg.out_dir, "cache")
    os.makedirs(cache_dir, exist_ok=True)
    split = ingest.stratified_split(labels, cfg.per_class, seed)
    spectra, labels_vec = pipeline.augment_training_set(
        cube, labels, split, cfg.virtual_per_class, seed)
    amodel, apath = pipeline.train_annc_cached(
        spectra, labels_vec, labels.n_classes, replace(cfg.annc, seed=seed), cache_dir)
    pairs = ingest.pair_sets(split, seed)
    dmodel, dpath = pipeline.train_disc_cached(
        pairs, cube, replace(cfg.disc, seed=seed), cache_dir)
    return split, amodel, apath, dmodel, dpath


def cmd_gen_synthetic(args) -> int:
    cfg = _load_config(args)
    if cfg.synthetic is None:
        raise ConfigError("gen-synthetic needs a [synthetic] section")
    cube, labels = ingest.gen_synthetic(cfg.synthetic)
    cube_path = os.path.join(cfg.out_dir, "cube.hsc")
    labels_path = os.path.join(cfg.out_dir, "labels.hsl")
    ingest.save_cube(cube, cube_path)
    ingest.save_labels(labels, labels_path)
    print(f"wrote {cube_path} ({cube.height}x{cube.width}x{cube.bands}) and {labels_path}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    _, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        split = ingest.stratified_split(labels, cfg.per_class, seed)
        path = os.path.join(cfg.out_dir, f"split_seed{seed}.txt")
        ingest.save_split(split, labels, path)
        print(f"seed {seed}: {split.train_coords().shape[0]} train / "
              f"{split.test_coords.shape[0]} test -> {path}")
    return 0


def cmd_train_annc(args) -> int:
    cfg = _load_config(args)
    cube, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        _, amodel, apath, _, _ = _trained_models(cfg, cube, labels, seed)
        out = os.path.join(cfg.out_dir, f"annc_seed{seed}.ckpt")
        annc.save_annc(amodel, out)
        print(f"seed {seed}: spectral network -> {out}")
    return 0


def cmd_train_disc(args) -> int:
    cfg = _load_config(args)
    cube, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        _, _, _, dmodel, _ = _trained_models(cfg, cube, labels, seed)
        out = os.path.join(cfg.out_dir, f"disc_seed{seed}.ckpt")
        disc.save_disc(dmodel, out)
        print(f"seed {seed}: discriminant -> {out}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    cube, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        _, amodel, _, _, _ = _trained_models(cfg, cube, labels, seed)
        field = annc.extract_field(amodel, cube)
        out = os.path.join(cfg.out_dir, f"features_seed{seed}.fsf")
        fusion.save_fused(fusion.FusedField(
            field, np.ones(field.shape[:2], dtype=bool)), out)
        print(f"seed {seed}: spectral feature field -> {out}")
    return 0


def cmd_fuse(args) -> int:
    cfg = _load_config(args)
    cube, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        split, amodel, _, dmodel, _ = _trained_models(cfg, cube, labels, seed)
        field = annc.extract_field(amodel, cube)
        exclude = frozenset(map(tuple, split.train_coords()))
        fcfg = fusion.FusionConfig(cfg.fusion_size, cfg.fusion_threshold, exclude)
        fused = fusion.fuse_image(dmodel, cube, field, split.test_coords, fcfg,
                                  threads=args.threads)
        out = os.path.join(cfg.out_dir, f"fused_seed{seed}.fsf")
        fusion.save_fused(fused, out)
        print(f"seed {seed}: fused features -> {out}")
    return 0


def cmd_classify(args) -> int:
    cfg = _load_config(args)
    cube, labels = pipeline.prepare_scene(cfg)
    for seed in _seeds(args, cfg):
        result = pipeline.run_seed(cfg, seed, cube, labels, threads=args.threads)
        out = os.path.join(cfg.out_dir, f"predicted_seed{seed}.hsl")
        ingest.save_labels(ingest.LabelMap(result.predicted), out)
        print(f"seed {seed}: OA {100 * result.metrics.oa:.2f}% -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    _, labels = pipeline.prepare_scene(cfg)
    print("seed,oa,aa,kappa")
    for seed in _seeds(args, cfg):
        pred_path = os.path.join(cfg.out_dir, f"predicted_seed{seed}.hsl")
        if not os.path.exists(pred_path):
            raise DataError(f"no predictions for seed {seed}: {pred_path} "
                            "(run the classify subcommand first)")
        predicted = ingest.load_labels(pred_path)
        split = ingest.stratified_split(labels, cfg.per_class, seed)
        tc = split.test_coords
        preds = predicted.labels[tc[:, 0], tc[:, 1]]
        truth = labels.labels[tc[:, 0], tc[:, 1]]
        cm = classify.confusion_matrix(preds, truth, labels.n_classes)
        rep = classify.compute_metrics(cm)
        with open(os.path.join(cfg.out_dir, f"confusion_seed{seed}.csv"),
                  "w", encoding="utf-8") as fh:
            fh.write(report.confusion_csv(cm))
        report.render_confusion(cm, os.path.join(cfg.out_dir, f"confusion_seed{seed}.png"))
        print(f"{seed},{rep.oa:.6f},{rep.aa:.6f},{rep.kappa:.6f}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    rep = pipeline.run_pipeline(cfg, threads=args.threads, seeds=_seeds(args, cfg))
    written = report.emit_report(rep, cfg.out_dir)
    for failure in rep.failures:
        print(f"seed {failure.seed} failed at {failure.stage}: {failure.message}",
              file=sys.stderr)
    print(f"OA {100 * rep.mean['oa']:.2f} +/- {100 * rep.std['oa']:.2f} %  "
          f"AA {100 * rep.mean['aa']:.2f} +/- {100 * rep.std['aa']:.2f} %  "
          f"kappa {rep.mean['kappa']:.4f} +/- {rep.std['kappa']:.4f}")
    print(f"report: {len(written)} files in {cfg.out_dir}")
    return 0


def cmd_sweep_neighborhood(args) -> int:
    cfg = _load_config(args)
    cfg.seeds = _seeds(args, cfg)
    if args.sizes:
        sizes = [int(v) for v in args.sizes.replace(",", " ").split()]
    else:
        sizes = pipeline.default_size_schedule()
    rows, _ = pipeline.sweep_neighborhood(cfg, sizes, threads=args.threads)
    paths = report.emit_sweep(rows, "size", cfg.out_dir)
    for s, oa, aa in rows:
        print(f"size {s}: OA {100 * oa:.2f}%  AA {100 * aa:.2f}%")
    print("wrote " + ", ".join(paths))
    return 0


def cmd_sweep_threshold(args) -> int:
    cfg = _load_config(args)
    cfg.seeds = _seeds(args, cfg)
    schedule = None
    if args.thresholds:
        schedule = [float(v) for v in args.thresholds.replace(",", " ").split()]
    rows, _ = pipeline.sweep_threshold(cfg, schedule, threads=args.threads)
    paths = report.emit_sweep(rows, "threshold", cfg.out_dir)
    for t, oa, aa in rows:
        print(f"t {t:.6f}: OA {100 * oa:.2f}%  AA {100 * aa:.2f}%")
    print("wrote " + ", ".join(paths))
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "split": cmd_split,
    "train-annc": cmd_train_annc,
    "train-disc": cmd_train_disc,
    "extract": cmd_extract,
    "fuse": cmd_fuse,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "sweep-neighborhood": cmd_sweep_neighborhood,
    "sweep-threshold": cmd_sweep_threshold,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csff",
        description="Spectral-spatial hyperspectral classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config path")
        p.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the configured list")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="fusion worker threads (wall-clock only, never results)")
        if name == "sweep-neighborhood":
            p.add_argument("--sizes", default=None, help="odd sizes, e.g. 1,3,5")
        if name == "sweep-threshold":
            p.add_argument("--thresholds", default=None, help="values in [0,1]")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
