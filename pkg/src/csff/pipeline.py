"""End-to-end experiment runner: per-seed pipeline stages, content-hash
checkpoint caching, multi-seed aggregation, and the two hyperparameter
sweeps. Sweeps train once per seed and only re-run fusion and
classification, so model checkpoints are identical across rows.
"""

from __future__ import annotations

import hashlib
import math
import os
import shutil
import time
from dataclasses import dataclass, replace

import numpy as np

from . import annc, classify, discriminant as disc, fusion, ingest
from .config import ExperimentConfig, emit_text
from .errors import CsffError, DataError
from .ingest import LabelMap, SpectralCube


@dataclass
class SeedResult:
    seed: int
    metrics: classify.MetricsReport
    confusion: np.ndarray
    predicted: np.ndarray          # (H, W) labels: test predictions, train truth
    timings: dict[str, float]
    annc_path: str
    disc_path: str
    fused_path: str


@dataclass
class SeedFailure:
    seed: int
    stage: str
    message: str


@dataclass
class RunReport:
    results: list[SeedResult]
    failures: list[SeedFailure]
    mean: dict[str, float]
    std: dict[str, float]
    config_text: str
    stage_seconds: dict[str, float]


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part).tobytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode())
        h.update(b"|")
    return h.hexdigest()[:24]


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def prepare_scene(cfg: ExperimentConfig) -> tuple[SpectralCube, LabelMap]:
    """Load or generate the scene and z-score normalize it per band."""
    if cfg.synthetic is not None:
        cube, labels = ingest.gen_synthetic(cfg.synthetic)
    else:
        cube = ingest.load_cube(cfg.cube_path)
        labels = ingest.load_labels(cfg.labels_path)
        if labels.labels.shape != cube.values.shape[:2]:
            raise DataError("cube and label map disagree on image extent")
    return ingest.zscore_normalize(cube), labels


def augment_training_set(cube: SpectralCube, labels: LabelMap, split: ingest.DataSplit,
                         target_per_class: int, seed: int):
    """Virtual-sample each class up to target_per_class; returns (spectra, labels)."""
    xs, ys = [], []
    for cls in sorted(split.train_by_class):
        pixels = ingest.spectra_at(cube, split.train_by_class[cls])
        grown = ingest.virtual_samples(pixels, target_per_class, _derived_seed(seed, cls))
        xs.append(grown)
        ys.append(np.full(grown.shape[0], cls, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def train_annc_cached(spectra, labels_vec, n_classes, acfg, cache_dir) -> tuple[annc.AnncModel, str]:
    key = _digest("annc", spectra, labels_vec, n_classes, acfg)
    path = os.path.join(cache_dir, f"annc-{key}.ckpt")
    if os.path.exists(path):
        return annc.load_annc(path), path
    model = annc.train_annc(spectra, labels_vec, n_classes, acfg)
    annc.save_annc(model, path)
    return model, path


def train_disc_cached(pairs, cube, dcfg, cache_dir) -> tuple[disc.DiscModel, str]:
    key = _digest("disc", cube.values, pairs.positives, pairs.negatives, dcfg)
    path = os.path.join(cache_dir, f"disc-{key}.ckpt")
    if os.path.exists(path):
        return disc.load_disc(path), path
    model = disc.train_disc(pairs, cube, dcfg)
    disc.save_disc(model, path)
    return model, path


def classify_features(amodel: annc.AnncModel, cube: SpectralCube,
                      split: ingest.DataSplit, labels: LabelMap,
                      fused: fusion.FusedField, classifier: str) -> np.ndarray:
    """Predict test-pixel labels from fused features.

    Classifiers are fit on plain spectral features of the training pixels
    (never on fused features).
    """
    train_coords = split.train_coords()
    train_feats = annc.extract_features(amodel, ingest.spectra_at(cube, train_coords))
    train_labels = labels.labels[train_coords[:, 0], train_coords[:, 1]]
    test_feats = fused.values[split.test_coords[:, 0], split.test_coords[:, 1]]
    if classifier == "center":
        centers = classify.estimate_centers(train_feats, train_labels, labels.n_classes)
        return classify.classify_center_batch(test_feats, centers)
    k = int(classifier.split(":")[1])
    return classify.classify_knn_batch(test_feats, train_feats, train_labels, k)


def run_seed(cfg: ExperimentConfig, seed: int, cube: SpectralCube, labels: LabelMap,
             threads: int = 1) -> SeedResult:
    """All pipeline stages for one seed, in order; returns metrics and artifacts."""
    cache_dir = os.path.join(cfg.out_dir, "cache")
    os.makedirs(cache_dir, exist_ok=True)
    timings: dict[str, float] = {}

    def timed(stage):
        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc_val, tb):
                timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - self.t0
                if exc_val is not None and not hasattr(exc_val, "stage"):
                    exc_val.stage = stage  # tag diagnostics with the failing stage
                return False
        return _T()

    with timed("split"):
        split = ingest.stratified_split(labels, cfg.per_class, seed)

    with timed("augment"):
        spectra, labels_vec = augment_training_set(
            cube, labels, split, cfg.virtual_per_class, seed)
    with timed("train-annc"):
        amodel, cached = train_annc_cached(
            spectra, labels_vec, labels.n_classes,
            replace(cfg.annc, seed=seed), cache_dir)
        annc_path = os.path.join(cfg.out_dir, f"annc_seed{seed}.ckpt")
        shutil.copyfile(cached, annc_path)
    with timed("train-disc"):
        pairs = ingest.pair_sets(split, seed)
        dmodel, cached = train_disc_cached(
            pairs, cube, replace(cfg.disc, seed=seed), cache_dir)
        disc_path = os.path.join(cfg.out_dir, f"disc_seed{seed}.ckpt")
        shutil.copyfile(cached, disc_path)

    with timed("extract"):
        feature_field = annc.extract_field(amodel, cube)

    with timed("fuse"):
        exclude = frozenset(map(tuple, split.train_coords()))
        fcfg = fusion.FusionConfig(cfg.fusion_size, cfg.fusion_threshold, exclude)
        fused = fusion.fuse_image(dmodel, cube, feature_field, split.test_coords,
                                  fcfg, threads=threads)
        fused_path = os.path.join(cfg.out_dir, f"fused_seed{seed}.fsf")
        fusion.save_fused(fused, fused_path)

    with timed("classify"):
        predictions = classify_features(amodel, cube, split, labels, fused, cfg.classifier)

    with timed("evaluate"):
        truth = labels.labels[split.test_coords[:, 0], split.test_coords[:, 1]]
        cm = classify.confusion_matrix(predictions, truth, labels.n_classes)
        metrics = classify.compute_metrics(cm)
        predicted = np.zeros_like(labels.labels)
        tr = split.train_coords()
        predicted[tr[:, 0], tr[:, 1]] = labels.labels[tr[:, 0], tr[:, 1]]
        predicted[split.test_coords[:, 0], split.test_coords[:, 1]] = predictions

    return SeedResult(seed, metrics, cm, predicted, timings,
                      annc_path, disc_path, fused_path)


def _aggregate(results: list[SeedResult]) -> tuple[dict, dict]:
    names = ("oa", "aa", "kappa")
    mean, std = {}, {}
    for name in names:
        vals = np.array([getattr(r.metrics, name) for r in results])
        mean[name] = float(vals.mean())
        std[name] = float(vals.std())
    return mean, std


def run_pipeline(cfg: ExperimentConfig, threads: int = 1,
                 seeds: tuple[int, ...] | None = None) -> RunReport:
    """Run every seed; a failing seed is recorded and the rest continue."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    cube, labels = prepare_scene(cfg)
    normalize_s = time.perf_counter() - t0

    results: list[SeedResult] = []
    failures: list[SeedFailure] = []
    for seed in (seeds if seeds is not None else cfg.seeds):
        try:
            results.append(run_seed(cfg, seed, cube, labels, threads=threads))
        except (CsffError, ValueError) as exc:
            stage = getattr(exc, "stage", "pipeline")
            failures.append(SeedFailure(seed, stage, str(exc)))
    if not results:
        raise DataError(
            "every seed failed; first failure: "
            f"seed {failures[0].seed}: {failures[0].message}")

    mean, std = _aggregate(results)
    stage_seconds = {"normalize": normalize_s}
    for r in results:
        for name, secs in r.timings.items():
            stage_seconds[name] = stage_seconds.get(name, 0.0) + secs
    return RunReport(results, failures, mean, std, emit_text(cfg), stage_seconds)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def default_threshold_schedule() -> list[float]:
    """t=0, the logistic lattice 1/(1+e^(-0.7x)) for integer x in [-9, 11], t=1."""
    return [0.0] + [1.0 / (1.0 + math.exp(-0.7 * x)) for x in range(-9, 12)] + [1.0]


def default_size_schedule(limit: int = 19) -> list[int]:
    return list(range(1, limit + 1, 2))


def _sweep(cfg: ExperimentConfig, threads: int, fuse_params: list[tuple[int, float]]):
    """Shared sweep driver: train once per seed, re-fuse per parameter row."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    cube, labels = prepare_scene(cfg)
    per_seed = []
    for seed in cfg.seeds:
        split = ingest.stratified_split(labels, cfg.per_class, seed)
        cache_dir = os.path.join(cfg.out_dir, "cache")
        os.makedirs(cache_dir, exist_ok=True)
        spectra, labels_vec = augment_training_set(cube, labels, split,
                                                   cfg.virtual_per_class, seed)
        amodel, annc_path = train_annc_cached(spectra, labels_vec, labels.n_classes,
                                              replace(cfg.annc, seed=seed), cache_dir)
        pairs = ingest.pair_sets(split, seed)
        dmodel, disc_path = train_disc_cached(pairs, cube,
                                              replace(cfg.disc, seed=seed), cache_dir)
        field = annc.extract_field(amodel, cube)
        per_seed.append((seed, split, amodel, dmodel, field, annc_path, disc_path))

    rows = []
    for size, threshold in fuse_params:
        oas, aas = [], []
        for seed, split, amodel, dmodel, feature_field, _, _ in per_seed:
            exclude = frozenset(map(tuple, split.train_coords()))
            fcfg = fusion.FusionConfig(size, threshold, exclude)
            fused = fusion.fuse_image(dmodel, cube, feature_field, split.test_coords,
                                      fcfg, threads=threads)
            preds = classify_features(amodel, cube, split, labels, fused, cfg.classifier)
            truth = labels.labels[split.test_coords[:, 0], split.test_coords[:, 1]]
            rep = classify.compute_metrics(
                classify.confusion_matrix(preds, truth, labels.n_classes))
            oas.append(rep.oa)
            aas.append(rep.aa)
        rows.append((float(np.mean(oas)), float(np.mean(aas))))
    paths = [(p[5], p[6]) for p in per_seed]
    return rows, paths


def sweep_neighborhood(cfg: ExperimentConfig, sizes: list[int],
                       threads: int = 1):
    """OA/AA per neighborhood size at the configured threshold."""
    for s in sizes:
        if s < 1 or s % 2 == 0:
            raise ValueError(f"neighborhood sizes must be odd, got {s}")
    rows, paths = _sweep(cfg, threads, [(s, cfg.fusion_threshold) for s in sizes])
    return [(s, oa, aa) for s, (oa, aa) in zip(sizes, rows)], paths


def sweep_threshold(cfg: ExperimentConfig, schedule: list[float] | None = None,
                    threads: int = 1):
    """OA/AA per threshold at the configured neighborhood size."""
    ts = default_threshold_schedule() if schedule is None else list(schedule)
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"thresholds must lie in [0, 1], got {t}")
    rows, paths = _sweep(cfg, threads, [(cfg.fusion_size, t) for t in ts])
    return [(t, oa, aa) for t, (oa, aa) in zip(ts, rows)], paths
