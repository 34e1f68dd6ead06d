"""Center and kNN classifiers over spectral features, confusion matrices,
and the overall/average accuracy and kappa metrics.

Classifiers are fit on training-pixel spectral features only; labels are
1..K everywhere. Tie rules are fixed: distance ties take the lowest sample
index, vote and argmin ties take the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class CenterSet:
    centers: np.ndarray  # (K, F), row i is class i+1

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray  # (K,), NaN for classes without test samples


def estimate_centers(features: np.ndarray, labels: np.ndarray,
                     n_classes: int) -> CenterSet:
    """Per-class arithmetic means of training features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    centers = np.zeros((n_classes, features.shape[1]))
    for cls in range(1, n_classes + 1):
        mask = labels == cls
        if not mask.any():
            raise DataError(f"class {cls} has no training features")
        centers[cls - 1] = features[mask].mean(axis=0)
    return CenterSet(centers)


def _center_distances(features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    d2 = np.empty((feats.shape[0], centers.shape[0]))
    for k in range(centers.shape[0]):
        diff = feats - centers[k]
        d2[:, k] = np.einsum("ij,ij->i", diff, diff)
    return d2


def classify_center(feature: np.ndarray, centers: CenterSet) -> int:
    """Label of the nearest class center (ties: lowest class index)."""
    d2 = _center_distances(feature, centers.centers)
    return int(d2[0].argmin()) + 1


def classify_center_batch(features: np.ndarray, centers: CenterSet) -> np.ndarray:
    d2 = _center_distances(features, centers.centers)
    return d2.argmin(axis=1).astype(np.int64) + 1


def classify_knn(feature: np.ndarray, train_features: np.ndarray,
                 train_labels: np.ndarray, k: int) -> int:
    return int(classify_knn_batch(np.atleast_2d(feature), train_features,
                                  train_labels, k)[0])


def classify_knn_batch(features: np.ndarray, train_features: np.ndarray,
                       train_labels: np.ndarray, k: int) -> np.ndarray:
    """Majority label among the k nearest training features per query."""
    train_features = np.asarray(train_features, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n = train_features.shape[0]
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds {n} training samples")
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n_classes = int(train_labels.max())
    out = np.empty(feats.shape[0], dtype=np.int64)
    for i, f in enumerate(feats):
        diff = train_features - f
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.argsort(d2, kind="stable")  # distance ties: lowest index
        votes = np.bincount(train_labels[order[:k]], minlength=n_classes + 1)
        out[i] = votes[1:].argmax() + 1  # vote ties: lowest class
    return out


def confusion_matrix(predictions: np.ndarray, truth: np.ndarray,
                     n_classes: int) -> np.ndarray:
    """K x K counts, rows true class, columns predicted."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise DataError("predictions and truth differ in length")
    for name, arr in (("prediction", predictions), ("truth", truth)):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise DataError(f"{name} labels must lie in 1..{n_classes}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth - 1, predictions - 1), 1)
    return cm


def compute_metrics(cm: np.ndarray) -> MetricsReport:
    """OA, AA (rows without samples excluded), and Cohen's kappa.

    kappa = (p_o - p_e) / (1 - p_e) with p_e from row/column marginals.
    When p_e reaches 1 the value is defined only for a perfectly diagonal
    matrix (kappa = 1); anything else raises.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or total <= 0:
        raise DataError("confusion matrix must be square with positive total")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    oa = np.trace(cm) / total
    with np.errstate(invalid="ignore"):
        per_class = np.where(rows > 0, np.diag(cm) / np.where(rows > 0, rows, 1), np.nan)
    aa = float(np.nanmean(per_class))
    pe = float((rows * cols).sum() / total ** 2)
    if pe >= 1.0:
        if oa == 1.0:
            kappa = 1.0
        else:
            raise DataError("kappa undefined: chance agreement is 1 with errors present")
    else:
        kappa = (oa - pe) / (1.0 - pe)
    return MetricsReport(float(oa), aa, float(kappa), per_class)
