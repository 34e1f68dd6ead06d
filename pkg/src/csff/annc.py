"""Spectral feature network: four dense layers under joint softmax + center
supervision. The third layer's activations are the spectral features; class
centers track per-class batch means of those activations during training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .errors import DataError, NumericError, ShapeError
from .ingest import SpectralCube


@dataclass
class AnncConfig:
    hidden: tuple[int, int, int] = (256, 128, 64)  # (w1, w2, feature dim)
    center_weight: float = 0.01
    batch_size: int = 512
    lr: float = 0.01
    lr_decay: float = 0.3162
    decay_steps: int = 20000
    steps: int = 2000
    seed: int = 0


@dataclass
class AnncModel:
    chain: list[nm.LayerSpec]
    params: list[tuple[np.ndarray, np.ndarray]]
    centers: np.ndarray  # (K, F)
    bands: int
    n_classes: int
    config: AnncConfig
    seed: int

    @property
    def feature_dim(self) -> int:
        return self.centers.shape[1]

    def feature_chain(self):
        return self.chain[:6], self.params[:3]

    def head_chain(self):
        return self.chain[6:], self.params[3:]


def build_annc_chain(bands: int, hidden: tuple[int, int, int], n_classes: int):
    w1, w2, f = hidden
    return [
        nm.dense(w1), nm.relu_layer(),
        nm.dense(w2), nm.relu_layer(),
        nm.dense(f), nm.relu_layer(),
        nm.dense(n_classes),
    ]


def center_loss(feature: np.ndarray, center: np.ndarray) -> float:
    """Half squared Euclidean distance between a feature and its class center."""
    feature = np.asarray(feature, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if feature.shape != center.shape:
        raise ShapeError(f"feature {feature.shape} vs center {center.shape}")
    d = feature - center
    return float(0.5 * np.dot(d, d))


def joint_loss(logits, label, feature, centers, lam) -> float:
    xent, _ = nm.softmax_xent(logits, label)
    return xent + lam * center_loss(feature, centers[label])


def update_centers(centers: np.ndarray, features: np.ndarray,
                   class_idx: np.ndarray) -> np.ndarray:
    """Class centers become per-class batch means; absent classes keep theirs."""
    out = centers.copy()
    for cls in np.unique(class_idx):
        out[cls] = features[class_idx == cls].mean(axis=0)
    return out


def _batch_stream(n: int, batch: int, rng: np.random.Generator):
    """Endless deterministic batches: shuffle each pass, drop a partial tail."""
    if n <= batch:
        while True:
            yield rng.permutation(n)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            yield perm[start:start + batch]


def train_annc(spectra: np.ndarray, labels: np.ndarray, n_classes: int,
               cfg: AnncConfig) -> AnncModel:
    """SGD over the joint loss with the step-decay schedule.

    spectra is (N, L); labels take values 1..K. Deterministic per cfg.seed.
    """
    spectra = np.asarray(spectra, dtype=np.float64)
    labels = np.asarray(labels)
    if spectra.ndim != 2 or spectra.shape[0] != labels.shape[0]:
        raise ShapeError("spectra must be (N, L) with one label per row")
    if labels.min() < 1 or labels.max() > n_classes:
        raise DataError("labels must lie in 1..n_classes")
    y_all = labels.astype(np.int64) - 1

    bands = spectra.shape[1]
    chain = build_annc_chain(bands, cfg.hidden, n_classes)
    params = nm.init_params(chain, (bands,), cfg.seed)
    centers = np.zeros((n_classes, cfg.hidden[2]))
    feat_chain, feat_params = chain[:6], params[:3]
    head_chain, head_params = chain[6:], params[3:]

    rng = np.random.default_rng(cfg.seed)
    stream = _batch_stream(spectra.shape[0], cfg.batch_size, rng)
    lam = cfg.center_weight
    for step in range(cfg.steps):
        idx = next(stream)
        x, y = spectra[idx], y_all[idx]
        b = x.shape[0]

        feat, fcache = nm.forward_chain(feat_chain, feat_params, x)
        logits, hcache = nm.forward_chain(head_chain, head_params, feat)
        losses, dlogits = nm.softmax_xent_batch(logits, y)
        diffs = feat - centers[y]
        loss = losses.mean() + lam * 0.5 * np.einsum("ij,ij->i", diffs, diffs).mean()
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at step {step}")

        hgrads, dfeat = nm.backward(head_chain, head_params, hcache, dlogits / b)
        dfeat = dfeat + lam * diffs / b
        fgrads, _ = nm.backward(feat_chain, feat_params, fcache, dfeat)

        lr = cfg.lr * cfg.lr_decay ** (step // cfg.decay_steps)
        try:
            nm.sgd_step(feat_params, fgrads, lr)
            nm.sgd_step(head_params, hgrads, lr)
        except NumericError as exc:
            raise NumericError(f"training diverged at step {step}: {exc}") from exc
        centers = update_centers(centers, feat, y)

    return AnncModel(chain, params, centers, bands, n_classes, replace(cfg), cfg.seed)


def extract_feature(model: AnncModel, spectrum: np.ndarray) -> np.ndarray:
    """Spectral feature of one pixel: the first three layers' composition."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape != (model.bands,):
        raise ShapeError(f"spectrum length {spectrum.shape} != bands {model.bands}")
    chain, params = model.feature_chain()
    out, _ = nm.forward_chain(chain, params, spectrum, want_cache=False)
    return out


def extract_features(model: AnncModel, spectra: np.ndarray) -> np.ndarray:
    """Batched feature extraction for (N, L) spectra."""
    chain, params = model.feature_chain()
    out, _ = nm.forward_chain(chain, params, np.asarray(spectra, dtype=np.float64),
                              want_cache=False)
    return out


def extract_field(model: AnncModel, cube: SpectralCube) -> np.ndarray:
    """Apply the feature extractor to every pixel; returns (H, W, F)."""
    h, w, l = cube.values.shape
    if l != model.bands:
        raise ShapeError(f"cube has {l} bands, model expects {model.bands}")
    flat = cube.values.reshape(h * w, l)
    feats = extract_features(model, flat)
    return feats.reshape(h, w, model.feature_dim)


def logits_for(model: AnncModel, spectra: np.ndarray) -> np.ndarray:
    feats = extract_features(model, spectra)
    chain, params = model.head_chain()
    out, _ = nm.forward_chain(chain, params, feats, want_cache=False)
    return out


def save_annc(model: AnncModel, path: str) -> None:
    cfg = model.config
    meta = {
        "net": "annc",
        "seed": str(model.seed),
        "classes": str(model.n_classes),
        "hidden": ",".join(str(v) for v in cfg.hidden),
        "center_weight": repr(cfg.center_weight),
        "batch_size": str(cfg.batch_size),
        "lr": repr(cfg.lr),
        "lr_decay": repr(cfg.lr_decay),
        "decay_steps": str(cfg.decay_steps),
        "steps": str(cfg.steps),
    }
    nm.save_network(path, model.chain, model.params, (model.bands,),
                    meta=meta, centers=model.centers)


def load_annc(path: str) -> AnncModel:
    chain, params, input_shape, meta, centers = nm.load_network(path)
    if meta.get("net") != "annc" or centers is None:
        raise DataError(f"{path} is not a spectral-network checkpoint")
    cfg = AnncConfig(
        hidden=tuple(int(v) for v in meta["hidden"].split(",")),
        center_weight=float(meta["center_weight"]),
        batch_size=int(meta["batch_size"]),
        lr=float(meta["lr"]),
        lr_decay=float(meta["lr_decay"]),
        decay_steps=int(meta["decay_steps"]),
        steps=int(meta["steps"]),
        seed=int(meta["seed"]),
    )
    return AnncModel(chain, params, centers, input_shape[0],
                     int(meta["classes"]), cfg, int(meta["seed"]))
