"""Same-class discriminant: a CNN mapping a (2, L) pixel pair to the
probability that both pixels share a class.

The chain holds exactly 9 parameterized layers (7 conv + 2 dense) and 3
max-pool layers; every conv and dense layer except the final logits is
followed by ReLU. Kernels are narrow rectangles picked to fit the band
count; the first conv spans both rows of the pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DataError, NumericError, ShapeError
from .ingest import PairSets, SpectralCube

# logit index 1 is the "same class" outcome
SAME = 1

KERNEL_PRESETS = [
    (11, 7, 5, 3),
    (11, 7, 3, 1),
    (7, 5, 3, 1),
    (5, 3, 3, 1),
    (3, 3, 1, 1),
    (3, 1, 1, 1),
    (1, 1, 1, 1),
]


@dataclass
class DiscConfig:
    channels: tuple = (16, 32, 32, 64, 64, 128, 128)
    dense_units: int = 256
    kernels: tuple | None = None  # (k1..k4) widths; auto-fit when None
    batch_size: int = 512
    lr: float = 0.01
    lr_decay: float = 0.1
    decay_epochs: int = 50
    epochs: int = 8
    seed: int = 0


@dataclass
class DiscModel:
    chain: list[nm.LayerSpec]
    params: list[tuple[np.ndarray, np.ndarray]]
    bands: int
    config: DiscConfig
    seed: int
    epochs_trained: int


def _chain_for_kernels(kernels, channels, dense_units):
    k1, k2, k3, k4 = kernels
    c = channels
    return [
        nm.conv(2, k1, c[0]), nm.relu_layer(),
        nm.maxpool(),
        nm.conv(1, k2, c[1]), nm.relu_layer(),
        nm.conv(1, k2, c[2]), nm.relu_layer(),
        nm.maxpool(),
        nm.conv(1, k3, c[3]), nm.relu_layer(),
        nm.conv(1, k3, c[4]), nm.relu_layer(),
        nm.maxpool(),
        nm.conv(1, k4, c[5]), nm.relu_layer(),
        nm.conv(1, k4, c[6]), nm.relu_layer(),
        nm.dense(dense_units), nm.relu_layer(),
        nm.dense(2),
    ]


def build_disc_chain(bands: int, cfg: DiscConfig) -> list[nm.LayerSpec]:
    """Chain for a (2, bands, 1) pair tensor.

    With explicit kernels a misfit raises ShapeError; otherwise the widest
    preset that fits the band count is chosen.
    """
    if len(cfg.channels) != 7:
        raise ConfigError("discriminant needs exactly 7 conv channel counts")
    if cfg.kernels is not None:
        chain = _chain_for_kernels(cfg.kernels, cfg.channels, cfg.dense_units)
        nm.chain_shapes(chain, (2, bands, 1))
        return chain
    for kernels in KERNEL_PRESETS:
        chain = _chain_for_kernels(kernels, cfg.channels, cfg.dense_units)
        try:
            nm.chain_shapes(chain, (2, bands, 1))
        except ShapeError:
            continue
        return chain
    raise ConfigError(f"no kernel preset fits {bands} bands")


def assert_disc_structure(chain: list[nm.LayerSpec]) -> None:
    weights = nm.n_weight_layers(chain)
    pools = nm.n_pool_layers(chain)
    if weights != 9 or pools != 3:
        raise ConfigError(
            f"discriminant chain must have 9 weight layers and 3 pools, "
            f"got {weights} and {pools}"
        )
    last = chain[-1]
    if last.kind != "dense" or last.units != 2:
        raise ConfigError("discriminant chain must end in a 2-logit dense layer")


def pair_tensor(x: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Stack two spectra into a (2, L) pair, first pixel in row 0."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape or x.ndim != 1:
        raise ShapeError(f"pair spectra must be equal-length vectors, got {x.shape} and {x2.shape}")
    return np.stack([x, x2])


def init_disc(bands: int, cfg: DiscConfig) -> DiscModel:
    chain = build_disc_chain(bands, cfg)
    assert_disc_structure(chain)
    params = nm.init_params(chain, (2, bands, 1), cfg.seed)
    return DiscModel(chain, params, bands, replace(cfg), cfg.seed, 0)


def train_disc(pairs: PairSets, cube: SpectralCube, cfg: DiscConfig) -> DiscModel:
    """Binary cross-entropy SGD with per-epoch shuffling and epoch decay."""
    if pairs.positives.shape[0] == 0 or pairs.negatives.shape[0] == 0:
        raise DataError("both positive and negative pairs are required")
    model = init_disc(cube.bands, cfg)

    coords = np.concatenate([pairs.positives, pairs.negatives])
    y_all = np.concatenate([
        np.full(pairs.positives.shape[0], SAME, dtype=np.int64),
        np.full(pairs.negatives.shape[0], 1 - SAME, dtype=np.int64),
    ])
    n = coords.shape[0]
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_epochs)
        perm = rng.permutation(n)
        stop = n - cfg.batch_size + 1 if n > cfg.batch_size else 1
        for start in range(0, stop, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size] if n > cfg.batch_size else perm
            c = coords[idx]
            xa = cube.values[c[:, 0, 0], c[:, 0, 1]]
            xb = cube.values[c[:, 1, 0], c[:, 1, 1]]
            x = np.stack([xa, xb], axis=1)[..., None]  # (B, 2, L, 1)
            b = x.shape[0]

            logits, cache = nm.forward_chain(model.chain, model.params, x)
            losses, dlogits = nm.softmax_xent_batch(logits, y_all[idx])
            loss = losses.mean()
            if not np.isfinite(loss):
                raise NumericError(f"discriminant training diverged at epoch {epoch}")
            grads, _ = nm.backward(model.chain, model.params, cache, dlogits / b)
            try:
                nm.sgd_step(model.params, grads, lr)
            except NumericError as exc:
                raise NumericError(
                    f"discriminant training diverged at epoch {epoch}: {exc}") from exc
        model.epochs_trained = epoch + 1
    return model


def predict_same_batch(model: DiscModel, pairs: np.ndarray) -> np.ndarray:
    """Probabilities for a (B, 2, L) batch of pairs."""
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1] != 2 or pairs.shape[2] != model.bands:
        raise ShapeError(f"expected (B, 2, {model.bands}) pairs, got {pairs.shape}")
    logits, _ = nm.forward_chain(model.chain, model.params, pairs[..., None],
                                 want_cache=False)
    return nm.softmax(logits)[:, SAME]


def predict_same(model: DiscModel, pair: np.ndarray) -> float:
    """Probability that the two rows of a (2, L) pair share a class."""
    pair = np.asarray(pair, dtype=np.float64)
    if pair.shape != (2, model.bands):
        raise ShapeError(f"expected a (2, {model.bands}) pair, got {pair.shape}")
    return float(predict_same_batch(model, pair[None])[0])


def save_disc(model: DiscModel, path: str) -> None:
    cfg = model.config
    meta = {
        "net": "disc",
        "seed": str(model.seed),
        "epochs_trained": str(model.epochs_trained),
        "batch_size": str(cfg.batch_size),
        "lr": repr(cfg.lr),
        "lr_decay": repr(cfg.lr_decay),
        "decay_epochs": str(cfg.decay_epochs),
        "epochs": str(cfg.epochs),
    }
    nm.save_network(path, model.chain, model.params, (2, model.bands, 1), meta=meta)


def load_disc(path: str) -> DiscModel:
    chain, params, input_shape, meta, _ = nm.load_network(path)
    if meta.get("net") != "disc":
        raise DataError(f"{path} is not a discriminant checkpoint")
    assert_disc_structure(chain)
    convs = [s for s in chain if s.kind == "conv"]
    denses = [s for s in chain if s.kind == "dense"]
    cfg = DiscConfig(
        channels=tuple(s.channels for s in convs),
        dense_units=denses[0].units,
        kernels=(convs[0].kernel[1], convs[1].kernel[1],
                 convs[3].kernel[1], convs[5].kernel[1]),
        batch_size=int(meta["batch_size"]),
        lr=float(meta["lr"]),
        lr_decay=float(meta["lr_decay"]),
        decay_epochs=int(meta["decay_epochs"]),
        epochs=int(meta["epochs"]),
        seed=int(meta["seed"]),
    )
    return DiscModel(chain, params, input_shape[1], cfg,
                     int(meta["seed"]), int(meta["epochs_trained"]))
