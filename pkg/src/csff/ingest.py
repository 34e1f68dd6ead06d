"""Dataset I/O, normalization, splitting, augmentation, and synthetic scenes.

File formats (all little-endian):
  cube  "HSC1": u32 H, W, L, then H*W*L float32, row-major with bands innermost
  label "HSL1": u32 H, W, then H*W u16 (0 = background)
  split: text, one "class,row,col,role" record per line (role train|test)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

CUBE_MAGIC = b"HSC1"
LABEL_MAGIC = b"HSL1"


@dataclass
class SpectralCube:
    """H x W x L reflectance grid. Values are float64 in memory."""

    values: np.ndarray  # (H, W, L)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def spectrum(self, row: int, col: int) -> np.ndarray:
        return self.values[row, col]


@dataclass
class LabelMap:
    """H x W integer labels, 0 = background, classes 1..K."""

    labels: np.ndarray  # (H, W) int

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())

    def class_coords(self, cls: int) -> np.ndarray:
        rows, cols = np.nonzero(self.labels == cls)
        return np.column_stack([rows, cols])


@dataclass
class DataSplit:
    train_by_class: dict[int, np.ndarray]  # class -> (n, 2) coords
    test_coords: np.ndarray                # (m, 2) coords
    seed: int

    def train_coords(self) -> np.ndarray:
        parts = [self.train_by_class[c] for c in sorted(self.train_by_class)]
        return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.int64)


@dataclass
class PairSets:
    positives: np.ndarray  # (n+, 2, 2) coordinate pairs
    negatives: np.ndarray  # (n-, 2, 2)
    seed: int


@dataclass
class SyntheticSceneConfig:
    height: int = 64
    width: int = 64
    bands: int = 32
    n_classes: int = 5
    regions: int = 5
    noise_std: float = 1.0
    smoothness: int = 8  # moving-average window over bands
    seed: int = 7

    def validate(self) -> None:
        if self.n_classes > self.regions:
            raise DataError(f"need at least {self.n_classes} regions for {self.n_classes} classes")
        if self.noise_std < 0:
            raise DataError("noise_std must be nonnegative")
        if min(self.height, self.width, self.bands, self.n_classes) < 1:
            raise DataError("scene dimensions must be positive")


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def save_cube(cube: SpectralCube, path: str) -> None:
    h, w, l = cube.values.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", h, w, l))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def load_cube(path: str) -> SpectralCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CUBE_MAGIC:
        raise FormatError(f"bad cube magic in {path}")
    if len(blob) < 16:
        raise FormatError(f"truncated cube header in {path}")
    h, w, l = struct.unpack_from("<III", blob, 4)
    expected = 16 + h * w * l * 4
    if len(blob) != expected:
        raise FormatError(f"cube payload is {len(blob) - 16} bytes, expected {expected - 16}")
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, l).astype(np.float64)
    if not np.isfinite(values).all():
        raise FormatError(f"non-finite values in cube {path}")
    return SpectralCube(values)


def save_labels(labels: LabelMap, path: str) -> None:
    h, w = labels.labels.shape
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(labels.labels, dtype="<u2").tobytes())


def load_labels(path: str) -> LabelMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != LABEL_MAGIC:
        raise FormatError(f"bad label magic in {path}")
    if len(blob) < 12:
        raise FormatError(f"truncated label header in {path}")
    h, w = struct.unpack_from("<II", blob, 4)
    expected = 12 + h * w * 2
    if len(blob) != expected:
        raise FormatError(f"label payload is {len(blob) - 12} bytes, expected {expected - 12}")
    labels = np.frombuffer(blob, dtype="<u2", offset=12).reshape(h, w).astype(np.int64)
    return LabelMap(labels)


def save_split(split: DataSplit, labels: LabelMap, path: str) -> None:
    lines = [f"# seed={split.seed}"]
    for cls in sorted(split.train_by_class):
        for r, c in split.train_by_class[cls]:
            lines.append(f"{cls},{r},{c},train")
    for r, c in split.test_coords:
        lines.append(f"{labels.labels[r, c]},{r},{c},test")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_split(path: str) -> DataSplit:
    train: dict[int, list] = {}
    test = []
    seed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "seed=" in line:
                    seed = int(line.split("seed=")[1])
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FormatError(f"bad split record {line!r} in {path}")
            cls, r, c, role = int(parts[0]), int(parts[1]), int(parts[2]), parts[3]
            if role == "train":
                train.setdefault(cls, []).append((r, c))
            elif role == "test":
                test.append((r, c))
            else:
                raise FormatError(f"unknown role {role!r} in {path}")
    train_arr = {c: np.array(v, dtype=np.int64) for c, v in train.items()}
    test_arr = np.array(test, dtype=np.int64) if test else np.empty((0, 2), dtype=np.int64)
    return DataSplit(train_arr, test_arr, seed)


# ---------------------------------------------------------------------------
# preprocessing and splitting
# ---------------------------------------------------------------------------

def zscore_normalize(cube: SpectralCube) -> SpectralCube:
    """Per band: subtract the mean and divide by the population std.

    Bands with std below 1e-12 become all zeros.
    """
    vals = cube.values
    mean = vals.mean(axis=(0, 1))
    std = vals.std(axis=(0, 1))
    out = np.zeros_like(vals)
    ok = std >= 1e-12
    out[:, :, ok] = (vals[:, :, ok] - mean[ok]) / std[ok]
    return SpectralCube(out)


def stratified_split(labels: LabelMap, per_class: int, seed: int) -> DataSplit:
    """Draw per_class training pixels uniformly without replacement per class.

    Every remaining labeled pixel becomes a test pixel. Raises DataError
    naming the first class with fewer than per_class pixels.
    """
    rng = np.random.default_rng(seed)
    k = labels.n_classes
    if k < 1:
        raise DataError("label map has no foreground classes")
    train: dict[int, np.ndarray] = {}
    test_mask = labels.labels > 0
    for cls in range(1, k + 1):
        coords = labels.class_coords(cls)
        if coords.shape[0] < per_class:
            raise DataError(
                f"class {cls} has {coords.shape[0]} pixels, fewer than per_class={per_class}"
            )
        pick = rng.choice(coords.shape[0], size=per_class, replace=False)
        chosen = coords[np.sort(pick)]
        train[cls] = chosen
        test_mask[chosen[:, 0], chosen[:, 1]] = False
    rows, cols = np.nonzero(test_mask)
    return DataSplit(train, np.column_stack([rows, cols]), seed)


def mix_coefficients(rng: np.random.Generator, n: int) -> np.ndarray:
    """Mixing coefficients for virtual samples: uniform on [-1, 2]."""
    return rng.uniform(-1.0, 2.0, size=n)


def mix_spectra(x1: np.ndarray, x2: np.ndarray, q) -> np.ndarray:
    """q*x1 + (1-q)*x2; q may be a scalar or a column of coefficients."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    return q * x1 + (1.0 - q) * x2


def virtual_samples(class_pixels: np.ndarray, target_count: int, seed: int) -> np.ndarray:
    """Augment one class's (n, L) spectra with mixtures of distinct picks.

    Returns the originals followed by generated samples, (target_count, L)
    when target_count exceeds n, otherwise the originals unchanged.
    """
    pixels = np.asarray(class_pixels, dtype=np.float64)
    n = pixels.shape[0]
    if n < 2:
        raise DataError("virtual samples need at least 2 pixels in the class")
    if target_count <= n:
        return pixels.copy()
    rng = np.random.default_rng(seed)
    extra = target_count - n
    i1 = rng.integers(0, n, size=extra)
    i2 = rng.integers(0, n - 1, size=extra)
    i2 = np.where(i2 >= i1, i2 + 1, i2)  # distinct second pick
    q = mix_coefficients(rng, extra)
    return np.concatenate([pixels, mix_spectra(pixels[i1], pixels[i2], q)])


def pair_sets(split: DataSplit, seed: int) -> PairSets:
    """Build the positive and subsampled negative training pixel-pairs.

    Positives are all ordered same-class pairs, self-pairs included. The
    negative pool is all ordered cross-class pairs; exactly floor(pool/2)
    are drawn uniformly without replacement.
    """
    classes = sorted(split.train_by_class)
    if len(classes) < 2:
        raise DataError("pair construction needs at least 2 classes")
    rng = np.random.default_rng(seed)

    pos_parts = []
    for cls in classes:
        coords = split.train_by_class[cls]
        n = coords.shape[0]
        ia, ib = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        pos_parts.append(np.stack([coords[ia.ravel()], coords[ib.ravel()]], axis=1))
    positives = np.concatenate(pos_parts)

    neg_parts = []
    for ci in classes:
        for cj in classes:
            if ci == cj:
                continue
            a, b = split.train_by_class[ci], split.train_by_class[cj]
            ia, ib = np.meshgrid(np.arange(a.shape[0]), np.arange(b.shape[0]), indexing="ij")
            neg_parts.append(np.stack([a[ia.ravel()], b[ib.ravel()]], axis=1))
    pool = np.concatenate(neg_parts)
    take = pool.shape[0] // 2
    pick = rng.choice(pool.shape[0], size=take, replace=False)
    return PairSets(positives, pool[np.sort(pick)], seed)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def _smooth_signature(rng: np.random.Generator, bands: int, window: int) -> np.ndarray:
    window = max(1, min(window, bands))
    raw = rng.standard_normal(bands + window - 1)
    sig = np.convolve(raw, np.ones(window) / window, mode="valid")
    sig = sig - sig.mean()
    scale = sig.std()
    if scale >= 1e-12:
        sig = sig / scale
    return sig


def voronoi_labels(height: int, width: int, site_rc: np.ndarray,
                   region_class: np.ndarray) -> np.ndarray:
    """Assign each pixel the class of its nearest site (ties: lowest site)."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    d2 = ((rows[..., None] - site_rc[:, 0]) ** 2
          + (cols[..., None] - site_rc[:, 1]) ** 2)
    nearest = d2.argmin(axis=2)
    return np.asarray(region_class)[nearest]


def gen_synthetic(cfg: SyntheticSceneConfig) -> tuple[SpectralCube, LabelMap]:
    """Seeded Voronoi scene: regions get class signatures plus Gaussian noise.

    The first n_classes regions take classes 1..K so every class appears;
    any further regions draw a class at random. Deterministic per seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width

    sites = rng.choice(h * w, size=cfg.regions, replace=False)
    site_rc = np.column_stack([sites // w, sites % w]).astype(np.float64)
    region_class = np.empty(cfg.regions, dtype=np.int64)
    region_class[: cfg.n_classes] = np.arange(1, cfg.n_classes + 1)
    if cfg.regions > cfg.n_classes:
        region_class[cfg.n_classes:] = rng.integers(1, cfg.n_classes + 1,
                                                    size=cfg.regions - cfg.n_classes)
    labels = voronoi_labels(h, w, site_rc, region_class)

    signatures = np.stack([_smooth_signature(rng, cfg.bands, cfg.smoothness)
                           for _ in range(cfg.n_classes)])
    values = signatures[labels - 1].astype(np.float64)
    if cfg.noise_std > 0:
        values = values + cfg.noise_std * rng.standard_normal(values.shape)
    return SpectralCube(values), LabelMap(labels)


def spectra_at(cube: SpectralCube, coords: np.ndarray) -> np.ndarray:
    """Gather (n, L) spectra for an (n, 2) coordinate array."""
    coords = np.asarray(coords)
    return cube.values[coords[:, 0], coords[:, 1]]
