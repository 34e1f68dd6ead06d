"""Spectral-spatial fusion: estimate a per-pixel weight kernel from the
same-class discriminant and average neighborhood spectral features under it.

For a test pixel x the s x s window (clipped at borders, training pixels
removed, center always kept) is scored by the discriminant, thresholded
inclusively at t with the center forced on, normalized to unit sum, and
applied to the spectral feature field. t=0 reduces to a plain neighborhood
average; t=1 and s=1 reduce to the pixel's own spectral feature.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import struct

import numpy as np

from .discriminant import DiscModel, predict_same_batch
from .errors import FormatError, ShapeError
from .ingest import SpectralCube

FUSED_MAGIC = b"FSF1"


@dataclass
class FusionConfig:
    size: int = 19           # neighborhood side, odd
    threshold: float = 0.01
    exclude: frozenset = field(default_factory=frozenset)  # training coords

    def validate(self) -> None:
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"neighborhood size must be odd and >= 1, got {self.size}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")


@dataclass
class Neighborhood:
    center: tuple[int, int]
    size: int
    offsets: np.ndarray  # (M, 2) window positions, center at (s//2, s//2)
    coords: np.ndarray   # (M, 2) image coordinates


@dataclass
class SpatialMatrix:
    probs: np.ndarray  # (s, s) float, zero where invalid
    valid: np.ndarray  # (s, s) bool


@dataclass
class SpatialKernel:
    weights: np.ndarray  # (s, s) nonnegative, unit sum over support
    support: np.ndarray  # (s, s) bool


@dataclass
class FusedField:
    values: np.ndarray  # (H, W, F)
    valid: np.ndarray   # (H, W) bool


def _exclusion_mask(shape: tuple[int, int], exclude) -> np.ndarray:
    if isinstance(exclude, np.ndarray) and exclude.dtype == bool:
        return exclude
    mask = np.zeros(shape, dtype=bool)
    for r, c in exclude:
        mask[r, c] = True
    return mask


def build_neighborhood(center: tuple[int, int], size: int,
                       shape: tuple[int, int], exclude=()) -> Neighborhood:
    """Window cells around center, border-clipped, exclusions removed."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"neighborhood size must be odd and >= 1, got {size}")
    r0, c0 = center
    h, w = shape
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise ValueError(f"center {center} outside {h}x{w} image")
    excl = _exclusion_mask(shape, exclude)
    if excl[r0, c0]:
        raise ValueError(f"center {center} is an excluded pixel")
    half = size // 2
    offsets = []
    coords = []
    for i in range(size):
        r = r0 - half + i
        if not 0 <= r < h:
            continue
        for j in range(size):
            c = c0 - half + j
            if not 0 <= c < w:
                continue
            if excl[r, c] and (r, c) != (r0, c0):
                continue
            offsets.append((i, j))
            coords.append((r, c))
    return Neighborhood((r0, c0), size,
                        np.array(offsets, dtype=np.int64),
                        np.array(coords, dtype=np.int64))


def spatial_matrix(model: DiscModel, cube: SpectralCube, nb: Neighborhood) -> SpatialMatrix:
    """Discriminant probabilities between the center and each included cell."""
    center_spec = cube.values[nb.center[0], nb.center[1]]
    neigh = cube.values[nb.coords[:, 0], nb.coords[:, 1]]
    pairs = np.stack([np.tile(center_spec, (neigh.shape[0], 1)), neigh], axis=1)
    probs = predict_same_batch(model, pairs)
    return _matrix_from_probs(nb, probs)


def _matrix_from_probs(nb: Neighborhood, probs: np.ndarray) -> SpatialMatrix:
    grid = np.zeros((nb.size, nb.size))
    valid = np.zeros((nb.size, nb.size), dtype=bool)
    grid[nb.offsets[:, 0], nb.offsets[:, 1]] = probs
    valid[nb.offsets[:, 0], nb.offsets[:, 1]] = True
    return SpatialMatrix(grid, valid)


def binarize(matrix: SpatialMatrix, threshold: float) -> np.ndarray:
    """Inclusive threshold (p >= t); the center cell is forced to 1."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    out = ((matrix.probs >= threshold) & matrix.valid).astype(np.uint8)
    mid = matrix.probs.shape[0] // 2
    out[mid, mid] = 1
    return out


def normalize_kernel(binary: np.ndarray) -> SpatialKernel:
    """Each active cell gets weight 1/count; weights sum to one."""
    count = int(binary.sum())
    if count == 0:
        raise ShapeError("kernel normalization needs at least one active cell")
    weights = np.where(binary > 0, 1.0 / count, 0.0)
    return SpatialKernel(weights, binary > 0)


def fuse_feature(kernel: SpatialKernel, feature_field: np.ndarray,
                 nb: Neighborhood) -> np.ndarray:
    """Weighted sum of neighborhood spectral features under the kernel."""
    if kernel.weights.shape != (nb.size, nb.size):
        raise ShapeError(
            f"kernel {kernel.weights.shape} does not align with a size-{nb.size} neighborhood")
    wv = kernel.weights[nb.offsets[:, 0], nb.offsets[:, 1]]
    feats = feature_field[nb.coords[:, 0], nb.coords[:, 1]]
    return wv @ feats


def fuse_pixel(model: DiscModel, cube: SpectralCube, feature_field: np.ndarray,
               nb: Neighborhood, threshold: float) -> np.ndarray:
    matrix = spatial_matrix(model, cube, nb)
    kernel = normalize_kernel(binarize(matrix, threshold))
    return fuse_feature(kernel, feature_field, nb)


def fuse_image(model: DiscModel, cube: SpectralCube, feature_field: np.ndarray,
               test_coords: np.ndarray, cfg: FusionConfig,
               threads: int = 1, pair_batch: int = 2048) -> FusedField:
    """Fused features for every test pixel; training pixels stay invalid.

    Pixels are processed in blocks so the discriminant sees large batches;
    per-pixel results are bit-identical to fuse_pixel because every forward
    operation is batch-size invariant. threads only changes wall-clock.
    """
    cfg.validate()
    h, w = cube.height, cube.width
    f = feature_field.shape[2]
    out = np.zeros((h, w, f))
    valid = np.zeros((h, w), dtype=bool)
    excl = _exclusion_mask((h, w), cfg.exclude)

    def run_chunk(chunk: np.ndarray) -> None:
        block: list[Neighborhood] = []
        cells = 0

        def flush() -> None:
            nonlocal block, cells
            if not block:
                return
            pairs = np.concatenate([
                np.stack([np.tile(cube.values[nb.center], (nb.coords.shape[0], 1)),
                          cube.values[nb.coords[:, 0], nb.coords[:, 1]]], axis=1)
                for nb in block
            ])
            probs = predict_same_batch(model, pairs)
            pos = 0
            for nb in block:
                m = nb.coords.shape[0]
                matrix = _matrix_from_probs(nb, probs[pos:pos + m])
                pos += m
                kernel = normalize_kernel(binarize(matrix, cfg.threshold))
                out[nb.center] = fuse_feature(kernel, feature_field, nb)
                valid[nb.center] = True
            block = []
            cells = 0

        for r, c in chunk:
            nb = build_neighborhood((int(r), int(c)), cfg.size, (h, w), excl)
            block.append(nb)
            cells += nb.coords.shape[0]
            if cells >= pair_batch:
                flush()
        flush()

    coords = np.asarray(test_coords)
    if threads <= 1 or coords.shape[0] < 2 * threads:
        run_chunk(coords)
    else:
        chunks = np.array_split(coords, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, chunks))
    return FusedField(out, valid)


def save_fused(fused: FusedField, path: str) -> None:
    h, w, f = fused.values.shape
    with open(path, "wb") as fh:
        fh.write(FUSED_MAGIC)
        fh.write(struct.pack("<III", h, w, f))
        flags = fused.valid.astype("<u1").reshape(h * w, 1)
        feats = np.ascontiguousarray(fused.values, dtype="<f8").reshape(h * w, f)
        record = np.concatenate([flags, feats.view("<u1").reshape(h * w, f * 8)], axis=1)
        fh.write(record.tobytes())


def load_fused(path: str) -> FusedField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FUSED_MAGIC:
        raise FormatError(f"bad fused-feature magic in {path}")
    h, w, f = struct.unpack_from("<III", blob, 4)
    rec = 1 + f * 8
    expected = 16 + h * w * rec
    if len(blob) != expected:
        raise FormatError(f"fused payload is {len(blob) - 16} bytes, expected {expected - 16}")
    raw = np.frombuffer(blob, dtype="<u1", offset=16).reshape(h * w, rec)
    valid = raw[:, 0].astype(bool).reshape(h, w)
    values = raw[:, 1:].copy().view("<f8").reshape(h, w, f).astype(np.float64)
    return FusedField(values, valid)
