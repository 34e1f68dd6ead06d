"""Deterministic tensor kernels: layer forward/backward passes, SGD, gradient checking.

All arithmetic is float64. Inference-path operations are written so that the
result for one sample never depends on what else is in the batch: dense layers
use a stacked (B, 1, K) @ (K, N) matmul and convolutions accumulate one
kernel position at a time, so batched evaluation is bit-identical to
one-at-a-time evaluation.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError, ShapeError, StateError

CHECKPOINT_MAGIC = b"CSFFNET1"
CENTERS_MAGIC = b"CENTERS\x00"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network chain.

    kind is one of "dense", "conv", "maxpool", "relu". Convolutions are
    stride-1 valid cross-correlations; pooling regions are 1x2 with stride 2
    (a trailing odd column is truncated, and width-1 input passes through).
    """

    kind: str
    kernel: tuple[int, int] | None = None  # (rows, cols) for conv / maxpool
    channels: int = 0                      # conv output channels
    units: int = 0                         # dense output width


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def conv(kh: int, kw: int, channels: int) -> LayerSpec:
    return LayerSpec("conv", kernel=(kh, kw), channels=channels)


def maxpool() -> LayerSpec:
    return LayerSpec("maxpool", kernel=(1, 2))


def relu_layer() -> LayerSpec:
    return LayerSpec("relu")


def sample_ndim(chain: list[LayerSpec]) -> int:
    """3 for chains that start on an (H, W, C) grid, 1 for vector chains."""
    for spec in chain:
        if spec.kind in ("conv", "maxpool"):
            return 3
        if spec.kind == "dense":
            return 1
    return 1


def chain_shapes(chain: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Propagate a sample shape through the chain, validating every layer.

    Raises ShapeError when a kernel does not fit the incoming activation.
    """
    shapes = [tuple(input_shape)]
    cur = tuple(input_shape)
    for idx, spec in enumerate(chain):
        if spec.kind == "conv":
            if len(cur) != 3:
                raise ShapeError(f"layer {idx}: conv expects (H, W, C) input, got {cur}")
            h, w, _ = cur
            kh, kw = spec.kernel
            if kh > h or kw > w:
                raise ShapeError(
                    f"layer {idx}: conv kernel {kh}x{kw} does not fit input {h}x{w}; "
                    "configure smaller kernels for this band count"
                )
            cur = (h - kh + 1, w - kw + 1, spec.channels)
        elif spec.kind == "maxpool":
            if len(cur) != 3:
                raise ShapeError(f"layer {idx}: maxpool expects (H, W, C) input, got {cur}")
            h, w, c = cur
            cur = (h, max(w // 2, 1), c)
        elif spec.kind == "relu":
            pass
        elif spec.kind == "dense":
            d = int(np.prod(cur))
            cur = (spec.units,)
        else:
            raise ShapeError(f"layer {idx}: unknown layer kind {spec.kind!r}")
        shapes.append(cur)
    return shapes


def init_params(
    chain: list[LayerSpec], input_shape: tuple[int, ...], seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Glorot-uniform weights, zero biases, seeded.

    Limits are sqrt(6 / (fan_in + fan_out)); for convolutions the fans include
    the kernel area.
    """
    rng = np.random.default_rng(seed)
    shapes = chain_shapes(chain, input_shape)
    params = []
    for idx, spec in enumerate(chain):
        inc = shapes[idx]
        if spec.kind == "conv":
            kh, kw = spec.kernel
            cin, cout = inc[2], spec.channels
            lim = np.sqrt(6.0 / (kh * kw * cin + kh * kw * cout))
            w = rng.uniform(-lim, lim, size=(kh, kw, cin, cout))
            params.append((w, np.zeros(cout)))
        elif spec.kind == "dense":
            din = int(np.prod(inc))
            dout = spec.units
            lim = np.sqrt(6.0 / (din + dout))
            w = rng.uniform(-lim, lim, size=(dout, din))
            params.append((w, np.zeros(dout)))
    return params


def n_weight_layers(chain: list[LayerSpec]) -> int:
    return sum(1 for s in chain if s.kind in ("dense", "conv"))


def n_pool_layers(chain: list[LayerSpec]) -> int:
    return sum(1 for s in chain if s.kind == "maxpool")


# ---------------------------------------------------------------------------
# individual layer operations
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b for a single vector or a (B, Din) batch."""
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"dense: x {x.shape} incompatible with W {w.shape}, b {b.shape}")
    single = x.ndim == 1
    xb = x[None] if single else x
    # (B, 1, Din) @ (Din, Dout): per-sample M=1 matmul, batch-size invariant
    y = (xb[:, None, :] @ w.T)[:, 0] + b
    return y[0] if single else y


def dense_backward(x, w, dy):
    single = x.ndim == 1
    xb = x[None] if single else x
    dyb = dy[None] if single else dy
    dw = dyb.T @ xb
    db = dyb.sum(axis=0)
    dx = dyb @ w
    return dw, db, dx[0] if single else dx


def conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation, stride 1, all input channels to all outputs.

    x is (H, W, Cin) or (B, H, W, Cin); kernels are (kh, kw, Cin, Cout).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    _, h, w_in, cin = xb.shape
    kh, kw, kcin, cout = kernels.shape
    if kcin != cin:
        raise ShapeError(f"conv: input channels {cin} != kernel channels {kcin}")
    if kh > h or kw > w_in:
        raise ShapeError(f"conv: kernel {kh}x{kw} larger than input {h}x{w_in}")
    ho, wo = h - kh + 1, w_in - kw + 1
    out = np.zeros((xb.shape[0], ho, wo, cout))
    # fixed accumulation order over kernel positions keeps per-sample results
    # independent of batch composition
    for ki in range(kh):
        for kj in range(kw):
            out += xb[:, ki:ki + ho, kj:kj + wo, :] @ kernels[ki, kj]
    out += bias
    return out[0] if single else out


def conv_backward(x, kernels, dy):
    single = x.ndim == 3
    xb = x[None] if single else x
    dyb = dy[None] if single else dy
    kh, kw, _, _ = kernels.shape
    ho, wo = dyb.shape[1], dyb.shape[2]
    dw = np.zeros_like(kernels)
    dx = np.zeros_like(xb)
    for ki in range(kh):
        for kj in range(kw):
            patch = xb[:, ki:ki + ho, kj:kj + wo, :]
            dw[ki, kj] = np.tensordot(patch, dyb, axes=([0, 1, 2], [0, 1, 2]))
            dx[:, ki:ki + ho, kj:kj + wo, :] += dyb @ kernels[ki, kj].T
    db = dyb.sum(axis=(0, 1, 2))
    return dw, db, dx[0] if single else dx


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """1x2 max-pool with stride 2 along the width axis.

    A trailing odd column is truncated; width-1 input passes through
    unchanged (idx is None in that case). Returns (output, argmax indices).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    w_in = xb.shape[2]
    if w_in < 2:
        out = xb.copy()
        return (out[0] if single else out), None
    p = w_in // 2
    xr = xb[:, :, : 2 * p, :].reshape(xb.shape[0], xb.shape[1], p, 2, xb.shape[3])
    idx = xr.argmax(axis=3)  # ties take the left cell
    out = np.take_along_axis(xr, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool_backward(x_shape, idx, dy):
    single = len(x_shape) == 3
    shape = (1,) + tuple(x_shape) if single else tuple(x_shape)
    dyb = dy[None] if single else dy
    if idx is None:  # width-1 pass-through
        dx = dyb.copy()
        return dx[0] if single else dx
    idxb = idx[None] if single else idx
    b, h, w_in, c = shape
    p = w_in // 2
    dxr = np.zeros((b, h, p, 2, c))
    np.put_along_axis(dxr, idxb[:, :, :, None, :], dyb[:, :, :, None, :], axis=3)
    dx = np.zeros(shape)
    dx[:, :, : 2 * p, :] = dxr.reshape(b, h, 2 * p, c)
    return dx[0] if single else dx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, dy):
    return dy * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of a single logit vector against an integer label.

    Returns (loss, gradient w.r.t. logits). Numerically stabilized via the
    max-shift; loss = logsumexp(z) - z[label].
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"label {label} out of range for {logits.shape[-1]} logits")
    z = logits - logits.max()
    loss = float(np.log(np.exp(z).sum()) - z[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


def softmax_xent_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and gradients for a (B, K) logit batch."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = lse - z[rows, labels]
    grads = softmax(logits)
    grads[rows, labels] -= 1.0
    return losses, grads


# ---------------------------------------------------------------------------
# chain execution
# ---------------------------------------------------------------------------

class ChainCache:
    """Per-layer forward state needed by backward()."""

    def __init__(self, single: bool):
        self.single = single
        self.records: list[tuple] = []
        self.relu_masks: list[np.ndarray] = []
        self.pool_indices: list[np.ndarray | None] = []


def forward_chain(
    chain: list[LayerSpec],
    params: list[tuple[np.ndarray, np.ndarray]],
    x: np.ndarray,
    want_cache: bool = True,
) -> tuple[np.ndarray, ChainCache | None]:
    """Run the chain on a sample or batch; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    nd = sample_ndim(chain)
    single = x.ndim == nd
    if x.ndim not in (nd, nd + 1):
        raise ShapeError(f"chain expects sample ndim {nd}, got array ndim {x.ndim}")
    cur = x[None] if single else x
    cache = ChainCache(single) if want_cache else None
    p = 0
    for spec in chain:
        if spec.kind == "conv":
            w, b = params[p]
            out = conv_forward(cur, w, b)
            if cache is not None:
                cache.records.append(("conv", cur, p))
            p += 1
        elif spec.kind == "dense":
            w, b = params[p]
            flat_from = None
            if cur.ndim == 4:
                flat_from = cur.shape
                cur = cur.reshape(cur.shape[0], -1)
            out = dense_forward(cur, w, b)
            if cache is not None:
                cache.records.append(("dense", cur, p, flat_from))
            p += 1
        elif spec.kind == "maxpool":
            out, idx = maxpool_forward(cur)
            if cache is not None:
                cache.records.append(("maxpool", cur.shape, idx))
                cache.pool_indices.append(idx)
        elif spec.kind == "relu":
            out = relu(cur)
            if cache is not None:
                mask = cur > 0
                cache.records.append(("relu", mask))
                cache.relu_masks.append(mask)
        else:
            raise ShapeError(f"unknown layer kind {spec.kind!r}")
        cur = out
    return (cur[0] if single else cur), cache


def backward(
    chain: list[LayerSpec],
    params: list[tuple[np.ndarray, np.ndarray]],
    cache: ChainCache | None,
    grad_out: np.ndarray,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse-mode pass; returns (param gradients, gradient w.r.t. input).

    Requires the cache produced by forward_chain on the same inputs.
    """
    if cache is None:
        raise StateError("backward() called without a forward cache")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    dy = grad_out[None] if cache.single else grad_out
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * n_weight_layers(chain)
    for spec, rec in zip(reversed(chain), reversed(cache.records)):
        if spec.kind == "conv":
            _, x_in, p = rec
            w, _ = params[p]
            dw, db, dy = conv_backward(x_in, w, dy)
            grads[p] = (dw, db)
        elif spec.kind == "dense":
            _, x_in, p, flat_from = rec
            w, _ = params[p]
            dw, db, dy = dense_backward(x_in, w, dy)
            grads[p] = (dw, db)
            if flat_from is not None:
                dy = dy.reshape(flat_from)
        elif spec.kind == "maxpool":
            _, x_shape, idx = rec
            dy = maxpool_backward(x_shape, idx, dy)
        elif spec.kind == "relu":
            _, mask = rec
            dy = dy * mask
    return grads, (dy[0] if cache.single else dy)


def sgd_step(
    params: list[tuple[np.ndarray, np.ndarray]],
    grads: list[tuple[np.ndarray, np.ndarray]],
    lr: float,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """In-place p <- p - lr * g, in fixed layer order."""
    for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NumericError(f"non-finite gradient in parameterized layer {i}")
        w -= lr * gw
        b -= lr * gb
    return params


def _activation_signature(cache: ChainCache) -> tuple:
    return (
        tuple(m.tobytes() for m in cache.relu_masks),
        tuple(b"" if i is None else i.tobytes() for i in cache.pool_indices),
    )


def finite_diff_check(
    chain: list[LayerSpec],
    params: list[tuple[np.ndarray, np.ndarray]],
    x: np.ndarray,
    label: int,
    eps: float = 1e-5,
    probes_per_tensor: int = 5,
    seed: int = 0,
    check_input: bool = True,
) -> float:
    """Worst relative error between backward() and central differences.

    Probes a random parameter subsample (and a few input entries) under the
    cross-entropy head. Probes whose +/- eps forward passes change any ReLU
    mask or pool argmax are skipped: the loss is not differentiable there.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    out, cache = forward_chain(chain, params, x)
    _, dlogits = softmax_xent(out, label)
    grads, dx = backward(chain, params, cache, dlogits)

    def loss_at() -> tuple[float, tuple]:
        o, c = forward_chain(chain, params, x)
        l, _ = softmax_xent(o, label)
        return l, _activation_signature(c)

    worst = 0.0

    def probe(arr: np.ndarray, analytic: np.ndarray) -> None:
        nonlocal worst
        flat = arr.reshape(-1)
        n = min(probes_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=n, replace=False)
        for k in picks:
            orig = flat[k]
            flat[k] = orig + eps
            lp, sp = loss_at()
            flat[k] = orig - eps
            lm, sm = loss_at()
            flat[k] = orig
            if sp != sm:  # crossed a kink; probe is invalid
                continue
            fd = (lp - lm) / (2 * eps)
            an = analytic.reshape(-1)[k]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, err)

    for (w, b), (gw, gb) in zip(params, grads):
        probe(w, gw)
        probe(b, gb)
    if check_input:
        xa = np.array(x, dtype=np.float64)

        def loss_at_x() -> tuple[float, tuple]:
            o, c = forward_chain(chain, params, xa)
            l, _ = softmax_xent(o, label)
            return l, _activation_signature(c)

        flat = xa.reshape(-1)
        for k in rng.choice(flat.size, size=min(probes_per_tensor, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + eps
            lp, sp = loss_at_x()
            flat[k] = orig - eps
            lm, sm = loss_at_x()
            flat[k] = orig
            if sp != sm:
                continue
            fd = (lp - lm) / (2 * eps)
            an = dx.reshape(-1)[k]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def _layer_line(spec: LayerSpec) -> str:
    if spec.kind == "dense":
        return f"layer dense {spec.units}"
    if spec.kind == "conv":
        return f"layer conv {spec.kernel[0]} {spec.kernel[1]} {spec.channels}"
    if spec.kind == "maxpool":
        return f"layer maxpool {spec.kernel[0]} {spec.kernel[1]}"
    if spec.kind == "relu":
        return "layer relu"
    raise ShapeError(f"unknown layer kind {spec.kind!r}")


def _parse_layer_line(parts: list[str]) -> LayerSpec:
    kind = parts[0]
    if kind == "dense":
        return dense(int(parts[1]))
    if kind == "conv":
        return conv(int(parts[1]), int(parts[2]), int(parts[3]))
    if kind == "maxpool":
        return maxpool()
    if kind == "relu":
        return relu_layer()
    raise FormatError(f"unknown layer kind {kind!r} in checkpoint")


def save_network(
    path: str,
    chain: list[LayerSpec],
    params: list[tuple[np.ndarray, np.ndarray]],
    input_shape: tuple[int, ...],
    meta: dict[str, str] | None = None,
    centers: np.ndarray | None = None,
) -> None:
    """Write a checkpoint: magic, text descriptor, float64 LE parameters.

    The descriptor embeds the input shape and layer list so inference never
    needs the original configuration. ANN checkpoints append a CENTERS block.
    """
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    lines.append("input " + " ".join(str(d) for d in input_shape))
    lines.extend(_layer_line(s) for s in chain)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for w, b in params:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        if centers is not None:
            k, f = centers.shape
            fh.write(CENTERS_MAGIC)
            fh.write(struct.pack("<II", k, f))
            fh.write(np.ascontiguousarray(centers, dtype="<f8").tobytes())


def load_network(path: str):
    """Read a checkpoint; returns (chain, params, input_shape, meta, centers)."""
    if not os.path.exists(path):
        raise FormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = blob[off : off + hlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"corrupt checkpoint header in {path}") from exc
    off += hlen
    meta: dict[str, str] = {}
    input_shape: tuple[int, ...] | None = None
    chain: list[LayerSpec] = []
    for line in header.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "input":
            input_shape = tuple(int(v) for v in parts[1:])
        elif parts[0] == "layer":
            chain.append(_parse_layer_line(parts[1:]))
        else:
            raise FormatError(f"unknown descriptor line {line!r}")
    if input_shape is None or not chain:
        raise FormatError(f"incomplete checkpoint descriptor in {path}")
    shapes = chain_shapes(chain, input_shape)
    params = []
    for idx, spec in enumerate(chain):
        inc = shapes[idx]
        if spec.kind == "conv":
            kh, kw = spec.kernel
            wshape = (kh, kw, inc[2], spec.channels)
            bshape = (spec.channels,)
        elif spec.kind == "dense":
            wshape = (spec.units, int(np.prod(inc)))
            bshape = (spec.units,)
        else:
            continue
        for shape in (wshape, bshape):
            nbytes = int(np.prod(shape)) * 8
            if off + nbytes > len(blob):
                raise FormatError(f"truncated parameter payload in {path}")
            arr = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(shape).copy()
            off += nbytes
            if shape is wshape:
                w = arr
            else:
                params.append((w, arr))
    centers = None
    if off < len(blob):
        if blob[off : off + len(CENTERS_MAGIC)] != CENTERS_MAGIC:
            raise FormatError(f"unexpected trailing bytes in {path}")
        off += len(CENTERS_MAGIC)
        k, f = struct.unpack_from("<II", blob, off)
        off += 8
        nbytes = k * f * 8
        if off + nbytes > len(blob):
            raise FormatError(f"truncated centers block in {path}")
        centers = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(k, f).copy()
        off += nbytes
    if off != len(blob):
        raise FormatError(f"trailing garbage in {path}")
    return chain, params, input_shape, meta, centers
