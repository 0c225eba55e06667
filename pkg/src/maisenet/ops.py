"""Differentiable kernels over :class:`~maisenet.tensor.Tensor`.

Every kernel is a pure function: identical inputs give bit-identical
outputs. All contractions go through ``np.einsum`` with its fixed
single-threaded reduction order, so results do not depend on the BLAS
thread count. Backward scatter steps (``np.add.at``, slice accumulation)
run in a fixed loop order for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import (
    ShapeError,
    Tensor,
    make_result,
    record_pattern,
    resolve_axis,
)

__all__ = [
    "ConvParams",
    "add",
    "amax",
    "channel_shuffle",
    "concat",
    "conv2d",
    "div_scalar",
    "elementwise",
    "global_pool",
    "layernorm",
    "matmul_batched",
    "maxpool2d",
    "mean_axes",
    "mul",
    "narrow",
    "pad2d",
    "pixel_shuffle",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax_axis",
    "transpose",
    "tsum",
    "upsample",
]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise algebra
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_result("add", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return make_result("mul", out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return make_result("scale", out, (a,), vjp)


def div_scalar(a: Tensor, s: float) -> Tensor:
    """Division, not multiplication by a reciprocal: x/5 and x*0.2 differ
    by an ulp, and the level-balance contract is defined by the quotient."""
    s = float(s)
    out = a.data / s

    def vjp(g):
        return (g / s,)

    return make_result("div_scalar", out, (a,), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if axes is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return make_result("sum", np.asarray(out, dtype=np.float64), (a,), vjp)


def mean_axes(a: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return scale(tsum(a, axes, keepdims=keepdims), 1.0 / count)


def _normalize_axes(axis, rank):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % rank for ax in axis)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    record_pattern(mask)
    out = np.where(mask, a.data, 0.0)

    def vjp(g):
        return (np.where(mask, g, 0.0),)

    return make_result("relu", out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", out, (a,), vjp)


def elementwise(a: Tensor, kind: str) -> Tensor:
    """Spec-surface dispatcher for the pointwise nonlinearities."""
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "relu":
        return relu(a)
    raise ShapeError(f"elementwise: unknown kind {kind!r}; expected 'sigmoid' or 'relu'")


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return make_result("reshape", out, (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = a.data.transpose(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return make_result("transpose", out, (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    axis = resolve_axis(axis, tensors[0].ndim)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        index = [slice(None)] * g.ndim
        for start, stop in zip(offsets[:-1], offsets[1:]):
            index[axis] = slice(start, stop)
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return make_result("concat", out, tensors, vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = resolve_axis(axis, a.ndim)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: window [{start}, {start + length}) exceeds extent {a.shape[axis]} on axis {axis}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        return (buf,)

    return make_result("narrow", out, (a,), vjp)


def pad2d(a: Tensor, pad) -> Tensor:
    """Zero-pad the two spatial axes; ``pad`` is (top, bottom, left, right)."""
    top, bottom, left, right = (int(p) for p in pad)
    if min(top, bottom, left, right) < 0:
        raise ShapeError("pad2d: negative padding")
    n, c, h, w = a.shape
    out = np.zeros((n, c, h + top + bottom, w + left + right), dtype=np.float64)
    out[:, :, top : top + h, left : left + w] = a.data

    def vjp(g):
        return (g[:, :, top : top + h, left : left + w],)

    return make_result("pad2d", out, (a,), vjp)


def pixel_shuffle(a: Tensor, factor: int) -> Tensor:
    """Depth-to-space: (N, C·f², H, W) -> (N, C, fH, fW), standard ordering."""
    f = int(factor)
    if f < 1:
        raise ShapeError("pixel_shuffle: factor must be >= 1")
    n, c, h, w = a.shape
    if c % (f * f) != 0:
        raise ShapeError(
            f"pixel_shuffle: channel extent {c} not divisible by factor^2 = {f * f}"
        )
    co = c // (f * f)
    out = (
        a.data.reshape(n, co, f, f, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, co, h * f, w * f)
    )

    def vjp(g):
        back = (
            g.reshape(n, co, h, f, w, f)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w)
        )
        return (back,)

    return make_result("pixel_shuffle", out, (a,), vjp)


def channel_shuffle(a: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: output channel q·g + r reads input r·(C/g) + q.

    For [a1, a2, b1, b2] with two groups the result is [a1, b1, a2, b2].
    Composed from reshape/transpose, so the backward pass is the inverse
    permutation for free.
    """
    g = int(groups)
    n, c, h, w = a.shape
    if g < 1 or c % g != 0:
        raise ShapeError(f"channel_shuffle: channel extent {c} not divisible by groups {g}")
    if g == 1:
        return reshape(a, a.shape)
    per = c // g
    grouped = reshape(a, (n, g, per, h, w))
    swapped = transpose(grouped, (0, 2, 1, 3, 4))
    return reshape(swapped, (n, c, h, w))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def softmax_axis(a: Tensor, axis) -> Tensor:
    """Numerically stable softmax along one axis; slices sum to one."""
    ax = resolve_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - inner),)

    return make_result("softmax", out, (a,), vjp)


def amax(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    """Max along one axis; gradient routes to the first maximal element."""
    ax = resolve_axis(axis, a.ndim)
    idx = a.data.argmax(axis=ax)
    record_pattern(idx)
    gathered = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax)
    out = gathered if keepdims else np.squeeze(gathered, axis=ax)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, ax), gg, axis=ax)
        return (buf,)

    return make_result("amax", out, (a,), vjp)


def global_pool(a: Tensor, kind: str) -> Tensor:
    """Collapse the spatial axes to 1x1 by mean or max."""
    n, c, h, w = a.shape
    if kind == "avg":
        return mean_axes(a, (2, 3), keepdims=True)
    if kind == "max":
        flat = reshape(a, (n, c, h * w))
        return reshape(amax(flat, axis=2, keepdims=True), (n, c, 1, 1))
    raise ShapeError(f"global_pool: unknown kind {kind!r}; expected 'avg' or 'max'")


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each instance over its channel-spatial slice, then affine.

    Before the affine stage the output has per-instance mean 0 and
    (population) variance 1 up to ``eps``.
    """
    axes = tuple(range(1, a.ndim))
    mu = a.data.mean(axis=axes, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    out = y * gamma.data + beta.data

    def vjp(g):
        gy = g * gamma.data
        mean_gy = gy.mean(axis=axes, keepdims=True)
        mean_gy_y = (gy * y).mean(axis=axes, keepdims=True)
        ga = inv * (gy - mean_gy - y * mean_gy_y)
        ggamma = _unbroadcast(g * y, gamma.data.shape)
        gbeta = _unbroadcast(g, beta.data.shape)
        return ga, ggamma, gbeta

    return make_result("layernorm", out, (a, gamma, beta), vjp)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """Exact batched matrix product: (B, n, k) @ (B, k, m) -> (B, n, m)."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(
            f"matmul_batched: expected rank-3 operands, got ranks {a.ndim} and {b.ndim}"
        )
    if a.shape[0] != b.shape[0]:
        raise ShapeError(
            f"matmul_batched: batch extents differ ({a.shape[0]} vs {b.shape[0]})"
        )
    if a.shape[2] != b.shape[1]:
        raise ShapeError(
            f"matmul_batched: inner extents differ ({a.shape[2]} vs {b.shape[1]})"
        )
    out = np.einsum("bij,bjk->bik", a.data, b.data)

    def vjp(g):
        ga = np.einsum("bik,bjk->bij", g, b.data)
        gb = np.einsum("bij,bik->bjk", a.data, g)
        return ga, gb

    return make_result("matmul", out, (a, b), vjp)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass
class ConvParams:
    """Weights and geometry of one convolution.

    ``weight`` has shape (C_out, C_in/groups, kH, kW); ``bias`` is a
    length-C_out vector or None.
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: int = 0


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    w = params.weight
    b = params.bias
    stride, dilation = int(params.stride), int(params.dilation)
    groups, padding = int(params.groups), int(params.padding)
    if stride < 1 or dilation < 1 or groups < 1:
        raise ShapeError("conv2d: stride, dilation and groups must be positive")
    if padding < 0:
        raise ShapeError("conv2d: padding must be non-negative")
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank-4 (N,C,H,W), got rank {x.ndim}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank-4, got rank {w.ndim}")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin != cin_g * groups:
        raise ShapeError(
            f"conv2d: channel axis mismatch — input has {cin} channels, "
            f"weight expects {cin_g}*groups={cin_g * groups}"
        )
    if cout % groups != 0:
        raise ShapeError(
            f"conv2d: output channel extent {cout} not divisible by groups {groups}"
        )
    eff_h = (kh - 1) * dilation + 1
    eff_w = (kw - 1) * dilation + 1
    if eff_h > h + 2 * padding:
        raise ShapeError(
            f"conv2d: effective kernel height {eff_h} exceeds padded height {h + 2 * padding}"
        )
    if eff_w > wd + 2 * padding:
        raise ShapeError(
            f"conv2d: effective kernel width {eff_w} exceeds padded width {wd + 2 * padding}"
        )
    if b is not None and b.data.shape != (cout,):
        raise ShapeError(
            f"conv2d: bias shape {b.data.shape} does not match output channel extent {cout}"
        )

    ho = (h + 2 * padding - eff_h) // stride + 1
    wo = (wd + 2 * padding - eff_w) // stride + 1
    cout_g = cout // groups

    padded = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    padded[:, :, padding : padding + h, padding : padding + wd] = x.data
    sn, sc, sh, sw = padded.strides
    windows = as_strided(
        padded,
        shape=(n, groups, cin_g, ho, wo, kh, kw),
        strides=(sn, sc * cin_g, sc, sh * stride, sw * stride, sh * dilation, sw * dilation),
        writeable=False,
    )
    wg = w.data.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", windows, wg).reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gv = g.reshape(n, groups, cout_g, ho, wo)
        gw = np.einsum("ngohw,ngchwij->gocij", gv, windows).reshape(w.data.shape)
        gcols = np.einsum("ngohw,gocij->ngchwij", gv, wg).reshape(n, cin, ho, wo, kh, kw)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[
                    :,
                    :,
                    i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                    j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
                ] += gcols[:, :, :, :, i, j]
        gx = gpad[:, :, padding : padding + h, padding : padding + wd]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result("conv2d", out, parents, vjp)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; within each window the first maximum wins."""
    k, s = int(kernel), int(stride)
    if k != s:
        raise ShapeError(f"maxpool2d: kernel {k} must equal stride {s}")
    if k < 1:
        raise ShapeError("maxpool2d: kernel must be positive")
    n, c, h, w = x.shape
    if h % k != 0:
        raise ShapeError(f"maxpool2d: height extent {h} not divisible by kernel {k}")
    if w % k != 0:
        raise ShapeError(f"maxpool2d: width extent {w} not divisible by kernel {k}")
    ho, wo = h // k, w // k
    tiles = (
        x.data.reshape(n, c, ho, k, wo, k)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, k * k)
    )
    idx = tiles.argmax(axis=-1)
    record_pattern(idx)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros((n, c, ho, wo, k * k), dtype=np.float64)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        back = (
            buf.reshape(n, c, ho, wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (back,)

    return make_result("maxpool2d", out, (x,), vjp)


def _interp_axis(n_in: int, factor: int):
    """Sample positions for scale-up with centers at (i + 0.5)/f - 0.5."""
    pos = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    base = np.floor(pos)
    frac = pos - base
    lo = np.clip(base.astype(np.int64), 0, n_in - 1)
    hi = np.clip(base.astype(np.int64) + 1, 0, n_in - 1)
    return lo, hi, frac


def upsample(x: Tensor, factor: int, mode: str) -> Tensor:
    """Scale both spatial axes up by an integer factor.

    ``nearest`` replicates source pixels; ``bilinear`` samples with output
    centers at (i + 0.5)/factor - 0.5 and replicated borders. Written as
    a + frac*(b - a) so constants survive bit-exactly.
    """
    f = int(factor)
    if f < 1:
        raise ShapeError(f"upsample: factor must be >= 1, got {factor}")
    if mode == "nearest":
        return _upsample_nearest(x, f)
    if mode == "bilinear":
        return _upsample_bilinear(x, f)
    raise ShapeError(f"upsample: unknown mode {mode!r}; expected 'nearest' or 'bilinear'")


def _upsample_nearest(x: Tensor, f: int) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(f, axis=2).repeat(f, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return make_result("upsample_nearest", out, (x,), vjp)


def _upsample_bilinear(x: Tensor, f: int) -> Tensor:
    n, c, h, w = x.shape
    lo_h, hi_h, fr_h = _interp_axis(h, f)
    lo_w, hi_w, fr_w = _interp_axis(w, f)

    a_rows = x.data[:, :, lo_h, :]
    b_rows = x.data[:, :, hi_h, :]
    rows = a_rows + fr_h[None, None, :, None] * (b_rows - a_rows)
    a_cols = rows[:, :, :, lo_w]
    b_cols = rows[:, :, :, hi_w]
    out = a_cols + fr_w[None, None, None, :] * (b_cols - a_cols)

    def vjp(g):
        g_rows = np.zeros((n, c, h * f, w), dtype=np.float64)
        np.add.at(g_rows, (Ellipsis, lo_w), g * (1.0 - fr_w)[None, None, None, :])
        np.add.at(g_rows, (Ellipsis, hi_w), g * fr_w[None, None, None, :])
        gx = np.zeros((n, c, h, w), dtype=np.float64)
        np.add.at(
            gx,
            (slice(None), slice(None), lo_h),
            g_rows * (1.0 - fr_h)[None, None, :, None],
        )
        np.add.at(
            gx,
            (slice(None), slice(None), hi_h),
            g_rows * fr_h[None, None, :, None],
        )
        return (gx,)

    return make_result("upsample_bilinear", out, (x,), vjp)
