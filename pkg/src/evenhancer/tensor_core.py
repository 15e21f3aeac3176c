"""Dense float32 kernels shared by the whole pipeline.

Arrays follow the (time, channel, height, width) layout for rank-4 data.
Every multiply-add performed by a linear kernel is charged to the active
:class:`OpLedger`, so compute budgets can be read off analytically.
"""
from __future__ import annotations

import contextlib
import contextvars
import threading
from collections import defaultdict
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

DTYPE = np.float32


class ContractError(ValueError):
    """Raised when a kernel receives inputs violating its shape contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a kernel produces NaN or Inf."""


class OpLedger:
    """Thread-safe accumulator of multiply-add counts keyed by kernel name."""

    def __init__(self) -> None:
        self._counts: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def add(self, name: str, count: int) -> None:
        if count < 0:
            raise ValueError(f"negative op count for {name}: {count}")
        with self._lock:
            self._counts[name] += int(count)

    def merge(self, other: "OpLedger", num: int = 1, den: int = 1) -> None:
        """Add ``other``'s counters scaled by ``num / den`` (must divide exactly)."""
        for name, count in other.counters.items():
            scaled, rem = divmod(count * num, den)
            if rem:
                raise ValueError(f"ledger scale {num}/{den} does not divide {name}={count}")
            self.add(name, scaled)

    @property
    def counters(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def total(self) -> int:
        return sum(self.counters.values())

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()

    def __repr__(self) -> str:
        return f"OpLedger(total={self.total()}, kernels={len(self._counts)})"


_GLOBAL_LEDGER = OpLedger()
_active: contextvars.ContextVar[OpLedger] = contextvars.ContextVar("ledger", default=_GLOBAL_LEDGER)


def current_ledger() -> OpLedger:
    return _active.get()


@contextlib.contextmanager
def use_ledger(ledger: OpLedger | None = None) -> Iterator[OpLedger]:
    """Route kernel op counts to ``ledger`` (a fresh one if omitted) inside the block."""
    ledger = OpLedger() if ledger is None else ledger
    token = _active.set(ledger)
    try:
        yield ledger
    finally:
        _active.reset(token)


def _charge(name: str, count: int) -> None:
    _active.get().add(name, count)


def _finite(out: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{name} produced non-finite values")
    return out


def _as32(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


# --------------------------------------------------------------------------
# convolutions


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2D cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    x, weight = _as32(x), _as32(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ContractError(f"conv2d shape mismatch: input {x.shape} vs weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ContractError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += _as32(bias)[None, :, None, None]
    _charge("conv2d", n * o * ho * wo * c * kh * kw)
    return _finite(out, "conv2d")


def downsample_conv(x, weight, bias=None) -> np.ndarray:
    """Stride-2, padding-1 convolution; output extents are ceil(H/2) x ceil(W/2) for 3x3 kernels."""
    return conv2d(x, weight, bias, stride=2, padding=weight.shape[-1] // 2)


def conv3d(x, weight, bias=None, padding: int = 1) -> np.ndarray:
    """3D convolution over (time, height, width) of a (T, C, H, W) sequence.

    ``weight`` is (O, C, kt, kh, kw); the same zero padding applies to every axis.
    Returns (T', O, H', W').
    """
    x, weight = _as32(x), _as32(weight)
    if x.ndim != 4 or weight.ndim != 5 or x.shape[1] != weight.shape[1]:
        raise ContractError(f"conv3d shape mismatch: input {x.shape} vs weight {weight.shape}")
    t, c, h, w = x.shape
    o, _, kt, kh, kw = weight.shape
    p = padding
    vol = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (p, p), (p, p), (p, p)))  # (C, T, H, W)
    win = sliding_window_view(vol, (kt, kh, kw), axis=(1, 2, 3))  # (C, T', H', W', kt, kh, kw)
    to, ho, wo = win.shape[1:4]
    out = np.tensordot(win, weight, axes=([0, 4, 5, 6], [1, 2, 3, 4]))  # (T', H', W', O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += _as32(bias)[None, :, None, None]
    _charge("conv3d", to * o * ho * wo * c * kt * kh * kw)
    return _finite(out, "conv3d")


def deform_conv2d(x, offset, weight, bias=None, padding: int = 1) -> np.ndarray:
    """Deformable convolution (single offset group, no modulation mask), stride 1.

    ``offset`` is (N, 2*kh*kw, H, W) holding (dy, dx) pairs per kernel tap in
    row-major tap order. Taps are read with zero-padded bilinear sampling.
    """
    x, offset, weight = _as32(x), _as32(offset), _as32(weight)
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ContractError(f"deform_conv2d shape mismatch: input {x.shape} vs weight {weight.shape}")
    if offset.shape != (n, 2 * kh * kw, h, w):
        raise ContractError(f"deform_conv2d offset shape {offset.shape} != {(n, 2 * kh * kw, h, w)}")
    ys, xs = np.meshgrid(np.arange(h, dtype=DTYPE), np.arange(w, dtype=DTYPE), indexing="ij")
    cols = np.empty((n, c, kh * kw, h, w), dtype=DTYPE)
    for b in range(n):
        for k in range(kh * kw):
            ky, kx = divmod(k, kw)
            sy = ys + (ky - padding) + offset[b, 2 * k]
            sx = xs + (kx - padding) + offset[b, 2 * k + 1]
            cols[b, :, k] = bilinear_gather(x[b], sx, sy)
    out = np.tensordot(cols, weight.reshape(o, c, kh * kw), axes=([1, 2], [1, 2]))  # (N, H, W, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += _as32(bias)[None, :, None, None]
    _charge("deform_conv2d", n * o * h * w * c * kh * kw + n * c * kh * kw * h * w * 4)
    return _finite(out, "deform_conv2d")


# --------------------------------------------------------------------------
# dense algebra and activations


def matmul(a, b) -> np.ndarray:
    a, b = _as32(a), _as32(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a @ b
    _charge("matmul", int(np.prod(out.shape, dtype=np.int64)) * a.shape[-1])
    return _finite(out, "matmul")


def linear(x, weight, bias=None) -> np.ndarray:
    """Row-wise affine map: ``x`` (Q, in) with ``weight`` (out, in)."""
    x, weight = _as32(x), _as32(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ContractError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        out += _as32(bias)
    _charge("linear", int(np.prod(out.shape, dtype=np.int64)) * weight.shape[1])
    return _finite(out, "linear")


def leaky_relu(x, slope: float = 0.1) -> np.ndarray:
    x = _as32(x)
    return np.where(x >= 0, x, DTYPE(slope) * x)


def gelu(x) -> np.ndarray:
    # exact erf form
    x = _as32(x)
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(DTYPE)


def sigmoid(x) -> np.ndarray:
    x = _as32(x)
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(DTYPE)


def softmax_lastdim(x) -> np.ndarray:
    x = _as32(x)
    if x.shape[-1] < 1:
        raise ContractError("softmax over an empty axis")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return _finite(e / e.sum(axis=-1, keepdims=True), "softmax_lastdim")


def channel_attention(x, fc1_w, fc1_b, fc2_w, fc2_b) -> np.ndarray:
    """Scale each channel of ``x`` (N, C, H, W) by a pooled two-layer sigmoid gate."""
    x = _as32(x)
    pooled = x.mean(axis=(2, 3))
    hidden = np.maximum(linear(pooled, fc1_w, fc1_b), 0)
    gate = sigmoid(linear(hidden, fc2_w, fc2_b))
    return x * gate[:, :, None, None]


# --------------------------------------------------------------------------
# sampling


def bilinear_gather(img, xs, ys) -> np.ndarray:
    """Bilinearly sample ``img`` (C, H, W) at pixel-index coordinates.

    Out-of-grid corners contribute zero. Returns (C, *xs.shape).
    """
    img = _as32(img)
    c, h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros((c,) + xs.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(ok, wy * wx, 0.0) * vals
    return out.astype(DTYPE)


def sample_bilinear(x, px: float, py: float, channel: int, time: int) -> float:
    """Value of channel ``channel`` of frame ``time`` at pixel coordinates (px, py)."""
    x = _as32(x)
    return float(bilinear_gather(x[time, channel : channel + 1], np.array(px), np.array(py))[0])


def trilinear_gather(seq, ts, xs, ys) -> np.ndarray:
    """Trilinear sampling of ``seq`` (T, C, H, W) at index coordinates.

    ``ts`` indexes time, ``xs`` columns and ``ys`` rows. Out-of-range lattice
    points contribute zero. Returns (Q, C) for flat query arrays.
    """
    seq = _as32(seq)
    t_len, c, h, w = seq.shape
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64))
    t0 = np.floor(ts).astype(np.int64)
    ft = ts - t0
    out = np.zeros((ts.size, c), dtype=np.float64)
    for dt, wt in ((0, 1.0 - ft), (1, ft)):
        ti = t0 + dt
        ok = (ti >= 0) & (ti < t_len) & (wt != 0)
        for k in np.unique(np.clip(ti[ok], 0, t_len - 1)):
            sel = ok & (ti == k)
            frame = bilinear_gather(seq[k], xs[sel], ys[sel]).astype(np.float64)
            out[sel] += wt[sel, None] * frame.T
    _charge("trilinear", ts.size * c * 8)
    return out.astype(DTYPE)


def sample_trilinear3d(seq, tau: float, x: float, y: float) -> np.ndarray:
    """Channel vector of ``seq`` at a continuous (tau, x, y) in normalized coordinates.

    ``tau`` in [0, 1] spans the time axis end to end; ``x``, ``y`` place pixel
    centers at (j + 0.5) / W and (i + 0.5) / H.
    """
    seq = _as32(seq)
    t_len, _, h, w = seq.shape
    ti = tau * (t_len - 1) if t_len > 1 else 0.0
    return trilinear_gather(seq, ti, x * w - 0.5, y * h - 0.5)[0]


# --------------------------------------------------------------------------
# resampling


def _resize_axis(x: np.ndarray, out_len: int, axis: int, kernel: str) -> np.ndarray:
    in_len = x.shape[axis]
    if out_len == in_len:
        return x
    centers = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    if kernel == "bilinear":
        taps = [(0, 1.0 - frac), (1, frac)]
    else:
        # Catmull-Rom (a = -0.5)
        a = -0.5

        def cubic(d):
            d = np.abs(d)
            return np.where(
                d <= 1,
                (a + 2) * d**3 - (a + 3) * d**2 + 1,
                np.where(d < 2, a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a, 0.0),
            )

        taps = [(k, cubic(frac - k)) for k in (-1, 0, 1, 2)]
    moved = np.moveaxis(x.astype(np.float64), axis, -1)
    out = np.zeros(moved.shape[:-1] + (out_len,), dtype=np.float64)
    for k, wgt in taps:
        idx = np.clip(base + k, 0, in_len - 1)
        out += moved[..., idx] * wgt
    return np.moveaxis(out, -1, axis)


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of the last two axes, edge-clamped."""
    x = np.asarray(x)
    out = _resize_axis(_resize_axis(x, out_h, x.ndim - 2, "bilinear"), out_w, x.ndim - 1, "bilinear")
    return out.astype(DTYPE)


def resize_bicubic(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered Catmull-Rom resize of the last two axes, edge-clamped, no antialiasing."""
    x = np.asarray(x)
    out = _resize_axis(_resize_axis(x, out_h, x.ndim - 2, "bicubic"), out_w, x.ndim - 1, "bicubic")
    return out.astype(DTYPE)
