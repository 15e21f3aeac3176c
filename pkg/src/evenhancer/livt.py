"""Local implicit video transformer: continuous (tau, x, y) -> RGB.

Coordinates are normalized: tau in [0, 1] spans the latent sequence, and
x, y put pixel centers at (j + 0.5) / W and (i + 0.5) / H on both the LR and
HR lattices. Queries are processed in fixed-size tiles so a pixel's value
never depends on which other pixels are rendered alongside it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import (
    DTYPE,
    ContractError,
    _charge,
    conv3d,
    current_ledger,
    gelu,
    linear,
    softmax_lastdim,
    trilinear_gather,
    use_ledger,
)

QUERY_TILE = 256
TIE_TOL = 1e-12


def timestamp_grid(M: int) -> np.ndarray:
    """Latent timestamps {0, 1/(M+1), ..., M/(M+1), 1}."""
    return np.arange(M + 2, dtype=np.float64) / (M + 1)


@dataclass(frozen=True)
class LocalGridSpec:
    T_G: int = 3
    H_G: int = 3
    W_G: int = 3

    def __post_init__(self):
        for v in (self.T_G, self.H_G, self.W_G):
            if v < 1 or v % 2 == 0:
                raise ContractError(f"local grid extents must be odd and positive: {self}")

    @property
    def window(self) -> int:
        return self.H_G * self.W_G


@dataclass
class QueryBatch:
    taus: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    shape: tuple[int, int] | None = None

    @classmethod
    def frame(cls, tau: float, out_h: int, out_w: int) -> "QueryBatch":
        ys, xs = np.meshgrid((np.arange(out_h) + 0.5) / out_h, (np.arange(out_w) + 0.5) / out_w, indexing="ij")
        return cls(np.full(out_h * out_w, float(tau)), xs.ravel(), ys.ravel(), (out_h, out_w))

    def subset(self, index) -> "QueryBatch":
        return QueryBatch(self.taus[index], self.xs[index], self.ys[index])

    def __len__(self) -> int:
        return self.taus.size


@dataclass
class UpsamplerWeights:
    q_w: np.ndarray
    q_b: np.ndarray
    k_w: np.ndarray
    k_b: np.ndarray
    v_w: np.ndarray
    v_b: np.ndarray
    pe_w: np.ndarray
    pe_b: np.ndarray
    mlp: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    L: int = 10

    @property
    def C(self) -> int:
        return self.q_w.shape[0]

    @classmethod
    def from_store(cls, store, n: int, L: int = 10) -> "UpsamplerWeights":
        p = f"livt.{n}"
        mlp = []
        i = 0
        while f"{p}.mlp.{i}.weight" in store:
            mlp.append((store[f"{p}.mlp.{i}.weight"], store[f"{p}.mlp.{i}.bias"]))
            i += 1
        return cls(
            store[f"{p}.qkv.q.weight"], store[f"{p}.qkv.q.bias"],
            store[f"{p}.qkv.k.weight"], store[f"{p}.qkv.k.bias"],
            store[f"{p}.qkv.v.weight"], store[f"{p}.qkv.v.bias"],
            store[f"{p}.pe.weight"], store[f"{p}.pe.bias"], mlp, L,
        )


def livt_shapes(n: int, C: int, C_in: int = 64, hidden: int = 256, L: int = 10,
                spec: LocalGridSpec = LocalGridSpec(), layers: int = 5) -> dict[str, tuple[int, ...]]:
    """Parameter shapes of pathway ``n`` with embedding width ``C``."""
    p = f"livt.{n}"
    shapes: dict[str, tuple[int, ...]] = {}
    for key in ("q", "k", "v"):
        shapes[f"{p}.qkv.{key}.weight"] = (C, C_in, 3, 3, 3)
        shapes[f"{p}.qkv.{key}.bias"] = (C,)
    shapes[f"{p}.pe.weight"] = (1, 6 * L)
    shapes[f"{p}.pe.bias"] = (1,)
    dims = [spec.T_G * C + C] + [hidden] * (layers - 1) + [3]
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        shapes[f"{p}.mlp.{i}.weight"] = (b, a)
        shapes[f"{p}.mlp.{i}.bias"] = (b,)
    return shapes


# --------------------------------------------------------------------------
# temporal selection


def window_start(grid: np.ndarray, tau: float, T_G: int) -> int:
    """First index of the size-T_G contiguous window nearest to ``tau``.

    Ties within TIE_TOL go to the earlier window.
    """
    n = len(grid)
    if T_G > n or T_G < 1:
        raise ContractError(f"T_G={T_G} does not fit a grid of {n} timestamps")
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"tau={tau} outside [0, 1]")
    dist = np.abs(np.asarray(grid, dtype=np.float64) - tau)
    sums = np.convolve(dist, np.ones(T_G), mode="valid")
    return int(np.flatnonzero(sums <= sums.min() + TIE_TOL)[0])


def select_timestamps(grid: np.ndarray, tau: float, T_G: int) -> np.ndarray:
    start = window_start(grid, tau, T_G)
    return np.asarray(grid[start : start + T_G])


# --------------------------------------------------------------------------
# building blocks


def encode_qkv(features, weights: UpsamplerWeights):
    """3x3x3 convolutions of a (T, C_in, H, W) sequence into query/key/value sequences."""
    features = np.asarray(features, dtype=DTYPE)
    if features.ndim != 4 or features.shape[1] != weights.q_w.shape[1]:
        raise ContractError(f"encode_qkv: features {features.shape} vs kernel {weights.q_w.shape}")
    pad = weights.q_w.shape[-1] // 2
    return tuple(
        conv3d(features, w, b, padding=pad)
        for w, b in ((weights.q_w, weights.q_b), (weights.k_w, weights.k_b), (weights.v_w, weights.v_b))
    )


def positional_encoding(delta, L: int = 10) -> np.ndarray:
    """Expand (..., 3) offsets to (..., 6L) as [sin(2^0 d), cos(2^0 d), ..., cos(2^(L-1) d)] per coordinate."""
    delta = np.asarray(delta, dtype=np.float64)
    freqs = 2.0 ** np.arange(L)
    ang = delta[..., :, None] * freqs  # (..., 3, L)
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 3, L, 2)
    return enc.reshape(delta.shape[:-1] + (delta.shape[-1] * 2 * L,)).astype(DTYPE)


def positional_bias(delta, L: int, pe_w, pe_b) -> np.ndarray:
    """Project encoded offsets to one additive attention logit per grid cell."""
    enc = positional_encoding(delta, L)
    lead = enc.shape[:-1]
    return linear(enc.reshape(-1, enc.shape[-1]), pe_w, pe_b).reshape(lead)


def local_attention(q_hat, keys, values, bias, C: int | None = None, return_weights: bool = False):
    """Per-slice softmax attention.

    Shapes: ``q_hat`` (Q, C); ``keys``/``values`` (Q, T, K, C); ``bias`` (Q, T, K).
    Each slice gets its own softmax over its K window cells; the T slice outputs
    are concatenated to (Q, T*C).
    """
    q_hat = np.asarray(q_hat, dtype=DTYPE)
    keys = np.asarray(keys, dtype=DTYPE)
    values = np.asarray(values, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if keys.shape != values.shape or keys.shape[:3] != bias.shape or keys.shape[0] != q_hat.shape[0] \
            or keys.shape[3] != q_hat.shape[1]:
        raise ContractError(f"local_attention shapes: q {q_hat.shape}, k {keys.shape}, v {values.shape}, b {bias.shape}")
    C = q_hat.shape[1] if C is None else C
    nq, t, k, c = keys.shape
    logits = np.einsum("qc,qtkc->qtk", q_hat, keys) / DTYPE(np.sqrt(C)) + bias
    attn = softmax_lastdim(logits)
    z = np.einsum("qtk,qtkc->qtc", attn, values)
    _charge("attention", 2 * nq * t * k * c)
    z = z.reshape(nq, t * c).astype(DTYPE)
    return (z, attn) if return_weights else z


def decode(z, q_hat, mlp) -> np.ndarray:
    """MLP on [z, q_hat] with GELU between layers and none after the last."""
    x = np.concatenate([np.asarray(z, dtype=DTYPE), np.asarray(q_hat, dtype=DTYPE)], axis=1)
    if mlp and x.shape[1] != mlp[0][0].shape[1]:
        raise ContractError(f"decode input width {x.shape[1]} != MLP input {mlp[0][0].shape[1]}")
    for i, (w, b) in enumerate(mlp):
        x = linear(x, w, b)
        if i < len(mlp) - 1:
            x = gelu(x)
    return x


# --------------------------------------------------------------------------
# query evaluation


def _gather_windows(seq, ti, cy, cx, spec: LocalGridSpec):
    """Zero-padded H_G x W_G windows of ``seq`` centered at (cy, cx) for time indices ``ti`` (Q, T)."""
    hy, hx = spec.H_G // 2, spec.W_G // 2
    padded = np.pad(seq, ((0, 0), (0, 0), (hy, hy), (hx, hx)))
    dy, dx = np.meshgrid(np.arange(-hy, hy + 1), np.arange(-hx, hx + 1), indexing="ij")
    yy = (cy[:, None] + dy.ravel()[None] + hy)[:, None, :]  # (Q, 1, K)
    xx = (cx[:, None] + dx.ravel()[None] + hx)[:, None, :]
    return padded[ti[:, :, None], :, yy, xx]  # (Q, T, K, C)


def _query_tile(qkv, weights: UpsamplerWeights, spec: LocalGridSpec, grid, taus, xs, ys, return_attention=False):
    Q, K, V = qkv
    t_len, c, h, w = Q.shape
    M1 = t_len - 1
    starts = np.empty(taus.size, dtype=np.int64)
    for tau in np.unique(taus):
        starts[taus == tau] = window_start(grid, float(tau), spec.T_G)
    ti = starts[:, None] + np.arange(spec.T_G)[None]  # (Q, T)

    ix = np.clip(xs * w - 0.5, 0.0, w - 1.0)
    iy = np.clip(ys * h - 0.5, 0.0, h - 1.0)
    t_idx = np.clip(taus * M1, starts, starts + spec.T_G - 1)
    q_hat = trilinear_gather(Q, t_idx, ix, iy)

    cx = np.clip(np.floor(ix + 0.5), 0, w - 1).astype(np.int64)
    cy = np.clip(np.floor(iy + 0.5), 0, h - 1).astype(np.int64)
    k_hat = _gather_windows(K, ti, cy, cx, spec)
    v_hat = _gather_windows(V, ti, cy, cx, spec)

    hy, hx = spec.H_G // 2, spec.W_G // 2
    dy, dx = np.meshgrid(np.arange(-hy, hy + 1), np.arange(-hx, hx + 1), indexing="ij")
    d_tau = (taus[:, None] - grid[ti]) * M1 / spec.T_G  # (Q, T)
    d_x = (ix[:, None] - (cx[:, None] + dx.ravel()[None])) / spec.W_G  # (Q, K)
    d_y = (iy[:, None] - (cy[:, None] + dy.ravel()[None])) / spec.H_G
    n, kk = taus.size, spec.window
    delta = np.stack(np.broadcast_arrays(d_tau[:, :, None], d_x[:, None, :], d_y[:, None, :]), axis=-1)
    bias = positional_bias(delta.reshape(n, spec.T_G, kk, 3), weights.L, weights.pe_w, weights.pe_b)

    z, attn = local_attention(q_hat, k_hat, v_hat, bias, weights.C, return_weights=True)
    rgb = decode(z, q_hat, weights.mlp)
    if return_attention:
        return rgb, attn
    return rgb


def render_queries(qkv, weights: UpsamplerWeights, queries: QueryBatch, spec: LocalGridSpec = LocalGridSpec()) -> np.ndarray:
    """RGB (Q, 3) for every query, evaluated in padded tiles of QUERY_TILE rows."""
    t_len = qkv[0].shape[0]
    if spec.T_G > t_len:
        raise ContractError(f"T_G={spec.T_G} exceeds sequence length {t_len}")
    grid = timestamp_grid(t_len - 2) if t_len >= 2 else np.zeros(1)
    n = len(queries)
    out = np.empty((n, 3), dtype=DTYPE)
    ledger = current_ledger()
    for s in range(0, n, QUERY_TILE):
        m = min(QUERY_TILE, n - s)
        pick = np.concatenate([np.arange(s, s + m), np.full(QUERY_TILE - m, s)])
        with use_ledger() as local:
            rgb = _query_tile(qkv, weights, spec, grid, queries.taus[pick], queries.xs[pick], queries.ys[pick])
        ledger.merge(local, m, QUERY_TILE)
        out[s : s + m] = rgb[:m]
    return out


def upsample(features, weights: UpsamplerWeights, queries: QueryBatch, spec: LocalGridSpec = LocalGridSpec()) -> np.ndarray:
    """Encode ``features`` and render ``queries``; a frame batch is returned as (3, sH, sW)."""
    qkv = encode_qkv(features, weights)
    rgb = render_queries(qkv, weights, queries, spec)
    if queries.shape is not None:
        return np.ascontiguousarray(rgb.T.reshape(3, *queries.shape))
    return rgb


def per_query_cost(weights: UpsamplerWeights, lr_shape: tuple[int, int], M: int,
                   spec: LocalGridSpec = LocalGridSpec()) -> int:
    """Multiply-adds charged per rendered query (independent of query position)."""
    dummy = tuple(np.zeros((M + 2, weights.C, *lr_shape), dtype=DTYPE) for _ in range(3))
    with use_ledger() as led:
        render_queries(dummy, weights, QueryBatch(np.array([0.5]), np.array([0.5]), np.array([0.5])), spec)
    return led.total()


def encode_cost(weights: UpsamplerWeights, lr_shape: tuple[int, int], M: int) -> int:
    """Multiply-adds of the three 3D convolutions over an (M+2)-step sequence."""
    o, c, kt, kh, kw = weights.q_w.shape
    return 3 * (M + 2) * lr_shape[0] * lr_shape[1] * o * c * kt * kh * kw
