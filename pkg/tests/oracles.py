"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's kernels; everything runs in float64 on
plain Python loops so it can be read against the definitions line by line.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def conv2d_ref(x, w, b=None, stride=1, pad=0):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                y = i * stride + ki - pad
                                xx = j * stride + kj - pad
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[bi, ic, y, xx] * w[oc, ic, ki, kj]
                    out[bi, oc, i, j] = acc
    return out


def conv3d_ref(x, w, b=None, pad=1):
    """x (T, C, H, W), w (O, C, kt, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    t, c, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    to, ho, wo = t + 2 * pad - kt + 1, h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((to, o, ho, wo))
    for oc in range(o):
        for a in range(to):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for p in range(kt):
                            for q in range(kh):
                                for r in range(kw):
                                    ta, yi, xj = a + p - pad, i + q - pad, j + r - pad
                                    if 0 <= ta < t and 0 <= yi < h and 0 <= xj < wd:
                                        acc += x[ta, ic, yi, xj] * w[oc, ic, p, q, r]
                    out[a, oc, i, j] = acc
    return out


def bilinear_ref(img, x, y):
    """img (H, W); zero outside; x is the column coordinate."""
    h, w = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    total = 0.0
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                total += wy * wx * float(img[yy, xx])
    return total


def trilinear_ref(seq, t, x, y):
    """seq (T, C, H, W), index coordinates; returns a list over channels."""
    tl, c, h, w = seq.shape
    t0, x0, y0 = math.floor(t), math.floor(x), math.floor(y)
    out = [0.0] * c
    for tt, wt in ((t0, 1 - (t - t0)), (t0 + 1, t - t0)):
        for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
            for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
                if 0 <= tt < tl and 0 <= yy < h and 0 <= xx < w:
                    for ch in range(c):
                        out[ch] += wt * wy * wx * float(seq[tt, ch, yy, xx])
    return out


def deform_conv_ref(x, offset, w, b=None, pad=1):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    out = np.zeros((n, o, h, wd))
    for bi in range(n):
        for i in range(h):
            for j in range(wd):
                taps = []
                for k in range(kh * kw):
                    ki, kj = divmod(k, kw)
                    sy = i + ki - pad + float(offset[bi, 2 * k, i, j])
                    sx = j + kj - pad + float(offset[bi, 2 * k + 1, i, j])
                    taps.append([bilinear_ref(x[bi, ic], sx, sy) for ic in range(c)])
                for oc in range(o):
                    acc = 0.0 if b is None else float(b[oc])
                    for k in range(kh * kw):
                        ki, kj = divmod(k, kw)
                        for ic in range(c):
                            acc += taps[k][ic] * float(w[oc, ic, ki, kj])
                    out[bi, oc, i, j] = acc
    return out


def voxel_ref(events, M, h, w, tau_s, tau_e):
    """Literal tent formula with 1-based bins m = 1..M+1."""
    grid = np.zeros((M + 1, h, w))
    for t, x, y, p in events:
        for m in range(1, M + 2):
            grid[m - 1, y, x] += p * max(0.0, 1 - abs((m - 1) - (t - tau_s) / (tau_e - tau_s) * M))
    return grid


def nearest_rank_ref(values, q=0.98):
    mags = sorted(abs(v) for v in np.ravel(values) if v != 0)
    if not mags:
        return 0.0
    return mags[math.ceil(q * len(mags)) - 1]


def normalize_ref(grid):
    eta = nearest_rank_ref(grid)
    if eta == 0:
        return np.zeros_like(grid)
    return np.array([[[min(max(v, -eta), eta) / eta for v in row] for row in plane] for plane in grid])


def select_ref(M, tau, T_G):
    """Exhaustive search over all subsets in exact arithmetic; ties -> smallest first element.

    A float tau is num/den exactly, so |i/(M+1) - tau| scaled by (M+1)*den is
    the integer |i*den - num*(M+1)|.
    """
    num, den = Fraction(tau).as_integer_ratio()
    dist = [abs(i * den - num * (M + 1)) for i in range(M + 2)]
    best = min(itertools.combinations(range(M + 2), T_G), key=lambda sub: (sum(dist[i] for i in sub), sub))
    return [float(Fraction(i, M + 1)) for i in best]


def softmax_ref(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def gelu_ref(v):
    return 0.5 * v * (1 + math.erf(v / math.sqrt(2)))


def attention_ref(q, keys, values, bias, C):
    """Dense loops: q (C,), keys/values (T, K, C), bias (T, K) -> flat list of T*C."""
    out = []
    for t in range(keys.shape[0]):
        logits = [sum(float(q[c]) * float(keys[t, k, c]) for c in range(len(q))) / math.sqrt(C) + float(bias[t, k])
                  for k in range(keys.shape[1])]
        a = softmax_ref(logits)
        for c in range(keys.shape[2]):
            out.append(sum(a[k] * float(values[t, k, c]) for k in range(keys.shape[1])))
    return out


def mlp_ref(x, layers):
    x = [float(v) for v in x]
    for li, (w, b) in enumerate(layers):
        y = [float(b[o]) + sum(float(w[o, i]) * x[i] for i in range(len(x))) for o in range(w.shape[0])]
        x = [gelu_ref(v) for v in y] if li < len(layers) - 1 else y
    return x


def pe_ref(delta, L):
    out = []
    for d in delta:
        for k in range(L):
            out += [math.sin(2**k * d), math.cos(2**k * d)]
    return out


def livt_query_ref(q_seq, k_seq, v_seq, store, n, tau, x, y, T_G=3, H_G=3, W_G=3, L=10):
    """One query through the whole upsampler, written out step by step.

    q/k/v sequences are (M+2, C, H, W); x, y are normalized with pixel centers
    at (j + 0.5) / W.
    """
    p = f"livt.{n}"
    t_len, C, h, w = q_seq.shape
    M1 = t_len - 1
    stamps = select_ref(M1 - 1, tau, T_G)
    first = round(stamps[0] * M1)
    ix = min(max(x * w - 0.5, 0.0), w - 1.0)
    iy = min(max(y * h - 0.5, 0.0), h - 1.0)
    q_hat = trilinear_ref(q_seq, tau * M1, ix, iy)
    cx = min(max(math.floor(ix + 0.5), 0), w - 1)
    cy = min(max(math.floor(iy + 0.5), 0), h - 1)
    pe_w, pe_b = store[f"{p}.pe.weight"], store[f"{p}.pe.bias"]
    keys = np.zeros((T_G, H_G * W_G, C))
    vals = np.zeros((T_G, H_G * W_G, C))
    bias = np.zeros((T_G, H_G * W_G))
    for s in range(T_G):
        ti = first + s
        k = 0
        for dy in range(-(H_G // 2), H_G // 2 + 1):
            for dx in range(-(W_G // 2), W_G // 2 + 1):
                yy, xx = cy + dy, cx + dx
                if 0 <= yy < h and 0 <= xx < w:
                    keys[s, k] = k_seq[ti, :, yy, xx]
                    vals[s, k] = v_seq[ti, :, yy, xx]
                delta = ((tau - ti / M1) * M1 / T_G, (ix - xx) / W_G, (iy - yy) / H_G)
                enc = pe_ref(delta, L)
                bias[s, k] = float(pe_b[0]) + sum(float(pe_w[0, i]) * enc[i] for i in range(len(enc)))
                k += 1
    z = attention_ref(q_hat, keys, vals, bias, C)
    layers = []
    i = 0
    while f"{p}.mlp.{i}.weight" in store:
        layers.append((store[f"{p}.mlp.{i}.weight"], store[f"{p}.mlp.{i}.bias"]))
        i += 1
    return mlp_ref(z + q_hat, layers)


def bilinear_resize_ref(img, oh, ow):
    """Half-pixel-centered, edge-clamped bilinear resize of an (H, W) map."""
    h, w = img.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
            y0, x0 = math.floor(sy), math.floor(sx)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


# ---------------------------------------------------------------------------
# synthesis backbone, written out straight-line from the loop kernels above


def _lrelu(x):
    return np.where(x >= 0, x, 0.1 * x)


def _sig(x):
    return 1 / (1 + np.exp(-x))


def _c(x, store, name, stride=1):
    w = store[f"easm.{name}.weight"]
    return conv2d_ref(x, w, store[f"easm.{name}.bias"], stride, w.shape[-1] // 2)


def _resize_stack(x, oh, ow):
    return np.array([[bilinear_resize_ref(ch, oh, ow) for ch in img] for img in x])


def _segments_ref(events, M, h, w, duration):
    grid = normalize_ref(voxel_ref(events, M, h, w, *duration))
    return np.array([[grid[m], grid[m + 1]] for m in range(M)])


def _extract_ref(x, store, src):
    y = _lrelu(_c(x, store, f"extract.{src}.conv0"))
    return y + _c(_lrelu(_c(y, store, f"extract.{src}.res.conv1")), store, f"extract.{src}.res.conv2")


def _pyr_ref(x, store, src):
    l2 = _lrelu(_c(x, store, f"pyramid.{src}.l2", stride=2))
    return [x, l2, _lrelu(_c(l2, store, f"pyramid.{src}.l3", stride=2))]


def _align_ref(p0, p1, pe, store):
    out = []
    for m in range(pe[0].shape[0]):
        offset = feat = None
        for lvl in (3, 2, 1):
            a = f"align.l{lvl}"
            pair = np.concatenate([p0[lvl - 1], p1[lvl - 1]], axis=1)
            fe = pe[lvl - 1][m : m + 1]
            h, w = fe.shape[2:]
            mv = _lrelu(_c(pair, store, f"{a}.mv_init"))
            if offset is not None:
                mv = _lrelu(_c(np.concatenate([mv, 2 * _resize_stack(offset, h, w)], axis=1), store, f"{a}.mv_fuse"))
            e = _c(_lrelu(_c(np.concatenate([mv, fe], axis=1), store, f"{a}.emb.conv1")), store, f"{a}.emb.conv2")
            c = mv.shape[1]
            mvt = _sig(e[:, :c]) * mv + e[:, c:]
            offset = _c(np.concatenate([mv, mvt], axis=1), store, f"{a}.offset")
            al = _lrelu(deform_conv_ref(pair, offset, store[f"easm.{a}.dcn.weight"], store[f"easm.{a}.dcn.bias"]))
            if feat is not None:
                al = _lrelu(_c(np.concatenate([al, _resize_stack(feat, h, w)], axis=1), store, f"{a}.feat_fuse"))
            feat = al
        out.append(feat[0])
    return np.array(out)


def _brc_step(x, fe, extra, h, store, d):
    p = f"easm.brc.{d}"
    if fe is not None:
        u = np.concatenate([x, fe], axis=1)
        pooled = u.mean(axis=(2, 3))[0]
        hid = np.maximum(store[f"{p}.ca.fc1.weight"] @ pooled + store[f"{p}.ca.fc1.bias"], 0)
        g = _sig(store[f"{p}.ca.fc2.weight"] @ hid + store[f"{p}.ca.fc2.bias"])
        x = _c(u * g[None, :, None, None], store, f"brc.{d}.ca.proj")
    parts = [x] + ([extra] if extra is not None else [])
    c = x.shape[1]
    parts.append(h if h is not None else np.zeros_like(x))  # zero state == skipped hidden term
    cat = np.concatenate(parts, axis=1)
    z = _sig(_c(cat, store, f"brc.{d}.gate"))
    cand = np.tanh(_c(cat, store, f"brc.{d}.cand"))
    h_new = z * cand if h is None else (1 - z) * h + z * cand
    assert h_new.shape[1] == c
    return _c(h_new, store, f"brc.{d}.out"), h_new


def easm_ref(frames, events, duration, store, M):
    """Whole synthesis backbone for one clip; returns (M+2, C, H, W)."""
    _, _, h, w = frames.shape
    rev = [(duration[0] + duration[1] - t, x, y, -p) for t, x, y, p in events]
    seg_f = _segments_ref(events, M, h, w, duration)
    seg_b = _segments_ref(rev, M, h, w, duration)
    ff = _extract_ref(frames, store, "frame")
    fe_f = _extract_ref(seg_f, store, "event")
    fe_b_rev = _extract_ref(seg_b, store, "event")
    p0, p1 = _pyr_ref(ff[0:1], store, "frame"), _pyr_ref(ff[1:2], store, "frame")
    al_f = _align_ref(p0, p1, _pyr_ref(fe_f, store, "event"), store)
    al_b = _align_ref(p1, p0, _pyr_ref(fe_b_rev, store, "event"), store)[::-1]
    fe_b = fe_b_rev[::-1]
    mid = _c(np.concatenate([al_f, al_b], axis=1), store, "fuse.conv")
    f_star = np.concatenate([ff[0:1], mid, ff[1:2]], axis=0)
    n = M + 2
    o_b, h_state = [None] * n, None
    for i in reversed(range(n)):
        fe = fe_b[i - 1 : i] if 0 < i < n - 1 else None
        o_b[i], h_state = _brc_step(f_star[i : i + 1], fe, None, h_state, store, "b")
    out, h_state = [], None
    for i in range(n):
        fe = fe_f[i - 1 : i] if 0 < i < n - 1 else None
        o, h_state = _brc_step(f_star[i : i + 1], fe, o_b[i], h_state, store, "f")
        out.append(o[0])
    return f_star + np.array(out)
