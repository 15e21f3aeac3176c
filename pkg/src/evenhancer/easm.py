"""Event-adapted synthesis: event-modulated pyramid alignment plus
bidirectional recurrent compensation, producing the latent feature sequence
at timestamps {0, 1/(M+1), ..., 1}.

All parameters live in a :class:`~evenhancer.weights.WeightStore` under the
``easm.`` prefix; see :func:`easm_shapes` for the full list.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, segments_for
from .tensor_core import (
    DTYPE,
    ContractError,
    channel_attention,
    conv2d,
    deform_conv2d,
    downsample_conv,
    leaky_relu,
    resize_bilinear,
    sigmoid,
)

LEVELS = 3
CA_REDUCTION = 4
OFFSET_CHANNELS = 18  # (dy, dx) for each of the 9 taps of a 3x3 kernel


def easm_shapes(C: int = 64, reduction: int = CA_REDUCTION) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, o, i, k=3):
        shapes[f"easm.{name}.weight"] = (o, i, k, k)
        shapes[f"easm.{name}.bias"] = (o,)

    def fc(name, o, i):
        shapes[f"easm.{name}.weight"] = (o, i)
        shapes[f"easm.{name}.bias"] = (o,)

    for src, cin in (("frame", 3), ("event", 2)):
        conv(f"extract.{src}.conv0", C, cin)
        conv(f"extract.{src}.res.conv1", C, C)
        conv(f"extract.{src}.res.conv2", C, C)
        conv(f"pyramid.{src}.l2", C, C)
        conv(f"pyramid.{src}.l3", C, C)
    for lvl in range(1, LEVELS + 1):
        a = f"align.l{lvl}"
        conv(f"{a}.mv_init", C, 2 * C)
        if lvl < LEVELS:
            conv(f"{a}.mv_fuse", C, C + OFFSET_CHANNELS)
            conv(f"{a}.feat_fuse", C, 2 * C)
        conv(f"{a}.emb.conv1", C, 2 * C)
        conv(f"{a}.emb.conv2", 2 * C, C)
        conv(f"{a}.offset", OFFSET_CHANNELS, 2 * C)
        conv(f"{a}.dcn", C, 2 * C)
    conv("fuse.conv", C, 2 * C, k=1)
    hidden = max(1, 2 * C // reduction)
    for d, extra in (("b", 0), ("f", C)):
        fc(f"brc.{d}.ca.fc1", hidden, 2 * C)
        fc(f"brc.{d}.ca.fc2", 2 * C, hidden)
        conv(f"brc.{d}.ca.proj", C, 2 * C, k=1)
        conv(f"brc.{d}.gate", C, 2 * C + extra)
        conv(f"brc.{d}.cand", C, 2 * C + extra)
        conv(f"brc.{d}.out", C, C)
    return shapes


def _conv(x, store, name, **kw):
    w = store[f"easm.{name}.weight"]
    return conv2d(x, w, store[f"easm.{name}.bias"], padding=w.shape[-1] // 2, **kw)


@dataclass
class MotionState:
    motion_vector: np.ndarray
    modulated: np.ndarray
    offset: np.ndarray


# --------------------------------------------------------------------------
# feature extraction


def _extract(x, store, src):
    y = leaky_relu(_conv(x, store, f"extract.{src}.conv0"))
    r = _conv(leaky_relu(_conv(y, store, f"extract.{src}.res.conv1")), store, f"extract.{src}.res.conv2")
    return y + r


def extract_initial(frames, seg_forward, seg_backward, store):
    """Frame features (2, C, H, W) and event-segment features for both directions (M, C, H, W)."""
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 4 or frames.shape[:2] != (2, 3):
        raise ContractError(f"expected frames of shape (2, 3, H, W), got {frames.shape}")
    segs_f = np.asarray(getattr(seg_forward, "segments", seg_forward), dtype=DTYPE)
    segs_b = np.asarray(getattr(seg_backward, "segments", seg_backward), dtype=DTYPE)
    if segs_f.shape != segs_b.shape or segs_f.shape[2:] != frames.shape[2:]:
        raise ContractError(f"segments {segs_f.shape}/{segs_b.shape} do not match frames {frames.shape}")
    return _extract(frames, store, "frame"), _extract(segs_f, store, "event"), _extract(segs_b, store, "event")


def build_pyramid(feats, store, src) -> list[np.ndarray]:
    """Levels at x1, x1/2, x1/4 via stride-2 convolutions (ceil division)."""
    levels = [np.asarray(feats, dtype=DTYPE)]
    for lvl in (2, 3):
        name = f"pyramid.{src}.l{lvl}"
        levels.append(leaky_relu(downsample_conv(levels[-1], store[f"easm.{name}.weight"], store[f"easm.{name}.bias"])))
    return levels


# --------------------------------------------------------------------------
# event-modulated alignment


def modulate(mv, f_event, store, level: int) -> np.ndarray:
    """Event modulation block: gate * mv + residual, gate and residual predicted from [mv, f_event]."""
    mv = np.asarray(mv, dtype=DTYPE)
    f_event = np.asarray(f_event, dtype=DTYPE)
    if mv.shape != f_event.shape:
        raise ContractError(f"modulate: motion {mv.shape} vs event feature {f_event.shape}")
    a = f"align.l{level}.emb"
    h = leaky_relu(_conv(np.concatenate([mv, f_event], axis=1), store, f"{a}.conv1"))
    out = _conv(h, store, f"{a}.conv2")
    c = mv.shape[1]
    return sigmoid(out[:, :c]) * mv + out[:, c:]


def align_pyramid(frame_pyr_0, frame_pyr_1, event_pyr, store, return_states: bool = False):
    """Align the two frames toward each of the M event segments, coarse to fine.

    ``frame_pyr_*`` are lists of (1, C, h, w) levels; ``event_pyr`` a list of
    (M, C, h, w) levels. Returns the (M, C, H, W) finest-level aligned features.
    """
    m = event_pyr[0].shape[0]
    offset = feat = None
    states = []
    for lvl in range(LEVELS, 0, -1):
        f0, f1, fe = frame_pyr_0[lvl - 1], frame_pyr_1[lvl - 1], event_pyr[lvl - 1]
        h, w = fe.shape[2:]
        a = f"align.l{lvl}"
        pair = np.concatenate([f0, f1], axis=1)
        mv = np.repeat(leaky_relu(_conv(pair, store, f"{a}.mv_init")), m, axis=0)
        if offset is not None:
            up = resize_bilinear(offset, h, w) * DTYPE(2.0)
            mv = leaky_relu(_conv(np.concatenate([mv, up], axis=1), store, f"{a}.mv_fuse"))
        mvt = modulate(mv, fe, store, lvl)
        offset = _conv(np.concatenate([mv, mvt], axis=1), store, f"{a}.offset")
        aligned = leaky_relu(deform_conv2d(np.repeat(pair, m, axis=0), offset,
                                           store[f"easm.{a}.dcn.weight"], store[f"easm.{a}.dcn.bias"]))
        if feat is not None:
            aligned = leaky_relu(_conv(np.concatenate([aligned, resize_bilinear(feat, h, w)], axis=1),
                                       store, f"{a}.feat_fuse"))
        feat = aligned
        states.append(MotionState(mv, mvt, offset))
    return (feat, states) if return_states else feat


def fuse_directions(f_forward, f_backward, f0, f1, store) -> np.ndarray:
    """1x1 fusion of the two directions, bracketed by the frame features: (M+2, C, H, W)."""
    f_forward = np.asarray(f_forward, dtype=DTYPE)
    f_backward = np.asarray(f_backward, dtype=DTYPE)
    if f_forward.shape != f_backward.shape:
        raise ContractError(f"direction lists differ: {f_forward.shape} vs {f_backward.shape}")
    mid = _conv(np.concatenate([f_forward, f_backward], axis=1), store, "fuse.conv")
    return np.concatenate([np.asarray(f0, DTYPE)[None], mid, np.asarray(f1, DTYPE)[None]], axis=0)


# --------------------------------------------------------------------------
# bidirectional recurrent compensation


def _split_conv(parts, store, name):
    """Convolution over the channel concat of ``parts``; ``None`` parts are skipped."""
    w, b = store[f"easm.{name}.weight"], store[f"easm.{name}.bias"]
    out, start = None, 0
    for p in parts:
        c = p[1] if isinstance(p, tuple) else p.shape[1]
        if not isinstance(p, tuple):
            y = conv2d(p, w[:, start : start + c], padding=w.shape[-1] // 2)
            out = y if out is None else out + y
        start += c
    if start != w.shape[1]:
        raise ContractError(f"{name}: {start} input channels vs weight {w.shape}")
    return out + b[None, :, None, None]


def _attend(frame_feat, event_feat, store, d):
    u = np.concatenate([frame_feat, event_feat], axis=1)
    ca = f"easm.brc.{d}.ca"
    u = channel_attention(u, store[f"{ca}.fc1.weight"], store[f"{ca}.fc1.bias"],
                          store[f"{ca}.fc2.weight"], store[f"{ca}.fc2.bias"])
    return _conv(u, store, f"brc.{d}.ca.proj")


def _cell(inputs, h, store, d):
    """Gated update h' = (1 - z) h + z tanh(cand); the hidden term is dropped when there is no state."""
    c = inputs[0].shape[1]
    hidden = h if h is not None else (None, c)
    z = sigmoid(_split_conv([*inputs, hidden], store, f"brc.{d}.gate"))
    cand = np.tanh(_split_conv([*inputs, hidden], store, f"brc.{d}.cand"))
    h_new = z * cand if h is None else (1 - z) * h + z * cand
    return _conv(h_new, store, f"brc.{d}.out"), h_new.astype(DTYPE)


def recurrent_compensate(f_star, fe_forward, fe_backward, store) -> np.ndarray:
    """Backward sweep from tau=1 to 0, then a forward sweep consuming the backward outputs.

    ``fe_*`` hold the M interior event features in timestamp order; the two
    endpoint steps have no event segment and use the frame feature alone.
    """
    f_star = np.asarray(f_star, dtype=DTYPE)
    t_len = f_star.shape[0]
    if len(fe_forward) != t_len - 2 or len(fe_backward) != t_len - 2:
        raise ContractError(f"{len(fe_forward)}/{len(fe_backward)} event features for a sequence of {t_len}")

    def step_input(i, fe, d):
        x = f_star[i : i + 1]
        if 0 < i < t_len - 1:
            return _attend(x, fe[i - 1 : i], store, d)
        return x

    o_b = [None] * t_len
    h = None
    for i in range(t_len - 1, -1, -1):
        o_b[i], h = _cell([step_input(i, fe_backward, "b")], h, store, "b")
    out = np.empty_like(f_star)
    h = None
    for i in range(t_len):
        o_f, h = _cell([step_input(i, fe_forward, "f"), o_b[i]], h, store, "f")
        out[i] = o_f[0]
    return out


# --------------------------------------------------------------------------


def easm(frames, stream: EventStream, store, M: int = 7, return_parts: bool = False):
    """Latent feature sequence (M+2, C, H, W) for two LR frames and their event stream."""
    frames = np.asarray(frames, dtype=DTYPE)
    size = frames.shape[2:]
    seg_f = segments_for(stream, M, size)
    seg_b = segments_for(stream, M, size, backward=True)
    f_frames, fe_f, fe_b_rev = extract_initial(frames, seg_f, seg_b, store)

    pyr0 = build_pyramid(f_frames[0:1], store, "frame")
    pyr1 = build_pyramid(f_frames[1:2], store, "frame")
    aligned_f = align_pyramid(pyr0, pyr1, build_pyramid(fe_f, store, "event"), store)
    # backward branch runs on the time-reversed problem, then is put back in timestamp order
    aligned_b = align_pyramid(pyr1, pyr0, build_pyramid(fe_b_rev, store, "event"), store)[::-1]
    fe_b = fe_b_rev[::-1]

    f_star = fuse_directions(aligned_f, aligned_b, f_frames[0], f_frames[1], store)
    brc = recurrent_compensate(f_star, fe_f, fe_b, store)
    f_hat = f_star + brc
    if return_parts:
        return f_hat, {"f_star": f_star, "brc": brc, "aligned_f": aligned_f, "aligned_b": aligned_b,
                       "fe_f": fe_f, "fe_b": fe_b, "segments_f": seg_f, "segments_b": seg_b}
    return f_hat
