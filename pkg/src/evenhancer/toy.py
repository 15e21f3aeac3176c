"""The bundled 8x8 toy clip: two frames of a square sliding over a gradient,
plus the events a thresholded log-intensity sensor would emit in between.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .events import EventStream, read_events, write_events
from .imageio import read_frame, write_frame

SIZE = 8
CONTRAST = 0.15
SUBSTEPS = 64


def _scene(tau: float) -> np.ndarray:
    """RGB frame (3, 8, 8) at normalized time ``tau``."""
    ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    base = 0.2 + 0.05 * xs + 0.02 * ys
    left = 1.0 + 3.0 * tau  # square's left edge slides from column 1 to 4
    cover_x = np.clip(np.minimum(xs + 1, left + 3) - np.maximum(xs, left), 0, 1)
    cover_y = ((ys >= 2) & (ys <= 4)).astype(np.float64)
    lum = base + 0.5 * cover_x * cover_y
    return np.stack([lum, 0.8 * lum + 0.1, 0.6 * lum + 0.05]).clip(0, 1)


def make_toy_clip() -> tuple[np.ndarray, EventStream]:
    """Deterministically regenerate the clip (frames at tau = 0 and 1, events in between)."""
    ts, xs, ys, ps = [], [], [], []
    luma = lambda f: 0.299 * f[0] + 0.587 * f[1] + 0.114 * f[2]  # noqa: E731
    ref = np.log(luma(_scene(0.0)))
    prev = ref.copy()
    for k in range(1, SUBSTEPS + 1):
        t0, t1 = (k - 1) / SUBSTEPS, k / SUBSTEPS
        cur = np.log(luma(_scene(t1)))
        for y in range(SIZE):
            for x in range(SIZE):
                while abs(cur[y, x] - ref[y, x]) >= CONTRAST:
                    sign = 1 if cur[y, x] > ref[y, x] else -1
                    target = ref[y, x] + sign * CONTRAST
                    frac = (target - prev[y, x]) / (cur[y, x] - prev[y, x])
                    ts.append(round(t0 + frac * (t1 - t0), 6))
                    xs.append(x)
                    ys.append(y)
                    ps.append(sign)
                    ref[y, x] = target
        prev = cur
    frames = np.stack([_scene(0.0), _scene(1.0)]).astype(np.float32)
    return frames, EventStream(ts, xs, ys, ps, (SIZE, SIZE), (0.0, 1.0), CONTRAST)


def data_dir() -> Path:
    return Path(str(resources.files("evenhancer") / "data" / "toy"))


def load_toy_clip() -> tuple[np.ndarray, EventStream]:
    """Frames (2, 3, 8, 8) as stored (8-bit quantized) and the event stream."""
    d = data_dir()
    frames = np.stack([read_frame(d / "frame0.ppm"), read_frame(d / "frame1.ppm")])
    return frames, read_events(d / "events.txt")


def write_toy_clip(directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames, stream = make_toy_clip()
    write_frame(directory / "frame0.ppm", frames[0])
    write_frame(directory / "frame1.ppm", frames[1])
    write_events(stream, directory / "events.txt")
