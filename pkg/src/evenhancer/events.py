"""Event streams and their voxel-grid representation."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .tensor_core import DTYPE, ContractError, resize_bicubic

PERCENTILE = 0.98
BINARY_MAGIC = b"EVT1"
_BINARY_HEADER = struct.Struct("<4sIIddQ")
_BINARY_RECORD = np.dtype([("t", "<f8"), ("x", "<i4"), ("y", "<i4"), ("p", "i1")])


class EventRecord(NamedTuple):
    timestamp: float
    x: int
    y: int
    polarity: int


class EventStream:
    """Time-sorted events on an H x W sensor over ``duration = (tau_s, tau_e)``.

    Records are held column-wise (``t``, ``x``, ``y``, ``p``). The constructor
    validates ranges and sorts by timestamp (stable).
    """

    def __init__(self, t, x, y, p, resolution, duration, contrast_threshold=None):
        self.t = np.asarray(t, dtype=np.float64).ravel()
        self.x = np.asarray(x, dtype=np.int64).ravel()
        self.y = np.asarray(y, dtype=np.int64).ravel()
        self.p = np.asarray(p, dtype=np.int64).ravel()
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.duration = (float(duration[0]), float(duration[1]))
        self.contrast_threshold = contrast_threshold
        self._validate()
        order = np.argsort(self.t, kind="stable")
        if np.any(order != np.arange(order.size)):
            self.t, self.x, self.y, self.p = self.t[order], self.x[order], self.y[order], self.p[order]

    def _validate(self):
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ContractError("event columns have different lengths")
        h, w = self.resolution
        tau_s, tau_e = self.duration
        if h < 1 or w < 1:
            raise ContractError(f"bad sensor resolution {self.resolution}")
        if not tau_s < tau_e:
            raise ContractError(f"empty duration {self.duration}")
        if n:
            if not np.all(np.isin(self.p, (-1, 1))):
                raise ContractError("polarity must be +1 or -1")
            if self.x.min() < 0 or self.x.max() >= w or self.y.min() < 0 or self.y.max() >= h:
                raise ContractError(f"event coordinates outside {h}x{w} sensor")
            if self.t.min() < tau_s or self.t.max() > tau_e:
                raise ContractError(f"event timestamps outside duration {self.duration}")

    @classmethod
    def from_records(cls, records: Iterable, resolution, duration, contrast_threshold=None):
        rows = [tuple(r) for r in records]
        cols = list(zip(*rows)) if rows else [(), (), (), ()]
        return cls(*cols, resolution=resolution, duration=duration, contrast_threshold=contrast_threshold)

    @property
    def records(self) -> list[EventRecord]:
        return [EventRecord(float(t), int(x), int(y), int(p)) for t, x, y, p in zip(self.t, self.x, self.y, self.p)]

    def __len__(self) -> int:
        return self.t.size

    def __repr__(self) -> str:
        return f"EventStream({len(self)} events, {self.resolution[0]}x{self.resolution[1]}, duration={self.duration})"

    def replicate(self, k: int) -> "EventStream":
        """Every event repeated ``k`` times."""
        return EventStream(
            np.repeat(self.t, k), np.repeat(self.x, k), np.repeat(self.y, k), np.repeat(self.p, k),
            self.resolution, self.duration, self.contrast_threshold,
        )

    def normalized_time(self) -> np.ndarray:
        tau_s, tau_e = self.duration
        return (self.t - tau_s) / (tau_e - tau_s)


@dataclass
class VoxelGrid:
    """Signed (M+1, H, W) accumulation of events."""

    bins: np.ndarray

    @property
    def M(self) -> int:
        return self.bins.shape[0] - 1


@dataclass
class EventSegments:
    """M stacked pairs of consecutive bins, shape (M, 2, H, W)."""

    segments: np.ndarray
    direction: str = "forward"

    @property
    def M(self) -> int:
        return self.segments.shape[0]


def voxelize(stream: EventStream, M: int) -> VoxelGrid:
    """Tent-weighted signed voxel grid with M+1 bins.

    Bin m (0-based) receives ``p * max(0, 1 - |m - M * tn|)`` from each event
    at normalized time ``tn``. Accumulation is done in float64.
    """
    if M < 1:
        raise ContractError(f"voxelize needs M >= 1, got {M}")
    h, w = stream.resolution
    grid = np.zeros((M + 1, h, w), dtype=np.float64)
    if len(stream):
        pos = M * stream.normalized_time()
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        for b, wgt in ((lo, 1.0 - frac), (lo + 1, frac)):
            ok = (b >= 0) & (b <= M) & (wgt > 0)
            np.add.at(grid, (b[ok], stream.y[ok], stream.x[ok]), stream.p[ok] * wgt[ok])
    return VoxelGrid(grid)


def hot_pixel_level(values: np.ndarray) -> float:
    """Nearest-rank 98th percentile of |v| over the non-zero entries (0.0 if none)."""
    mags = np.sort(np.abs(values[values != 0]).ravel())
    if mags.size == 0:
        return 0.0
    rank = math.ceil(PERCENTILE * mags.size)
    return float(mags[rank - 1])


def normalize(grid: VoxelGrid) -> VoxelGrid:
    """Clamp to +-eta and divide by eta, eta being :func:`hot_pixel_level` of the whole grid."""
    bins = np.asarray(grid.bins, dtype=np.float64)
    if not np.all(np.isfinite(bins)):
        raise ContractError("voxel grid contains non-finite values")
    eta = hot_pixel_level(bins)
    if eta == 0.0:
        return VoxelGrid(np.zeros(bins.shape, dtype=DTYPE))
    return VoxelGrid((np.clip(bins, -eta, eta) / eta).astype(DTYPE))


def to_segments(grid: VoxelGrid, direction: str = "forward") -> EventSegments:
    if grid.M < 1:
        raise ContractError("segments need at least two bins")
    bins = np.asarray(grid.bins, dtype=DTYPE)
    segs = np.stack([bins[:-1], bins[1:]], axis=1)
    return EventSegments(segs, direction)


def reverse(stream: EventStream) -> EventStream:
    """Mirror timestamps inside the duration and flip polarities."""
    tau_s, tau_e = stream.duration
    return EventStream(
        (tau_s + tau_e) - stream.t, stream.x, stream.y, -stream.p,
        stream.resolution, stream.duration, stream.contrast_threshold,
    )


def segments_for(stream: EventStream, M: int, size: tuple[int, int] | None = None, backward: bool = False) -> EventSegments:
    """Voxelize, normalize and segment a stream, bicubic-resizing bins to ``size`` if given."""
    src = reverse(stream) if backward else stream
    grid = normalize(voxelize(src, M))
    if size is not None and tuple(size) != grid.bins.shape[1:]:
        grid = VoxelGrid(resize_bicubic(grid.bins, *size))
    return to_segments(grid, "backward" if backward else "forward")


# --------------------------------------------------------------------------
# file formats


def read_events(path) -> EventStream:
    """Load an event file, dispatching on the ``EVT1`` magic for the binary variant."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return _read_binary(path)
    return _read_text(path)


def _read_text(path: Path) -> EventStream:
    lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ContractError(f"{path}: empty event file")
    header = lines[0]
    if len(header) not in (4, 5):
        raise ContractError(f"{path}: header must be 'H W tau_s tau_e [c]'")
    h, w = int(header[0]), int(header[1])
    tau_s, tau_e = float(header[2]), float(header[3])
    c = float(header[4]) if len(header) == 5 else None
    body = lines[1:]
    if any(len(r) != 4 for r in body):
        raise ContractError(f"{path}: records must be 'timestamp x y polarity'")
    arr = np.array(body, dtype=np.float64).reshape(-1, 4)
    return EventStream(arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64), arr[:, 3].astype(np.int64),
                       (h, w), (tau_s, tau_e), c)


def _read_binary(path: Path) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise ContractError(f"{path}: truncated header")
    magic, h, w, tau_s, tau_e, count = _BINARY_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype=_BINARY_RECORD, count=count, offset=_BINARY_HEADER.size)
    return EventStream(body["t"], body["x"], body["y"], body["p"], (h, w), (tau_s, tau_e))


def write_events(stream: EventStream, path, binary: bool = False) -> None:
    path = Path(path)
    h, w = stream.resolution
    tau_s, tau_e = stream.duration
    if binary:
        body = np.empty(len(stream), dtype=_BINARY_RECORD)
        body["t"], body["x"], body["y"], body["p"] = stream.t, stream.x, stream.y, stream.p
        path.write_bytes(_BINARY_HEADER.pack(BINARY_MAGIC, h, w, tau_s, tau_e, len(stream)) + body.tobytes())
        return
    header = f"{h} {w} {tau_s!r} {tau_e!r}"
    if stream.contrast_threshold is not None:
        header += f" {stream.contrast_threshold!r}"
    lines = [header] + [f"{t!r} {x} {y} {p}" for t, x, y, p in zip(stream.t.tolist(), stream.x, stream.y, stream.p)]
    path.write_text("\n".join(lines) + "\n")
