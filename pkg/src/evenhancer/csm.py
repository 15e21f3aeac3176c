"""Controllable switch mechanism: event-driven per-pixel pathway routing.

Reconstruction difficulty is the min-max normalized magnitude of summed
polarities over a time window, upsampled to the output lattice. A ladder of
thresholds then assigns each output pixel to one upsampling pathway. Nothing
here is learned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import EventStream
from .tensor_core import DTYPE, ContractError, resize_bilinear


def scaled_size(extent: int, s: float) -> int:
    """round(s * extent), halves rounded up."""
    return int(np.floor(s * extent + 0.5))


@dataclass
class DifficultyMap:
    values: np.ndarray
    source_window: tuple[float, float]


@dataclass(frozen=True)
class ThresholdLadder:
    """Ascending interior thresholds xi_1..xi_{N-1}; xi_0 = 0 and xi_N = 1 are implicit."""

    xis: tuple[float, ...] = ()

    def __post_init__(self):
        xis = tuple(float(v) for v in self.xis)
        object.__setattr__(self, "xis", xis)
        if any(not 0.0 <= v <= 1.0 for v in xis):
            raise ContractError(f"thresholds must lie in [0, 1]: {xis}")
        if any(b < a for a, b in zip(xis, xis[1:])):
            raise ContractError(f"thresholds must be ascending: {xis}")

    @property
    def N(self) -> int:
        return len(self.xis) + 1


@dataclass
class DistributionMask:
    pathway: np.ndarray
    N: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.pathway.ravel(), minlength=self.N)

    def one_hot(self) -> np.ndarray:
        """(N, H, W) indicator stack; sums to one at every pixel."""
        return (self.pathway[None] == np.arange(self.N)[:, None, None]).astype(DTYPE)


@dataclass
class BudgetReport:
    total: float
    shared: float
    counts: list[int]
    fractions: list[float]
    per_pixel_cost: list[float]
    pixels: int = field(default=0)

    @property
    def mean_per_pixel(self) -> float:
        return (self.total - self.shared) / self.pixels if self.pixels else 0.0


def intensity_change(stream: EventStream, window: tuple[float, float]) -> np.ndarray:
    """Per-pixel |sum of polarities| of events with timestamps in the closed window."""
    lo, hi = window
    if lo > hi:
        raise ContractError(f"inverted window ({lo}, {hi})")
    h, w = stream.resolution
    out = np.zeros((h, w), dtype=np.float64)
    sel = (stream.t >= lo) & (stream.t <= hi)
    np.add.at(out, (stream.y[sel], stream.x[sel]), stream.p[sel])
    return np.abs(out).astype(DTYPE)


def minmax_normalize(change) -> np.ndarray:
    """(v - min) / (max - min); a constant map normalizes to zeros."""
    v = np.asarray(change, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros(v.shape, dtype=DTYPE)
    return ((v - lo) / (hi - lo)).astype(DTYPE)


def difficulty(stream: EventStream, stamps: Sequence[float], s: float = 1.0,
               out_h: int | None = None, out_w: int | None = None) -> DifficultyMap:
    """Difficulty over [min(stamps), max(stamps)], stamps being normalized times in [0, 1]."""
    stamps = list(stamps)
    if not stamps:
        raise ContractError("difficulty needs a non-empty timestamp set")
    h, w = stream.resolution
    out_h = scaled_size(h, s) if out_h is None else out_h
    out_w = scaled_size(w, s) if out_w is None else out_w
    tau_s, tau_e = stream.duration
    lo = tau_s + min(stamps) * (tau_e - tau_s)
    hi = tau_s + max(stamps) * (tau_e - tau_s)
    norm = minmax_normalize(intensity_change(stream, (lo, hi)))
    up = np.clip(resize_bilinear(norm, out_h, out_w), 0.0, 1.0)
    return DifficultyMap(up, (lo, hi))


def distribute(diff: DifficultyMap | np.ndarray, ladder: ThresholdLadder) -> DistributionMask:
    """Pathway n for R in (xi_n, xi_{n+1}]; R = 0 always goes to pathway 0."""
    values = diff.values if isinstance(diff, DifficultyMap) else np.asarray(diff)
    xis = np.asarray(ladder.xis, dtype=np.float64)
    # count of thresholds strictly below R
    path = np.searchsorted(xis, values.astype(np.float64), side="left")
    return DistributionMask(path.astype(np.int64), ladder.N)


def budget_report(mask: DistributionMask, per_pixel_cost: Sequence[float], shared: float = 0.0) -> BudgetReport:
    costs = [float(c) for c in per_pixel_cost]
    if len(costs) != mask.N:
        raise ContractError(f"{len(costs)} pathway costs for {mask.N} pathways")
    if any(c < 0 for c in costs) or shared < 0:
        raise ContractError("costs must be non-negative")
    counts = mask.counts()
    pixels = int(counts.sum())
    total = shared + float(np.dot(counts, costs))
    fractions = [c / pixels if pixels else 0.0 for c in counts.tolist()]
    return BudgetReport(total, float(shared), counts.tolist(), fractions, costs, pixels)


def merge_reports(reports: Sequence[BudgetReport], shared: float = 0.0) -> BudgetReport:
    """Combine per-frame reports, adding a clip-level shared cost once."""
    counts = np.sum([r.counts for r in reports], axis=0).astype(int)
    pixels = int(counts.sum())
    total = shared + sum(r.total - r.shared for r in reports)
    fractions = [c / pixels if pixels else 0.0 for c in counts.tolist()]
    return BudgetReport(total, float(shared), counts.tolist(), fractions, list(reports[0].per_pixel_cost), pixels)
