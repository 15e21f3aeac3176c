"""End-to-end forward passes: single-pathway EvEnhancer and routed EvEnhancerPlus."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import csm
from .easm import easm, easm_shapes
from .events import EventStream
from .livt import (
    LocalGridSpec,
    QueryBatch,
    UpsamplerWeights,
    encode_qkv,
    livt_shapes,
    per_query_cost,
    render_queries,
    select_timestamps,
    timestamp_grid,
)
from .tensor_core import DTYPE, ContractError, OpLedger, use_ledger
from .weights import WeightStore, init_weights

CONFIG_ENV = "EVENHANCER_CONFIG"


class ConfigError(ContractError):
    pass


@dataclass
class PipelineConfig:
    """Model and run settings. Defaults are the published EvEnhancerPlus settings."""

    bins: int = 7  # event segments M
    grid_t: int = 3
    grid_h: int = 3
    grid_w: int = 3
    pathways: int = 2
    widths: tuple[int, ...] = (16, 64)
    threshold: tuple[float, ...] = (0.0,)
    scale_s: float = 4.0
    scale_t: int = 8
    pe_freqs: int = 10
    easm_width: int = 64
    mlp_hidden: int = 256
    mlp_layers: int = 5
    seed: int = 42
    weights: str | None = None

    def __post_init__(self):
        self.widths = tuple(int(v) for v in _as_list(self.widths))
        self.threshold = tuple(float(v) for v in _as_list(self.threshold))

    @classmethod
    def evenhancer(cls, **kw) -> "PipelineConfig":
        """Single 64-channel pathway."""
        kw.setdefault("pathways", 1)
        kw.setdefault("widths", (64,))
        kw.setdefault("threshold", ())
        return cls(**kw)

    @property
    def spec(self) -> LocalGridSpec:
        return LocalGridSpec(self.grid_t, self.grid_h, self.grid_w)

    @property
    def ladder(self) -> csm.ThresholdLadder:
        return csm.ThresholdLadder(self.threshold)

    def validate(self) -> "PipelineConfig":
        if self.pathways < 1:
            raise ConfigError(f"pathways must be >= 1, got {self.pathways}")
        if len(self.threshold) != self.pathways - 1:
            raise ConfigError(f"{len(self.threshold)} thresholds given for {self.pathways} pathways (need {self.pathways - 1})")
        if len(self.widths) != self.pathways:
            raise ConfigError(f"{len(self.widths)} widths given for {self.pathways} pathways")
        if self.bins < 1:
            raise ConfigError(f"bins must be >= 1, got {self.bins}")
        if self.scale_s < 1 or self.scale_t < 1 or int(self.scale_t) != self.scale_t:
            raise ConfigError(f"need scale_s >= 1 and integer scale_t >= 1, got {self.scale_s}, {self.scale_t}")
        if self.grid_t > self.bins + 2:
            raise ConfigError(f"grid_t={self.grid_t} exceeds the {self.bins + 2} latent timestamps")
        self.ladder  # validates ordering and range
        self.spec
        return self

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def _as_list(v):
    if isinstance(v, str):
        return [x for x in v.replace(",", " ").split() if x]
    if isinstance(v, (int, float)):
        return [v]
    return list(v)


def coerce(name: str, raw):
    """Convert a textual config value to the type of field ``name``."""
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if name not in fields:
        raise ConfigError(f"unknown config key {name!r}")
    default = fields[name].default
    if name in ("widths", "threshold"):
        return tuple(_as_list(raw))
    if name == "weights":
        return None if raw in (None, "", "none") else str(raw)
    return type(default)(raw) if not isinstance(raw, type(default)) else raw


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a flat ``key = value`` file (``#`` comments), then apply overrides.

    With ``path`` unset the file named by ``$EVENHANCER_CONFIG`` is used, if any.
    """
    path = path or os.environ.get(CONFIG_ENV)
    values = {}
    if path:
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = coerce(key.replace("-", "_"), val)
    for key, val in overrides.items():
        if val is not None:
            values[key] = coerce(key, val)
    return PipelineConfig(**values).validate()


# --------------------------------------------------------------------------
# weights


def model_shapes(config: PipelineConfig) -> dict[str, tuple[int, ...]]:
    shapes = dict(easm_shapes(config.easm_width))
    for n, width in enumerate(config.widths):
        shapes.update(livt_shapes(n, width, C_in=config.easm_width, hidden=config.mlp_hidden,
                                  L=config.pe_freqs, spec=config.spec, layers=config.mlp_layers))
    return shapes


def build_store(config: PipelineConfig) -> WeightStore:
    """Load ``config.weights`` if set, otherwise seeded random init; shapes are checked either way."""
    shapes = model_shapes(config)
    if config.weights:
        store = WeightStore.load(config.weights)
        for name, shape in shapes.items():
            if name not in store:
                raise ConfigError(f"weight file lacks {name}")
            if store[name].shape != tuple(shape):
                raise ConfigError(f"{name}: shape {store[name].shape} != expected {tuple(shape)}")
        return store
    return init_weights(shapes, config.seed)


# --------------------------------------------------------------------------
# forward passes


@dataclass
class SuperResResult:
    frames: np.ndarray  # (t+1, 3, sH, sW)
    taus: np.ndarray
    ledger: OpLedger
    difficulty: list[csm.DifficultyMap] = field(default_factory=list)
    masks: list[csm.DistributionMask] = field(default_factory=list)
    budget: csm.BudgetReport | None = None


def _check_inputs(frames, stream):
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 4 or frames.shape[:2] != (2, 3):
        raise ContractError(f"expected two RGB frames (2, 3, H, W), got {frames.shape}")
    if stream is None:
        raise ContractError("an event stream is required")
    return frames


def frame_times(t: int) -> np.ndarray:
    return np.arange(t + 1, dtype=np.float64) / t


def run_evenhancer(config: PipelineConfig, frames, stream: EventStream, store: WeightStore | None = None,
                   pathway: int | None = None) -> SuperResResult:
    """Every output pixel rendered by a single upsampler (the last pathway by default)."""
    config.validate()
    frames = _check_inputs(frames, stream)
    store = build_store(config) if store is None else store
    n = config.pathways - 1 if pathway is None else pathway
    h, w = frames.shape[2:]
    out_h, out_w = csm.scaled_size(h, config.scale_s), csm.scaled_size(w, config.scale_s)
    taus = frame_times(config.scale_t)
    with use_ledger() as ledger:
        f_hat = easm(frames, stream, store, config.bins)
        up = UpsamplerWeights.from_store(store, n, config.pe_freqs)
        qkv = encode_qkv(f_hat, up)
        out = np.empty((len(taus), 3, out_h, out_w), dtype=DTYPE)
        for k, tau in enumerate(taus):
            rgb = render_queries(qkv, up, QueryBatch.frame(tau, out_h, out_w), config.spec)
            out[k] = rgb.T.reshape(3, out_h, out_w)
    return SuperResResult(out, taus, ledger)


def difficulty_maps(config: PipelineConfig, stream: EventStream, out_h: int, out_w: int):
    """Difficulty map and pathway mask for every output frame time."""
    grid = timestamp_grid(config.bins)
    maps, masks = [], []
    for tau in frame_times(config.scale_t):
        window = select_timestamps(grid, float(tau), config.grid_t)
        dm = csm.difficulty(stream, window, config.scale_s, out_h, out_w)
        maps.append(dm)
        masks.append(csm.distribute(dm, config.ladder))
    return maps, masks


def pathway_costs(config: PipelineConfig, store: WeightStore, lr_shape: tuple[int, int]) -> list[int]:
    return [per_query_cost(UpsamplerWeights.from_store(store, n, config.pe_freqs), lr_shape, config.bins, config.spec)
            for n in range(config.pathways)]


def run_evenhancerplus(config: PipelineConfig, frames, stream: EventStream,
                       store: WeightStore | None = None) -> SuperResResult:
    """Each output pixel rendered only by the pathway its difficulty selects."""
    config.validate()
    frames = _check_inputs(frames, stream)
    store = build_store(config) if store is None else store
    h, w = frames.shape[2:]
    out_h, out_w = csm.scaled_size(h, config.scale_s), csm.scaled_size(w, config.scale_s)
    maps, masks = difficulty_maps(config, stream, out_h, out_w)
    taus = frame_times(config.scale_t)
    ups = [UpsamplerWeights.from_store(store, n, config.pe_freqs) for n in range(config.pathways)]
    with use_ledger() as ledger:
        f_hat = easm(frames, stream, store, config.bins)
        qkvs = [encode_qkv(f_hat, up) for up in ups]
        shared = ledger.total()
        out = np.empty((len(taus), 3, out_h, out_w), dtype=DTYPE)
        for k, tau in enumerate(taus):
            queries = QueryBatch.frame(tau, out_h, out_w)
            flat = masks[k].pathway.ravel()
            rgb = np.empty((len(queries), 3), dtype=DTYPE)
            for n, up in enumerate(ups):
                idx = np.flatnonzero(flat == n)
                if idx.size:
                    rgb[idx] = render_queries(qkvs[n], up, queries.subset(idx), config.spec)
            out[k] = rgb.T.reshape(3, out_h, out_w)
    costs = pathway_costs(config, store, (h, w))
    budget = csm.merge_reports([csm.budget_report(m, costs) for m in masks], shared=shared)
    return SuperResResult(out, taus, ledger, maps, masks, budget)


# --------------------------------------------------------------------------
# cost model


def shared_cost(config: PipelineConfig, store: WeightStore, lr_shape: tuple[int, int]) -> int:
    """Multiply-adds of the backbone plus every pathway's QKV encoding (input-independent)."""
    h, w = lr_shape
    frames = np.zeros((2, 3, h, w), dtype=DTYPE)
    empty = EventStream([], [], [], [], (h, w), (0.0, 1.0))
    with use_ledger() as ledger:
        f_hat = easm(frames, empty, store, config.bins)
        for n in range(config.pathways):
            encode_qkv(f_hat, UpsamplerWeights.from_store(store, n, config.pe_freqs))
    return ledger.total()


@dataclass
class SweepRow:
    threshold: float
    total: float
    fractions: list[float]

    @property
    def flops(self) -> float:
        return 2.0 * self.total


def threshold_sweep(config: PipelineConfig, stream: EventStream, lr_shape: tuple[int, int],
                    thresholds: Sequence[float], store: WeightStore | None = None) -> list[SweepRow]:
    """Predicted clip cost (multiply-adds) for a two-pathway ladder at each xi_1."""
    if config.pathways != 2:
        raise ConfigError("threshold sweeps need exactly two pathways")
    store = build_store(config) if store is None else store
    h, w = lr_shape
    out_h, out_w = csm.scaled_size(h, config.scale_s), csm.scaled_size(w, config.scale_s)
    shared = shared_cost(config, store, lr_shape)
    costs = pathway_costs(config, store, lr_shape)
    base = config.replace(threshold=(0.0,))
    maps, _ = difficulty_maps(base, stream, out_h, out_w)
    rows = []
    for xi in thresholds:
        ladder = csm.ThresholdLadder((xi,))
        report = csm.merge_reports([csm.budget_report(csm.distribute(m, ladder), costs) for m in maps], shared)
        rows.append(SweepRow(float(xi), report.total, report.fractions))
    return rows
