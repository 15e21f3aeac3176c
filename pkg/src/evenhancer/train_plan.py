"""Cross-derivative training schedule as a dry-run state machine.

Stage 1 trains N derived networks (shared-extractor copy + upsampler n) from
scratch at fixed scales. Stage 2 fine-tunes each at varying spatial scale.
The extractor of the most complex network then becomes the target extractor,
and stage 3 fine-tunes the remaining upsamplers on top of it, frozen.
No optimization happens here: the plan records where every tensor's initial
value comes from and whether it is updated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .easm import easm_shapes
from .livt import livt_shapes
from .tensor_core import ContractError

PUBLISHED_ITERATIONS = (450_000, 150_000, 150_000)


@dataclass(frozen=True)
class ScalePolicy:
    kind: str  # "fixed" or "uniform"
    low: float
    high: float | None = None

    @classmethod
    def fixed(cls, value: float) -> "ScalePolicy":
        return cls("fixed", float(value))

    @classmethod
    def uniform(cls, low: float, high: float) -> "ScalePolicy":
        return cls("uniform", float(low), float(high))

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, self.low)
        return np.random.default_rng(seed).uniform(self.low, self.high, size=n)

    def __str__(self) -> str:
        return f"fixed {self.low:g}" if self.kind == "fixed" else f"uniform {self.low:g} {self.high:g}"


@dataclass(frozen=True)
class WeightSource:
    """Either ``random`` init or the weights produced by (stage, network)."""

    stage: int | None = None
    network: int | None = None

    @property
    def is_random(self) -> bool:
        return self.stage is None

    def __str__(self) -> str:
        return "random" if self.is_random else f"stage{self.stage}.net{self.network}"


RANDOM = WeightSource()


@dataclass(frozen=True)
class TensorPlan:
    source: WeightSource
    frozen: bool


@dataclass
class NetworkPlan:
    network: int
    tensors: dict[str, TensorPlan]

    def updatable(self) -> set[str]:
        return {k for k, v in self.tensors.items() if not v.frozen}

    def frozen(self) -> set[str]:
        return {k for k, v in self.tensors.items() if v.frozen}


@dataclass
class StagePlan:
    stage: int
    iterations: int
    t_fix: int
    spatial: ScalePolicy
    networks: list[NetworkPlan] = field(default_factory=list)

    def network(self, n: int) -> NetworkPlan:
        for net in self.networks:
            if net.network == n:
                return net
        raise KeyError(f"stage {self.stage} has no network {n}")


@dataclass
class TrainPlan:
    N: int
    stages: list[StagePlan]
    extractor: list[str]
    upsamplers: list[list[str]]
    # component name ("F" or "U<n>") -> source of its final weights
    target: dict[str, WeightSource]
    seed: int = 0
    notes: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.stages)

    def stage(self, k: int) -> StagePlan:
        return self.stages[k - 1]

    def scale_samples(self, stage: int, n: int) -> np.ndarray:
        """Reproducible spatial-scale draws for ``stage``."""
        return self.stage(stage).spatial.sample(n, seed=self.seed + stage)


def default_tensor_names(N: int, widths: Sequence[int] | None = None) -> tuple[list[str], list[list[str]]]:
    widths = list(widths) if widths is not None else [64] * N
    extractor = list(easm_shapes().keys())
    ups = [list(livt_shapes(n, widths[n]).keys()) for n in range(N)]
    return extractor, ups


def build_plan(N: int, d: Sequence[int] = PUBLISHED_ITERATIONS, t_fix: int = 8, s_fix: float = 4.0,
               s_range: tuple[float, float] = (1.0, 4.0), seed: int = 0,
               extractor: Iterable[str] | None = None, upsamplers: Sequence[Iterable[str]] | None = None) -> TrainPlan:
    if N < 1:
        raise ContractError(f"need at least one pathway, got N={N}")
    if len(d) != 3 or any(int(v) < 0 for v in d):
        raise ContractError(f"iteration counts must be three non-negative integers, got {d}")
    d1, d2, d3 = (int(v) for v in d)
    if extractor is None or upsamplers is None:
        dflt_f, dflt_u = default_tensor_names(N)
        extractor = dflt_f if extractor is None else extractor
        upsamplers = dflt_u if upsamplers is None else upsamplers
    extractor = list(extractor)
    upsamplers = [list(u) for u in upsamplers]
    if len(upsamplers) != N:
        raise ContractError(f"{len(upsamplers)} upsampler name lists for N={N}")

    varying = ScalePolicy.uniform(*s_range)

    def net(n, f_src, f_frozen, u_src):
        tensors = {k: TensorPlan(f_src, f_frozen) for k in extractor}
        tensors.update({k: TensorPlan(u_src, False) for k in upsamplers[n]})
        return NetworkPlan(n, tensors)

    stage1 = StagePlan(1, d1, t_fix, ScalePolicy.fixed(s_fix), [net(n, RANDOM, False, RANDOM) for n in range(N)])
    stage2 = StagePlan(2, d2, t_fix, varying,
                       [net(n, WeightSource(1, n), False, WeightSource(1, n)) for n in range(N)])
    target_f = WeightSource(2, N - 1)
    stage3 = StagePlan(3, d3, t_fix, varying,
                       [net(n, target_f, True, WeightSource(2, n)) for n in range(N - 1)])

    target = {"F": target_f, f"U{N - 1}": WeightSource(2, N - 1)}
    for n in range(N - 1):
        target[f"U{n}"] = WeightSource(3, n)
    notes = []
    if N > 1:
        notes.append("stage 3 upsamplers start from weights trained against their own stage-2 extractor, "
                     f"but run on the frozen extractor of network {N - 1}; no adapter is applied")
    return TrainPlan(N, [stage1, stage2, stage3], extractor, upsamplers, dict(sorted(target.items())), seed, notes)


def validate_plan(plan: TrainPlan) -> list[str]:
    """List of violated invariants (empty when the plan is consistent)."""
    problems = []
    produced = set()
    ext = set(plan.extractor)
    for st in plan.stages:
        for net in st.networks:
            for name, tp in net.tensors.items():
                src = tp.source
                if st.stage == 1 and not src.is_random:
                    problems.append(f"stage 1 {name} is not randomly initialized")
                if not src.is_random and (src.stage, src.network) not in produced:
                    problems.append(f"stage {st.stage} net {net.network} {name} inherits missing {src}")
                if st.stage == 3 and name in ext and not tp.frozen:
                    problems.append(f"stage 3 extractor tensor {name} is trainable")
            if net.updatable() & net.frozen():
                problems.append(f"stage {st.stage} net {net.network} has tensors both frozen and updatable")
        for net in st.networks:
            produced.add((st.stage, net.network))
    stage3 = plan.stage(3)
    trainable3 = set().union(*(n.updatable() for n in stage3.networks)) if stage3.networks else set()
    expected3 = set().union(*plan.upsamplers[: plan.N - 1]) if plan.N > 1 else set()
    if trainable3 != expected3:
        problems.append("stage 3 updatable set differs from the tensors of U_0..U_{N-2}")
    for comp, src in plan.target.items():
        if (src.stage, src.network) not in produced:
            problems.append(f"target {comp} refers to missing {src}")
    return problems


def format_plan(plan: TrainPlan) -> str:
    """Human-readable, line-oriented dump of the whole plan."""
    lines = [
        "# cross-derivative training plan (dry run)",
        f"pathways {plan.N}",
        f"seed {plan.seed}",
    ]
    for comp, src in plan.target.items():
        lines.append(f"target {comp} {src}")
    for note in plan.notes:
        lines.append(f"note {note}")
    for st in plan.stages:
        lines.append(f"stage {st.stage} iterations {st.iterations} t fixed {st.t_fix} s {st.spatial}")
        for net in st.networks:
            lines.append(f"  network {net.network}")
            for name, tp in net.tensors.items():
                lines.append(f"    {name} {tp.source} {'frozen' if tp.frozen else 'trainable'}")
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> dict:
    """Read back :func:`format_plan` output into nested dicts (for round-trip checks)."""
    out: dict = {"targets": {}, "stages": {}, "notes": []}
    stage = net = None
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split()
        if raw.startswith("    "):
            out["stages"][stage]["networks"][net][parts[0]] = (parts[1], parts[2] == "frozen")
        elif raw.startswith("  "):
            net = int(parts[1])
            out["stages"][stage]["networks"][net] = {}
        elif parts[0] == "stage":
            stage = int(parts[1])
            out["stages"][stage] = {"iterations": int(parts[3]), "t_fix": int(parts[6]),
                                    "spatial": " ".join(parts[8:]), "networks": {}}
        elif parts[0] == "target":
            out["targets"][parts[1]] = parts[2]
        elif parts[0] == "note":
            out["notes"].append(raw[5:])
        else:
            out[parts[0]] = int(parts[1])
    return out
