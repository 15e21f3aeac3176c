"""Event-guided continuous space-time video super-resolution (forward pass only)."""
from .csm import ThresholdLadder, difficulty, distribute
from .events import EventStream, normalize, reverse, to_segments, voxelize
from .pipeline import PipelineConfig, run_evenhancer, run_evenhancerplus
from .tensor_core import ContractError, OpLedger, use_ledger
from .train_plan import build_plan
from .weights import WeightStore

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "EventStream",
    "OpLedger",
    "PipelineConfig",
    "ThresholdLadder",
    "WeightStore",
    "build_plan",
    "difficulty",
    "distribute",
    "normalize",
    "reverse",
    "run_evenhancer",
    "run_evenhancerplus",
    "to_segments",
    "use_ledger",
    "voxelize",
]
