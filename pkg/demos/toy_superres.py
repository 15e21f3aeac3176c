"""End-to-end run on the bundled 8x8 clip with random weights.

The weights are untrained, so the frames are not meaningful pictures; this
shows the data flow, shapes, determinism and the cost ledger.
"""
import numpy as np

from evenhancer import PipelineConfig, run_evenhancer, run_evenhancerplus
from evenhancer.pipeline import build_store
from evenhancer.toy import load_toy_clip

frames, stream = load_toy_clip()
cfg = PipelineConfig(scale_s=2.0, scale_t=2, seed=42)
store = build_store(cfg)

out = run_evenhancerplus(cfg, frames, stream, store)
print("output", out.frames.shape, "at times", out.taus)
print("pixels per pathway per frame:", [m.counts().tolist() for m in out.masks])
print("predicted cost %d == measured %d" % (out.budget.total, out.ledger.total()))

top = sorted(out.ledger.counters.items(), key=lambda kv: -kv[1])[:5]
for name, macs in top:
    print("  %-28s %12d" % (name, macs))

# where a pixel was routed, the output equals that pathway run alone
alone = [run_evenhancer(cfg, frames, stream, store, pathway=n).frames for n in range(2)]
k = 1
for n in range(2):
    sel = out.masks[k].pathway == n
    print("pathway", n, "pixels identical:", np.array_equal(out.frames[k][:, sel], alone[n][k][:, sel]))

# arbitrary, non-integer scale
odd = run_evenhancerplus(cfg.replace(scale_s=2.5, scale_t=3), frames, stream, store)
print("s=2.5, t=3 ->", odd.frames.shape)
