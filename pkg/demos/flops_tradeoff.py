"""Threshold versus compute, using measured multiply-add counts."""
import numpy as np

from evenhancer import PipelineConfig, run_evenhancer
from evenhancer.pipeline import threshold_sweep
from evenhancer.toy import load_toy_clip

frames, stream = load_toy_clip()
cfg = PipelineConfig()

rows = threshold_sweep(cfg, stream, frames.shape[2:], np.linspace(0, 1, 11))
single = run_evenhancer(PipelineConfig.evenhancer(), frames, stream).ledger.total()

print("xi     total MACs     vs single   simple share")
for r in rows:
    print("%.1f  %14d  %10.3f   %.3f" % (r.threshold, r.total, r.total / single, r.fractions[0]))

# raising the threshold can only move pixels to the cheaper pathway
print("monotone:", all(b.total <= a.total for a, b in zip(rows, rows[1:])))

# at low spatial scale the second pathway's shared encode is not paid back
small = PipelineConfig(scale_s=2.0, scale_t=2)
r0 = threshold_sweep(small, stream, frames.shape[2:], [0.0])[0].total
s0 = run_evenhancer(PipelineConfig.evenhancer(scale_s=2.0, scale_t=2), frames, stream).ledger.total()
print("s=2, t=2: two pathways / one = %.3f" % (r0 / s0))
