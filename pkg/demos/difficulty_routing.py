"""How the per-pixel difficulty map sends pixels to cheap or expensive pathways."""
import numpy as np

from evenhancer import ThresholdLadder, difficulty, distribute
from evenhancer.toy import load_toy_clip

_, stream = load_toy_clip()

# difficulty is the normalized net polarity near the query time, upsampled to the output grid
dm = difficulty(stream, [0.375, 0.5, 0.625], 2.0)
print("difficulty map", dm.values.shape, "range", dm.values.min(), dm.values.max())
print(np.round(dm.values[::2, ::2], 2))

for xi in (0.0, 0.25, 0.5, 1.0):
    mask = distribute(dm, ThresholdLadder((xi,)))
    print("xi %.2f -> pixels per pathway %s" % (xi, mask.counts().tolist()))

# three pathways need two thresholds
mask = distribute(dm, ThresholdLadder((0.2, 0.6)))
print("three-way split:", mask.counts().tolist())
print(mask.pathway[::2, ::2])

# duplicating every event leaves the normalized map unchanged
same = difficulty(stream.replicate(3), [0.375, 0.5, 0.625], 2.0)
print("replication invariant:", np.array_equal(same.values, dm.values))
