"""Turning an event stream into normalized voxel bins.

Walks through the toy clip: raw tent-weighted bins, hot-pixel clamping,
the segment view used by the feature extractor, and time reversal.
"""
import numpy as np

from evenhancer import normalize, reverse, to_segments, voxelize
from evenhancer.events import EventStream
from evenhancer.toy import load_toy_clip

frames, stream = load_toy_clip()
print("events:", len(stream.t), "resolution:", stream.resolution, "duration:", stream.duration)

# one event halfway between bin 1 and bin 2 of a 3-bin (M = 2) grid splits its weight evenly
one = EventStream([0.25], [0], [0], [1], (1, 1), (0.0, 1.0))
print("single event weights:", voxelize(one, 2).bins.ravel())

raw = voxelize(stream, 7)
print("raw grid", raw.bins.shape, "sum per bin:", np.round(raw.bins.sum(axis=(1, 2)), 3))

# a hot pixel dominates the max but not the 98th percentile
hot = raw.bins.copy()
hot[0, 0, 0] = 50.0
norm = normalize(type(raw)(hot))
print("after clamping: min %.3f max %.3f" % (norm.bins.min(), norm.bins.max()))

segs = to_segments(normalize(raw), "forward")
print("segments:", segs.segments.shape)

# reversed events: bins come out mirrored in time with flipped sign
back = voxelize(reverse(stream), 7).bins
print("mirror max diff:", np.abs(back - (-raw.bins[::-1])).max())
