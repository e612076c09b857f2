"""
Emotional dynamic points and the threshold
==========================================

A jump in facial valence between two frames marks a dynamic point. Points
within half a second of each other become one segment to describe.
"""

import numpy as np

from scbu.emotion_dynamics import EmotionConfig, StubDescriber, describe_segments, find_dynamic_points, merge_segments

rng = np.random.default_rng(0)
t = np.arange(0, 30, 0.1)
valence = np.clip(0.2 * np.sin(t / 3) + rng.normal(0, 0.03, t.size), -1, 1)
valence[120:] += 0.4  # a sudden brightening at 12 s
series = list(zip(t.tolist(), valence.tolist()))

###############################################################################
# Raising the threshold can only remove points.

for alpha in (0.05, 0.1, 0.175, 0.3):
    print(alpha, len(find_dynamic_points(series, EmotionConfig(alpha=alpha))))

###############################################################################
# With the default threshold, nearby points merge into segments. The stub
# describer stands in for an audio-visual model.

cfg = EmotionConfig()
segments = merge_segments(find_dynamic_points(series, cfg), cfg, duration_s=t[-1])
for seg in describe_segments(segments, "media://demo", StubDescriber(), "demo"):
    print(f"{seg.segment_id} {seg.start_s:5.2f}-{seg.end_s:5.2f}  {seg.description}")
