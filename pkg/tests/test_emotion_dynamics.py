import json
import logging

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbu.emotion_dynamics import (
    DynamicPoint,
    EmotionConfig,
    EmotionSegment,
    FixtureDescriber,
    HttpDescriber,
    StubDescriber,
    describe_segments,
    dynamics_stats,
    emotion_prompt,
    emotion_question,
    find_dynamic_points,
    merge_intervals,
    merge_segments,
)
from scbu.errors import DescriberUnavailable, TooShortError


def series(values, fps=10.0):
    return [(k / fps, v) for k, v in enumerate(values)]


def test_constant_series_has_no_points():
    assert find_dynamic_points(series([0.3, 0.3, 0.3])) == []


def test_single_step():
    points = find_dynamic_points(series([0.0, 0.0, 0.5, 0.5]), EmotionConfig(alpha=0.175))
    assert points == [DynamicPoint(0.2, 0.5)]


def test_threshold_is_strict_and_symmetric():
    cfg = EmotionConfig(alpha=0.25)
    assert find_dynamic_points(series([0.0, 0.25, 0.0]), cfg) == []
    pts = find_dynamic_points(series([0.0, 0.5, 0.0]), cfg)
    assert [p.derivative for p in pts] == [0.5, -0.5]


def test_per_second_mode_scales_by_sampling_interval():
    s = series([0.0, 0.05, 0.1], fps=10.0)
    assert find_dynamic_points(s, EmotionConfig(alpha=0.175)) == []
    pts = find_dynamic_points(s, EmotionConfig(alpha=0.175, derivative_mode="per_second"))
    assert len(pts) == 2
    assert pts[0].derivative == pytest.approx(0.5)


def test_too_short():
    with pytest.raises(TooShortError):
        find_dynamic_points(series([0.1]))
    with pytest.raises(TooShortError):
        find_dynamic_points([])


@pytest.mark.parametrize("kw", [{"alpha": 0}, {"alpha": -0.1}, {"half_window_s": 0}, {"derivative_mode": "per_minute"}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        EmotionConfig(**kw)


def test_merge_overlapping_points():
    segs = merge_segments([DynamicPoint(1.0, 0.3), DynamicPoint(1.6, -0.2)], EmotionConfig(), 10.0)
    assert [(s.start_s, s.end_s) for s in segs] == [(0.5, pytest.approx(2.1))]
    assert len(segs[0].source_points) == 2
    assert segs[0].peak_derivative == 0.3


def test_merge_disjoint_points():
    segs = merge_segments([DynamicPoint(1.0, 0.3), DynamicPoint(3.0, 0.3)], EmotionConfig(), 10.0)
    assert [(s.start_s, s.end_s) for s in segs] == [(0.5, 1.5), (2.5, 3.5)]
    assert [s.segment_id for s in segs] == ["seg-000", "seg-001"]


def test_touching_intervals_merge():
    segs = merge_segments([DynamicPoint(1.0, 0.3), DynamicPoint(2.0, 0.3)], EmotionConfig(), 10.0)
    assert [(s.start_s, s.end_s) for s in segs] == [(0.5, 2.5)]


def test_segments_clamped_to_session():
    segs = merge_segments([DynamicPoint(0.2, 0.3), DynamicPoint(9.9, 0.3)], EmotionConfig(), 10.0)
    assert segs[0].start_s == 0.0
    assert segs[-1].end_s == 10.0


def test_dynamics_stats():
    assert dynamics_stats([], [3.0]) == (0, None)
    pts = [DynamicPoint(8.0, 0.2), DynamicPoint(12.0, -0.3)]
    assert dynamics_stats(pts, [3.0, 10.0]) == (2, 5.0)
    assert dynamics_stats(pts, []) == (2, None)


def test_stub_describer_is_deterministic():
    seg = EmotionSegment("seg-000", 0.5, 1.5, (DynamicPoint(1.0, -0.31234),))
    text = StubDescriber().describe(seg, "media://x", "x")
    assert text == "Emotional change of magnitude 0.312 at 1.00s."
    assert StubDescriber().describe(seg, "media://x", "x") == text


def test_fixture_describer_replays(tmp_path):
    store = {"case-1/seg-000": "The child smiles at the doctor."}
    path = tmp_path / "desc.json"
    path.write_text(json.dumps(store), encoding="utf-8")
    seg = EmotionSegment("seg-000", 0.5, 1.5)
    assert FixtureDescriber(path).describe(seg, "m", "case-1") == store["case-1/seg-000"]
    with pytest.raises(DescriberUnavailable):
        FixtureDescriber(store).describe(seg, "m", "case-2")


def _transport(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_describer_request_contains_prompt_and_question():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"description": "calm then happy"})

    d = HttpDescriber("http://describer.local/describe", client=_transport(handler))
    seg = EmotionSegment("seg-004", 2.0, 3.0)
    assert d.describe(seg, "media://case-7", "case-7") == "calm then happy"
    body = seen["body"]
    assert body["question"] == emotion_question()
    assert body["prompt"] == emotion_prompt()
    assert (body["media_ref"], body["start_s"], body["end_s"]) == ("media://case-7", 2.0, 3.0)


def test_unreachable_describer_leaves_rest_undescribed(caplog):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) > 1:
            raise httpx.ConnectError("down")
        return httpx.Response(200, json={"description": "ok"})

    d = HttpDescriber("http://describer.local/describe", client=_transport(handler))
    segs = [EmotionSegment(f"seg-{k:03d}", k, k + 0.5) for k in range(3)]
    with caplog.at_level(logging.WARNING):
        out = describe_segments(segs, "m", d, "c")
    assert [s.description for s in out] == ["ok", None, None]
    assert "undescribed" in caplog.text


def test_no_describer_is_identity():
    segs = [EmotionSegment("seg-000", 0.0, 1.0)]
    assert describe_segments(segs, "m", None) == segs


# ---------------------------------------------------------------- properties

def naive_points(values, times, alpha):
    out = []
    for n in range(1, len(values)):
        d = values[n] - values[n - 1]
        if d > alpha or d < -alpha:
            out.append((times[n], d))
    return out


def naive_union(intervals):
    """Union via a sweep over sorted endpoints, touching counts as overlapping."""
    events = sorted([(a, 0) for a, _ in intervals] + [(b, 1) for _, b in intervals])
    out, depth, start = [], 0, None
    for x, kind in events:
        if kind == 0:
            if depth == 0:
                if out and out[-1][1] == x:
                    start = out.pop()[0]
                else:
                    start = x
            depth += 1
        else:
            depth -= 1
            if depth == 0:
                out.append((start, x))
    return out


@settings(max_examples=200, deadline=None)
@given(
    values=st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=120),
    alpha=st.floats(0.01, 1.0),
)
def test_points_match_naive_loop(values, alpha):
    s = series(values)
    got = [(p.time_s, p.derivative) for p in find_dynamic_points(s, EmotionConfig(alpha=alpha))]
    assert got == naive_points(values, [t for t, _ in s], alpha)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(0, 5)), max_size=30))
def test_interval_union_matches_sweep(raw):
    intervals = [(a, a + w) for a, w in raw]
    assert merge_intervals(intervals) == naive_union(intervals)


@settings(max_examples=150, deadline=None)
@given(times=st.lists(st.floats(0, 60), max_size=40), h=st.floats(0.05, 2.0))
def test_merge_coverage_and_idempotence(times, h):
    cfg = EmotionConfig(half_window_s=h)
    points = [DynamicPoint(t, 0.5) for t in sorted(times)]
    segs = merge_segments(points, cfg, 60.0)
    for a, b in zip(segs, segs[1:]):
        assert a.end_s < b.start_s
    for p in points:
        assert sum(s.start_s <= p.time_s <= s.end_s for s in segs) == 1
    assert sum(len(s.source_points) for s in segs) == len(points)
    spans = [(s.start_s, s.end_s) for s in segs]
    assert merge_intervals(spans) == spans


@settings(max_examples=100, deadline=None)
@given(
    values=st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=200),
    a1=st.floats(0.01, 1.0),
    a2=st.floats(0.01, 1.0),
)
def test_threshold_monotonicity(values, a1, a2):
    lo, hi = sorted((a1, a2))
    s = series(values)
    assert len(find_dynamic_points(s, EmotionConfig(alpha=hi))) <= len(find_dynamic_points(s, EmotionConfig(alpha=lo)))


def test_numpy_and_list_inputs_agree():
    rng = np.random.default_rng(0)
    vals = np.clip(np.cumsum(rng.normal(0, 0.1, 300)), -1, 1)
    s = series(vals.tolist())
    assert find_dynamic_points(s) == find_dynamic_points(np.array(s))
