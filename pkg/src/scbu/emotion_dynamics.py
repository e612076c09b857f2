"""Emotional dynamic points on the child's valence series.

A dynamic point is a sample whose first-order valence difference exceeds the
threshold ``alpha`` in magnitude. Each point is widened to
``[t - half_window_s, t + half_window_s]``; overlapping or touching windows
are merged into one segment, and each segment can then be sent to a describer
(stub, recorded fixture, or an external audio-visual model) for a textual
account that goes into the script.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .errors import DescriberUnavailable, TooShortError

logger = logging.getLogger(__name__)

DERIVATIVE_MODES = ("per_frame", "per_second")


@dataclass(frozen=True)
class EmotionConfig:
    alpha: float = 0.175
    half_window_s: float = 0.5
    derivative_mode: str = "per_frame"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.half_window_s > 0:
            raise ValueError("half_window_s must be > 0")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ValueError(f"derivative_mode must be one of {DERIVATIVE_MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "EmotionConfig":
        unknown = set(d) - {"alpha", "half_window_s", "derivative_mode"}
        if unknown:
            raise ValueError(f"unknown emotion config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DynamicPoint:
    time_s: float
    derivative: float


@dataclass(frozen=True)
class EmotionSegment:
    segment_id: str
    start_s: float
    end_s: float
    source_points: tuple[DynamicPoint, ...] = ()
    description: Optional[str] = None

    @property
    def peak_derivative(self) -> float:
        return max((p.derivative for p in self.source_points), key=abs, default=0.0)


def first_differences(series: Sequence[tuple[float, float]], mode: str = "per_frame") -> np.ndarray:
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    d = np.diff(arr[:, 1])
    if mode == "per_second":
        d = d / np.diff(arr[:, 0])
    return d


def find_dynamic_points(series: Sequence[tuple[float, float]], cfg: Optional[EmotionConfig] = None) -> list[DynamicPoint]:
    """Samples ``n >= 1`` where ``d_n > alpha`` or ``d_n < -alpha``."""
    cfg = cfg or EmotionConfig()
    if len(series) < 2:
        raise TooShortError(f"need at least 2 valence samples, got {len(series)}")
    d = first_differences(series, cfg.derivative_mode)
    hits = np.flatnonzero((d > cfg.alpha) | (d < -cfg.alpha))
    return [DynamicPoint(float(series[i + 1][0]), float(d[i])) for i in hits]


def merge_intervals(intervals: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Union of closed intervals; touching intervals are merged."""
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def merge_segments(points: Sequence[DynamicPoint], cfg: Optional[EmotionConfig] = None, duration_s: float = float("inf")) -> list[EmotionSegment]:
    cfg = cfg or EmotionConfig()
    h = cfg.half_window_s
    spans = merge_intervals([(p.time_s - h, p.time_s + h) for p in points])
    ordered = sorted(points, key=lambda p: p.time_s)
    segments = []
    for k, (a, b) in enumerate(spans):
        members = tuple(p for p in ordered if a <= p.time_s <= b)
        segments.append(EmotionSegment(f"seg-{k:03d}", max(a, 0.0), min(b, duration_s), members))
    return segments


def dynamics_stats(points: Sequence[DynamicPoint], instruction_times: Sequence[float]) -> tuple[int, Optional[float]]:
    """Point count, and delay from the first instruction to the first point at or after it."""
    frequency = len(points)
    if not instruction_times:
        return frequency, None
    first = min(instruction_times)
    later = [p.time_s for p in points if p.time_s >= first]
    return frequency, (min(later) - first) if later else None


# --------------------------------------------------------------------------
# describers
# --------------------------------------------------------------------------

def _template(name: str) -> str:
    return resources.files("scbu").joinpath(f"templates/{name}").read_text(encoding="utf-8")


def emotion_prompt() -> str:
    return _template("emotion_prompt.txt")


def emotion_question() -> str:
    return _template("emotion_question.txt")


class Describer(Protocol):
    def describe(self, segment: EmotionSegment, media_ref: str, case_id: str) -> str: ...


class StubDescriber:
    """Deterministic placeholder text; thread-safe."""

    def describe(self, segment, media_ref, case_id):
        t = segment.source_points[0].time_s if segment.source_points else segment.start_s
        return f"Emotional change of magnitude {abs(segment.peak_derivative):.3f} at {t:.2f}s."


class FixtureDescriber:
    """Replays recorded descriptions keyed by ``"<case_id>/<segment_id>"``."""

    def __init__(self, store: Union[dict, str, Path]):
        if not isinstance(store, dict):
            store = json.loads(Path(store).read_text(encoding="utf-8"))
        self.store = dict(store)

    def describe(self, segment, media_ref, case_id):
        key = f"{case_id}/{segment.segment_id}"
        try:
            return self.store[key]
        except KeyError:
            raise DescriberUnavailable(f"no recorded description for {key}") from None


class HttpDescriber:
    """Client for an external audio-visual describer service.

    Sends ``{"prompt", "question", "media_ref", "start_s", "end_s"}`` as JSON
    and expects ``{"description": ...}`` back.
    """

    def __init__(self, endpoint: str, client=None, timeout_s: float = 60.0, prompt: Optional[str] = None, question: Optional[str] = None):
        import httpx

        self.endpoint = endpoint
        self.client = client or httpx.Client(timeout=timeout_s)
        self.prompt = emotion_prompt() if prompt is None else prompt
        self.question = emotion_question() if question is None else question

    def request_body(self, segment: EmotionSegment, media_ref: str, case_id: str) -> dict:
        return {
            "case_id": case_id,
            "media_ref": media_ref,
            "start_s": segment.start_s,
            "end_s": segment.end_s,
            "prompt": self.prompt,
            "question": self.question,
        }

    def describe(self, segment, media_ref, case_id):
        import httpx

        try:
            resp = self.client.post(self.endpoint, json=self.request_body(segment, media_ref, case_id))
            resp.raise_for_status()
            return resp.json()["description"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise DescriberUnavailable(f"describer at {self.endpoint} failed: {exc}") from exc


def describe_segments(segments: Sequence[EmotionSegment], media_ref: str, describer: Optional[Describer], case_id: str = "") -> list[EmotionSegment]:
    """Fill in segment descriptions one segment at a time.

    If the describer becomes unavailable the remaining segments stay
    undescribed and a warning is logged; the script then carries no emotion
    line for them.
    """
    if describer is None:
        return list(segments)
    out = []
    for k, seg in enumerate(segments):
        try:
            text = describer.describe(seg, media_ref, case_id)
        except DescriberUnavailable as exc:
            logger.warning("case %s: describer unavailable (%s); %d segment(s) left undescribed",
                           case_id, exc, len(segments) - k)
            out.extend(segments[k:])
            break
        out.append(replace(seg, description=text))
    return out
