"""Turn per-frame behavioral logs into timestamped response events.

Detection is gated by paradigm: only the event kinds an assessment paradigm
observes are searched for inside that paradigm's interval.

=========  ====  =====  =====  =====  =====  =====
paradigm   look  point  smile  speak  leave  chase
=========  ====  =====  =====  =====  =====  =====
RN          x                   x
SS          x           x
IG          x     x
RJA         x
IJA         x     x
SA          x                         x      x
=========  ====  =====  =====  =====  =====  =====

Chase is a motion heuristic (child moving toward the door ROI after a leave
event); it exists only to measure chase latency and duration.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .behavior_log import (
    BehaviorLog,
    FrameRecord,
    InstructionEvent,
    ParadigmSegment,
    PersonId,
    SessionManifest,
)

KINDS = ("look", "point", "smile", "speak", "leave", "chase")

PERMITTED = {
    "RN": frozenset({"look", "speak"}),
    "SS": frozenset({"look", "smile"}),
    "IG": frozenset({"look", "point"}),
    "RJA": frozenset({"look"}),
    "IJA": frozenset({"look", "point"}),
    "SA": frozenset({"look", "leave", "chase"}),
}

# response kinds whose latency/duration are measured against instructions
MEASURED_KINDS = ("look", "point", "chase")


@dataclass(frozen=True)
class ParserConfig:
    look_max_angle_deg: float = 15.0
    look_min_dwell_s: float = 0.3
    look_max_gap_s: float = 0.2
    point_min_dwell_s: float = 0.2
    precise_point_angle_deg: float = 10.0
    smile_min_dwell_s: float = 0.5
    leave_gap_s: float = 1.0
    chase_speed_px_s: float = 50.0
    chase_min_dwell_s: float = 0.5
    door_roi: str = "door"

    @classmethod
    def from_dict(cls, d: dict) -> "ParserConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown parser config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ResponseEvent:
    kind: str
    start_s: float
    end_s: float
    person: PersonId
    paradigm: str
    target: Optional[str] = None
    text: Optional[str] = None
    precise: Optional[bool] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["person"] = {"role": self.person.role, "label": self.person.label}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseEvent":
        d = dict(d)
        d["person"] = PersonId(d["person"]["role"], d["person"]["label"])
        return cls(**d)


@dataclass(frozen=True)
class ResponseMeasure:
    event_kind: str
    latency_s: float
    duration_s: float
    paradigm: str
    session_code: str


def _frames_to_count(seconds: float, fps: float, *, at_least_one: bool) -> int:
    n = math.ceil(seconds * fps - 1e-9)
    return max(n, 1) if at_least_one else max(n, 0)


def _runs(flags: list[bool], min_len: int, max_gap: int) -> list[tuple[int, int]]:
    """Runs of True (inclusive index pairs) of at least ``min_len`` frames.

    False gaps of up to ``max_gap`` frames inside a run are bridged; the run's
    length is measured from its first to its last True frame.
    """
    out = []
    start = last = None
    for i, f in enumerate(flags):
        if f:
            if start is None:
                start = i
            elif i - last - 1 > max_gap:
                if last - start + 1 >= min_len:
                    out.append((start, last))
                start = i
            last = i
    if start is not None and last - start + 1 >= min_len:
        out.append((start, last))
    return out


def _paradigm_frames(log: BehaviorLog, p: ParadigmSegment) -> list[FrameRecord]:
    dt = 1.0 / log.fps
    return [fr for fr in log.frames if p.start_s - 1e-9 <= fr.timestamp_s and fr.timestamp_s + dt <= p.end_s + 1e-9]


def _look_targets(frames, child: PersonId):
    targets = []
    for fr in frames:
        s = fr.state_of(child)
        if s is not None and s.present and s.gaze_target is not None and s.gaze_target not in targets:
            targets.append(s.gaze_target)
    return targets


def _target_name(target) -> str:
    if isinstance(target, PersonId):
        return target.role.lower()
    return target


def _detect_look(frames, child, p, cfg, fps):
    events = []
    dt = 1.0 / fps
    min_len = _frames_to_count(cfg.look_min_dwell_s, fps, at_least_one=True)
    max_gap = int(math.floor(cfg.look_max_gap_s * fps + 1e-9))
    for target in _look_targets(frames, child):
        flags = []
        for fr in frames:
            s = fr.state_of(child)
            flags.append(s is not None and s.looks_at(target, cfg.look_max_angle_deg))
        for a, b in _runs(flags, min_len, max_gap):
            events.append(ResponseEvent(
                "look", frames[a].timestamp_s, frames[b].timestamp_s + dt, child, p.paradigm,
                target=_target_name(target),
            ))
    return events


def _detect_point(frames, child, p, cfg, fps):
    events = []
    dt = 1.0 / fps
    min_len = _frames_to_count(cfg.point_min_dwell_s, fps, at_least_one=True)
    targets = []
    for fr in frames:
        s = fr.state_of(child)
        if s is not None and s.present and s.gesture == "Pointing" and s.pointing_target and s.pointing_target not in targets:
            targets.append(s.pointing_target)
    for target in targets:
        flags = []
        for fr in frames:
            s = fr.state_of(child)
            flags.append(s is not None and s.present and s.gesture == "Pointing" and s.pointing_target == target)
        for a, b in _runs(flags, min_len, 0):
            angles = []
            for fr in frames[a:b + 1]:
                s = fr.state_of(child)
                if s.gaze_target == target and s.gaze_angle_deg is not None:
                    angles.append(s.gaze_angle_deg)
            precise = bool(angles) and sum(angles) / len(angles) <= cfg.precise_point_angle_deg
            events.append(ResponseEvent(
                "point", frames[a].timestamp_s, frames[b].timestamp_s + dt, child, p.paradigm,
                target=target, precise=precise,
            ))
    return events


def _detect_smile(frames, child, p, cfg, fps):
    dt = 1.0 / fps
    min_len = _frames_to_count(cfg.smile_min_dwell_s, fps, at_least_one=True)
    flags = []
    for fr in frames:
        s = fr.state_of(child)
        flags.append(s is not None and s.present and s.expression == "Happy")
    return [
        ResponseEvent("smile", frames[a].timestamp_s, frames[b].timestamp_s + dt, child, p.paradigm)
        for a, b in _runs(flags, min_len, 0)
    ]


def _detect_speak(log: BehaviorLog, p: ParadigmSegment):
    return [
        ResponseEvent("speak", seg.start_s, min(seg.end_s, p.end_s), seg.speaker, p.paradigm, text=seg.text)
        for seg in log.speech
        if p.start_s - 1e-9 <= seg.start_s < p.end_s
    ]


def _detect_leave(frames, people, p, cfg, fps):
    events = []
    dt = 1.0 / fps
    min_absent = _frames_to_count(cfg.leave_gap_s, fps, at_least_one=True)
    for person in people:
        if person.role == "Child":
            continue
        present = []
        for fr in frames:
            s = fr.state_of(person)
            present.append(s is not None and s.present)
        seen = False
        i = 0
        while i < len(present):
            if present[i]:
                seen = True
                i += 1
                continue
            j = i
            while j < len(present) and not present[j]:
                j += 1
            if seen and j - i >= min_absent:
                end = frames[j].timestamp_s if j < len(frames) else frames[-1].timestamp_s + dt
                events.append(ResponseEvent("leave", frames[i].timestamp_s, end, person, p.paradigm))
            i = j
    return events


def _detect_chase(frames, child, p, cfg, fps, manifest: SessionManifest, leaves):
    door = manifest.roi(cfg.door_roi)
    if door is None or door.position_px is None or not leaves:
        return []
    first_leave = min(e.start_s for e in leaves)
    flags = [False]
    prev = None
    for k, fr in enumerate(frames):
        s = fr.state_of(child)
        pos = s.position_px if s is not None and s.present else None
        if k > 0:
            ok = False
            if pos is not None and prev is not None and fr.timestamp_s >= first_leave - 1e-9:
                d_prev = math.dist(prev, door.position_px)
                d_now = math.dist(pos, door.position_px)
                ok = (d_prev - d_now) * fps > cfg.chase_speed_px_s
            flags.append(ok)
        prev = pos
    min_len = _frames_to_count(cfg.chase_min_dwell_s, fps, at_least_one=True)
    # flag k marks motion during the frame interval (k-1, k]
    return [
        ResponseEvent("chase", frames[a - 1].timestamp_s, frames[b].timestamp_s, child, p.paradigm,
                      target=cfg.door_roi)
        for a, b in _runs(flags, min_len, 0)
    ]


def _sort_key(e: ResponseEvent):
    return (e.start_s, KINDS.index(e.kind), e.end_s, str(e.person), e.target or "", e.text or "")


def parse_events(log: BehaviorLog, manifest: SessionManifest, cfg: Optional[ParserConfig] = None) -> list[ResponseEvent]:
    """Detect response events in every paradigm interval of the session."""
    cfg = cfg or ParserConfig()
    fps = log.fps
    child = log.child
    people = log.people()
    events: list[ResponseEvent] = []
    for p in manifest.paradigms:
        allowed = PERMITTED[p.paradigm]
        frames = _paradigm_frames(log, p)
        if not frames:
            continue
        found: list[ResponseEvent] = []
        if "look" in allowed:
            found += _detect_look(frames, child, p, cfg, fps)
        if "point" in allowed:
            found += _detect_point(frames, child, p, cfg, fps)
        if "smile" in allowed:
            found += _detect_smile(frames, child, p, cfg, fps)
        if "speak" in allowed:
            found += _detect_speak(log, p)
        leaves = []
        if "leave" in allowed:
            leaves = _detect_leave(frames, people, p, cfg, fps)
            found += leaves
        if "chase" in allowed:
            found += _detect_chase(frames, child, p, cfg, fps, manifest, leaves)
        events += found
    return sorted(events, key=_sort_key)


def _qualifies(event: ResponseEvent, kind: str, paradigm: ParadigmSegment, ins: InstructionEvent) -> bool:
    if event.kind != kind or event.paradigm != paradigm.paradigm:
        return False
    if not paradigm.contains(event.start_s) or event.start_s < ins.time_s:
        return False
    if kind in ("look", "point") and ins.target_roi is not None:
        return event.target == ins.target_roi
    return True


def measure_responses(events: list[ResponseEvent], manifest: SessionManifest) -> list[ResponseMeasure]:
    """Pair each instruction with the first later event of each measured kind.

    Look and point responses to targeted instructions must hit the instructed
    ROI. Instructions without a qualifying event produce no measure.
    """
    ordered = sorted(events, key=lambda e: e.start_s)
    out = []
    for p, ins in manifest.instructions():
        for kind in MEASURED_KINDS:
            if kind not in PERMITTED[p.paradigm]:
                continue
            hit = next((e for e in ordered if _qualifies(e, kind, p, ins)), None)
            if hit is not None:
                out.append(ResponseMeasure(
                    kind, hit.start_s - ins.time_s, hit.end_s - hit.start_s, p.paradigm, ins.session_code,
                ))
    return out


def dumps_events(events: list[ResponseEvent]) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for e in events)


def loads_events(text: str) -> list[ResponseEvent]:
    return [ResponseEvent.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
