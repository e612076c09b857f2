"""Synthetic assessment sessions for desk-scale runs of the whole pipeline.

Each case walks through the six paradigms with a fixed timeline. The child's
responses are drawn from a label-specific profile whose means follow the TD
and ASD group means reported for the clinical data: TD children respond more
often and faster, look longer, show a wider valence range and more frequent
emotional changes. These are fixtures, not a model of autism.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..behavior_log import (
    BehaviorLog,
    FrameRecord,
    InstructionEvent,
    ParadigmSegment,
    PersonId,
    PersonState,
    Roi,
    SessionManifest,
    SpeechSegment,
)
from .dataset import Case

CHILD = PersonId("Child", "child")
DOCTOR = PersonId("Doctor", "doctor")
PARENT = PersonId("Parent", "parent")

CHILD_HOME = (400.0, 500.0)
DOOR = (1800.0, 500.0)

ROIS = (
    Roi("toy"), Roi("flower"), Roi("tree"), Roi("balloon"), Roi("sofa"),
    Roi("clock"), Roi("window"), Roi("left_wall"), Roi("right_wall"), Roi("back_wall"),
    Roi("door", DOOR),
)

# paradigm, length (s), [(session code, offset (s), target ROI)]
TIMELINE = (
    ("RN", 30.0, [("P1", 3.0, None), ("P2", 16.0, None)]),
    ("SS", 44.0, [("P3", 3.0, None), ("P4", 13.0, None), ("P5", 23.0, None), ("P6", 33.0, None)]),
    ("IG", 56.0, [("P7", 3.0, "flower"), ("P8", 16.0, "tree"), ("P9", 29.0, "balloon"), ("P10", 42.0, "sofa")]),
    ("RJA", 16.0, [("P11", 3.0, "clock")]),
    ("IJA", 42.0, [("P12", 3.0, "left_wall"), ("P13", 16.0, "right_wall"), ("P14", 29.0, "back_wall")]),
    ("SA", 44.0, [("P15", 3.0, None), ("P16", 24.0, None)]),
)
PARADIGM_GAP_S = 2.0
LEAD_IN_S = 1.0


@dataclass(frozen=True)
class Profile:
    p_respond: float
    look_latency: tuple[float, float]
    look_duration: tuple[float, float]
    p_point: float
    point_latency: tuple[float, float]
    point_duration: tuple[float, float]
    p_precise: float
    p_speak: float
    p_smile: float
    p_share: float
    p_chase: float
    chase_latency: tuple[float, float]
    chase_duration: tuple[float, float]
    emotion_rate: float
    emotion_latency: tuple[float, float]
    valence_peak: float
    valence_trough: float
    arousal_peak: float
    arousal_trough: float
    p_male: float


PROFILES = {
    "TD": Profile(
        p_respond=0.85, look_latency=(4.99, 1.0), look_duration=(1.65, 0.4),
        p_point=0.7, point_latency=(8.58, 1.5), point_duration=(0.45, 0.1), p_precise=0.7,
        p_speak=0.6, p_smile=0.8, p_share=0.6,
        p_chase=0.8, chase_latency=(5.40, 1.0), chase_duration=(10.34, 2.0),
        emotion_rate=9.115, emotion_latency=(5.73, 1.0),
        valence_peak=0.33, valence_trough=-0.29, arousal_peak=0.198, arousal_trough=-0.172,
        p_male=0.5,
    ),
    "ASD": Profile(
        p_respond=0.45, look_latency=(5.63, 1.0), look_duration=(1.30, 0.4),
        p_point=0.3, point_latency=(10.25, 1.5), point_duration=(0.30, 0.05), p_precise=0.3,
        p_speak=0.15, p_smile=0.3, p_share=0.15,
        p_chase=0.35, chase_latency=(10.05, 2.0), chase_duration=(16.29, 2.0),
        emotion_rate=6.851, emotion_latency=(6.75, 1.0),
        valence_peak=0.28, valence_trough=-0.25, arousal_peak=0.189, arousal_trough=-0.165,
        p_male=0.8,
    ),
}


@dataclass(frozen=True)
class SynthSpec:
    n_asd: int
    n_td: int
    seed: int = 0
    fps: float = 10.0
    profiles: dict = field(default_factory=lambda: dict(PROFILES))


class _Session:
    """Mutable per-frame buffers for one case."""

    def __init__(self, n: int, fps: float):
        self.n, self.fps = n, fps
        self.t = np.arange(n) / fps
        self.gaze = [("roi", "toy")] * n
        self.angle = np.full(n, 5.0)
        self.expression = ["Neutral"] * n
        self.gesture = ["None"] * n
        self.pointing: list[Optional[str]] = [None] * n
        self.pos = np.tile(np.array(CHILD_HOME), (n, 1))
        self.parent_present = np.ones(n, dtype=bool)
        self.speech: list[SpeechSegment] = []

    def span(self, start_s: float, duration_s: float, limit_s: float) -> range:
        a = int(round(start_s * self.fps))
        b = int(round(min(start_s + duration_s, limit_s) * self.fps))
        return range(max(a, 0), min(b, self.n))

    def look(self, target, start, dur, limit, angle=8.0):
        for i in self.span(start, dur, limit):
            self.gaze[i] = target
            self.angle[i] = angle


def _draw(rng, mean_sd, lo=0.1):
    return max(float(rng.normal(*mean_sd)), lo)


def _valence_track(rng, s: _Session, prof: Profile, first_instruction: float, peak: float, trough: float, rate: float, latency):
    n, fps = s.n, s.fps
    noise = rng.normal(0.0, 0.008, n)
    base = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = 0.9 * acc + noise[i]
        base[i] = acc
    bumps = np.zeros(n)
    count = int(rng.poisson(rate))
    if count:
        times = [first_instruction + _draw(rng, latency, 0.5)]
        times += list(rng.uniform(first_instruction, s.t[-1] - 4.0, count - 1))
        for t0 in times:
            up = rng.random() < 0.6
            amp = rng.uniform(0.18, max(peak, 0.19)) if up else -rng.uniform(0.18, max(-trough, 0.19))
            i0 = int(round(t0 * fps))
            hold = int(round(rng.uniform(1.0, 2.0) * fps))
            decay = int(round(1.5 * fps))
            shape = np.concatenate([np.full(hold, 1.0), np.linspace(1.0, 0.0, decay + 1)[1:]])
            seg = slice(i0, min(i0 + len(shape), n))
            # a new bump replaces the running one so the jump at its onset is full size
            bumps[seg] = amp * shape[: seg.stop - seg.start]
    return np.clip(base + bumps, -1.0, 1.0)


def _arousal_track(rng, s: _Session, peak: float, trough: float):
    n = s.n
    noise = rng.normal(0.0, 0.01, n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = 0.95 * acc + noise[i]
        out[i] = acc
    span = max(out.max() - out.min(), 1e-9)
    scaled = trough + (out - out.min()) / span * (peak - trough)
    return np.clip(scaled, -1.0, 1.0)


def synth_case(case_id: str, label: str, rng: np.random.Generator, fps: float = 10.0, profiles=None) -> Case:
    prof = (profiles or PROFILES)[label]
    paradigms = []
    t = LEAD_IN_S
    for name, length, instr in TIMELINE:
        jitter = [float(np.round(rng.uniform(-0.5, 0.5), 1)) for _ in instr]
        ins = tuple(InstructionEvent(code, round(t + off + j, 3), roi) for (code, off, roi), j in zip(instr, jitter))
        paradigms.append(ParadigmSegment(name, round(t, 3), round(t + length, 3), ins))
        t += length + PARADIGM_GAP_S
    n = int(round(t * fps))
    s = _Session(n, fps)

    for p in paradigms:
        end = p.end_s
        for ins in p.instructions:
            t0 = ins.time_s
            responds = rng.random() < prof.p_respond
            lat = _draw(rng, prof.look_latency, 0.5)
            dur = _draw(rng, prof.look_duration, 0.4)
            if p.paradigm == "RN":
                caller = DOCTOR if ins.session_code == "P2" else PARENT
                s.speech.append(SpeechSegment(caller, t0, t0 + 0.8, "name"))
                if responds:
                    s.look(("person", DOCTOR), t0 + lat, dur, end, angle=6.0)
                    if rng.random() < prof.p_speak:
                        s.speech.append(SpeechSegment(CHILD, t0 + lat + 0.2, t0 + lat + 1.0, "hello"))
            elif p.paradigm == "SS":
                if responds:
                    s.look(("person", DOCTOR), t0 + lat, dur, end, angle=6.0)
                    if rng.random() < prof.p_smile:
                        for i in s.span(t0 + lat + 0.1, 1.0, end):
                            s.expression[i] = "Happy"
                elif rng.random() < 0.1:
                    for i in s.span(t0 + lat, 0.8, end):
                        s.expression[i] = "Happy"
            elif p.paradigm in ("IG", "IJA"):
                target = ("roi", ins.target_roi)
                if responds:
                    s.look(target, t0 + lat, dur, end)
                    if rng.random() < prof.p_share:
                        s.look(("person", DOCTOR), t0 + lat + dur + 0.3, 1.0, end, angle=6.0)
                if rng.random() < prof.p_point:
                    plat = _draw(rng, prof.point_latency, 0.5)
                    pdur = _draw(rng, prof.point_duration, 0.3)
                    angle = 6.0 if rng.random() < prof.p_precise else 12.0
                    for i in s.span(t0 + plat, pdur, end):
                        s.gesture[i] = "Pointing"
                        s.pointing[i] = ins.target_roi
                        s.gaze[i] = target
                        s.angle[i] = angle
            elif p.paradigm == "RJA":
                if responds:
                    s.look(("roi", ins.target_roi), t0 + lat, dur, end)
                elif rng.random() < 0.3:
                    s.look(("roi", "window"), t0 + lat, dur, end)
            elif p.paradigm == "SA" and ins.session_code == "P15":
                leave_at = t0 + 3.0
                s.parent_present[int(round(leave_at * fps)):int(round(end * fps))] = False
                if rng.random() < prof.p_chase:
                    clat = max(_draw(rng, prof.chase_latency, 0.5), 3.5)
                    cdur = min(_draw(rng, prof.chase_duration, 2.0), 20.0)
                    frames = s.span(t0 + clat, cdur, end)
                    if len(frames):
                        speed = 0.9 * (DOOR[0] - CHILD_HOME[0]) / cdur
                        start = frames[0]
                        for i in range(start, s.n):
                            moved = min((i - start) / fps, cdur) * speed
                            s.pos[i] = (CHILD_HOME[0] + moved, CHILD_HOME[1])
                        back = int(round(end * fps))
                        s.pos[back:] = CHILD_HOME
                elif responds:
                    s.look(("roi", "door"), t0 + lat, dur, end)

    first_instruction = min(i.time_s for p in paradigms for i in p.instructions)
    valence = _valence_track(rng, s, prof, first_instruction, prof.valence_peak, prof.valence_trough,
                             prof.emotion_rate, prof.emotion_latency)
    arousal = _arousal_track(rng, s, prof.arousal_peak, prof.arousal_trough)

    frames = []
    for i in range(n):
        kind, target = s.gaze[i]
        child = PersonState(
            person=CHILD,
            present=True,
            position_px=(round(float(s.pos[i][0]), 1), round(float(s.pos[i][1]), 1)),
            gaze_target=target,
            gaze_angle_deg=None if kind == "person" else float(s.angle[i]),
            expression=s.expression[i],
            valence=round(float(valence[i]), 4),
            arousal=round(float(arousal[i]), 4),
            gesture=s.gesture[i],
            pointing_target=s.pointing[i],
        )
        doctor = PersonState(DOCTOR, True, (900.0, 300.0), CHILD)
        parent = PersonState(PARENT, bool(s.parent_present[i]), (300.0, 300.0) if s.parent_present[i] else None,
                             CHILD if s.parent_present[i] else None)
        frames.append(FrameRecord(i, i / fps, (child, doctor, parent)))

    speech = tuple(sorted(s.speech, key=lambda seg: (seg.start_s, seg.speaker)))
    log = BehaviorLog(case_id, float(fps), tuple(frames), speech)
    gender = "male" if rng.random() < prof.p_male else "female"
    manifest = SessionManifest(case_id, gender, int(rng.integers(15, 31)), float(fps), ROIS, tuple(paradigms))
    return Case(case_id, log, manifest, label)


def synth_dataset(spec: SynthSpec) -> list[Case]:
    """Deterministic for a given spec; case order is shuffled so labels are interleaved."""
    labels = ["ASD"] * spec.n_asd + ["TD"] * spec.n_td
    order = np.random.default_rng(spec.seed).permutation(len(labels))
    cases = []
    for k, j in enumerate(order):
        rng = np.random.default_rng([spec.seed, k])
        cases.append(synth_case(f"case-{k:03d}", labels[j], rng, spec.fps, spec.profiles))
    return cases
