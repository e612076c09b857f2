"""Small hand-authored sessions for unit tests."""
from __future__ import annotations

from scbu.behavior_log import (
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

CHILD = PersonId("Child", "c1")
DOCTOR = PersonId("Doctor", "d1")
PARENT = PersonId("Parent", "p1")

DEFAULT_ROIS = ("flower", "clock", "door", "toy", "wall_left")


def make_log(n_frames, fps=10.0, child=None, others=None, speech=(), case_id="t-001"):
    """``child(k)`` / ``others(k)`` return PersonState keyword overrides (or None for 'not listed')."""
    frames = []
    for k in range(n_frames):
        persons = []
        kw = {} if child is None else child(k)
        if kw is not None:
            persons.append(PersonState(CHILD, **kw))
        if others is not None:
            for person, fn in others.items():
                okw = fn(k)
                if okw is not None:
                    persons.append(PersonState(person, **okw))
        frames.append(FrameRecord(k, k / fps, tuple(persons)))
    return BehaviorLog(case_id, fps, tuple(frames), tuple(speech))


def make_manifest(paradigms, fps=10.0, rois=DEFAULT_ROIS, case_id="t-001", gender="male", age=30, door_at=(1800.0, 500.0)):
    roi_objs = tuple(Roi(r, door_at if r == "door" else None) for r in rois)
    segs = tuple(
        ParadigmSegment(p, s, e, tuple(InstructionEvent(code, t, roi) for code, t, roi in instr))
        for p, s, e, instr in paradigms
    )
    return SessionManifest(case_id, gender, age, fps, roi_objs, segs)


def speech(speaker, start, end, text="hello"):
    return SpeechSegment(speaker, start, end, text)
