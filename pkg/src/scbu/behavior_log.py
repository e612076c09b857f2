"""Behavioral-log data contract: per-frame perception records plus the session manifest.

A session is stored as two files that share a stem:

``<stem>.log.jsonl``
    One JSON object per line. The first line is a header
    (``{"type": "header", "schema_version": ..., "case_id": ...}``), then one
    ``"frame"`` record per video frame in order, then zero or more ``"speech"``
    records.
``<stem>.manifest.json``
    A single JSON document describing the child, the frame rate, the declared
    object ROIs and the paradigm/instruction timeline.

Files written by :func:`save_log` are in canonical form (sorted keys, compact
separators, every optional field spelled out as ``null``); loading and saving a
canonical file reproduces it byte for byte.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .errors import ManifestError, NoChildError, SchemaError

SCHEMA_VERSION = "1.0"

ROLES = ("Child", "Doctor", "Parent")
EXPRESSIONS = ("Neutral", "Happy", "Sad")
GESTURES = ("None", "Pointing", "HandRaise", "Other")
GENDERS = ("male", "female")

# session codes permitted in each paradigm
PARADIGM_SESSIONS = {
    "RN": ("P1", "P2"),
    "SS": ("P3", "P4", "P5", "P6"),
    "IG": ("P7", "P8", "P9", "P10"),
    "RJA": ("P11",),
    "IJA": ("P12", "P13", "P14"),
    "SA": ("P15", "P16"),
}
PARADIGMS = tuple(PARADIGM_SESSIONS)
TARGETED_PARADIGMS = ("IG", "RJA", "IJA")

TIME_TOL = 1e-9


@dataclass(frozen=True, order=True)
class PersonId:
    role: str
    label: str

    def __str__(self):
        return f"{self.role}:{self.label}"


GazeTarget = Union[str, PersonId, None]
"""A declared ROI name, another person, or nothing."""


@dataclass(frozen=True)
class PersonState:
    person: PersonId
    present: bool = True
    position_px: Optional[tuple[float, float]] = None
    gaze_target: GazeTarget = None
    gaze_angle_deg: Optional[float] = None
    expression: str = "Neutral"
    valence: Optional[float] = None
    arousal: Optional[float] = None
    gesture: str = "None"
    pointing_target: Optional[str] = None

    def looks_at(self, target: GazeTarget, max_angle_deg: float) -> bool:
        if not self.present or self.gaze_target is None or self.gaze_target != target:
            return False
        if self.gaze_angle_deg is None:
            # person targets may come without an angle
            return isinstance(target, PersonId)
        return self.gaze_angle_deg <= max_angle_deg


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    timestamp_s: float
    persons: tuple[PersonState, ...] = ()

    def state_of(self, person: PersonId) -> Optional[PersonState]:
        for state in self.persons:
            if state.person == person:
                return state
        return None


@dataclass(frozen=True)
class SpeechSegment:
    speaker: PersonId
    start_s: float
    end_s: float
    text: str


@dataclass(frozen=True)
class BehaviorLog:
    case_id: str
    fps: float
    frames: tuple[FrameRecord, ...]
    speech: tuple[SpeechSegment, ...] = ()

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    @property
    def child(self) -> PersonId:
        for frame in self.frames:
            for state in frame.persons:
                if state.person.role == "Child":
                    return state.person
        for seg in self.speech:
            if seg.speaker.role == "Child":
                return seg.speaker
        raise NoChildError(f"case {self.case_id!r}: no child in log")

    def people(self) -> list[PersonId]:
        seen = {s.person for f in self.frames for s in f.persons}
        seen.update(seg.speaker for seg in self.speech)
        return sorted(seen)

    def states(self, person: PersonId) -> Iterator[tuple[FrameRecord, Optional[PersonState]]]:
        for frame in self.frames:
            yield frame, frame.state_of(person)


@dataclass(frozen=True)
class Roi:
    name: str
    position_px: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class InstructionEvent:
    session_code: str
    time_s: float
    target_roi: Optional[str] = None


@dataclass(frozen=True)
class ParadigmSegment:
    paradigm: str
    start_s: float
    end_s: float
    instructions: tuple[InstructionEvent, ...] = ()

    def contains(self, t: float) -> bool:
        return self.start_s - TIME_TOL <= t <= self.end_s + TIME_TOL


@dataclass(frozen=True)
class SessionManifest:
    case_id: str
    child_gender: str
    child_age_months: int
    fps: float
    rois: tuple[Roi, ...] = ()
    paradigms: tuple[ParadigmSegment, ...] = ()

    def roi(self, name: str) -> Optional[Roi]:
        for roi in self.rois:
            if roi.name == name:
                return roi
        return None

    def instructions(self) -> list[tuple[ParadigmSegment, InstructionEvent]]:
        return [(p, ins) for p in self.paradigms for ins in p.instructions]

    def paradigm_at(self, t: float) -> Optional[ParadigmSegment]:
        for p in self.paradigms:
            if p.contains(t):
                return p
        return None


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _person_to_dict(p: PersonId) -> dict:
    return {"role": p.role, "label": p.label}


def _gaze_to_dict(target: GazeTarget):
    if target is None:
        return None
    if isinstance(target, PersonId):
        return {"person": _person_to_dict(target)}
    return {"roi": target}


def _state_to_dict(s: PersonState) -> dict:
    return {
        "person": _person_to_dict(s.person),
        "present": s.present,
        "position_px": list(s.position_px) if s.position_px is not None else None,
        "gaze_target": _gaze_to_dict(s.gaze_target),
        "gaze_angle_deg": s.gaze_angle_deg,
        "expression": s.expression,
        "valence": s.valence,
        "arousal": s.arousal,
        "gesture": s.gesture,
        "pointing_target": s.pointing_target,
    }


def dumps_log(log: BehaviorLog) -> str:
    lines = [_dumps({"type": "header", "schema_version": SCHEMA_VERSION, "case_id": log.case_id})]
    for fr in log.frames:
        lines.append(_dumps({
            "type": "frame",
            "frame_index": fr.frame_index,
            "timestamp_s": fr.timestamp_s,
            "persons": [_state_to_dict(s) for s in fr.persons],
        }))
    for seg in log.speech:
        lines.append(_dumps({
            "type": "speech",
            "speaker": _person_to_dict(seg.speaker),
            "start_s": seg.start_s,
            "end_s": seg.end_s,
            "text": seg.text,
        }))
    return "\n".join(lines) + "\n"


def manifest_to_dict(m: SessionManifest) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "case_id": m.case_id,
        "child_gender": m.child_gender,
        "child_age_months": m.child_age_months,
        "fps": m.fps,
        "rois": [
            {"name": r.name, "position_px": list(r.position_px) if r.position_px else None}
            for r in m.rois
        ],
        "paradigms": [
            {
                "paradigm": p.paradigm,
                "start_s": p.start_s,
                "end_s": p.end_s,
                "instructions": [
                    {"session_code": i.session_code, "time_s": i.time_s, "target_roi": i.target_roi}
                    for i in p.instructions
                ],
            }
            for p in m.paradigms
        ],
    }


def dumps_manifest(m: SessionManifest) -> str:
    return json.dumps(manifest_to_dict(m), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def log_paths(stem: Union[str, Path]) -> tuple[Path, Path]:
    """Map a session stem (or either of its files) to ``(log_path, manifest_path)``."""
    p = Path(stem)
    name = p.name
    for suffix in (".log.jsonl", ".manifest.json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return p.with_name(name + ".log.jsonl"), p.with_name(name + ".manifest.json")


def save_log(log: BehaviorLog, manifest: SessionManifest, stem: Union[str, Path]) -> tuple[Path, Path]:
    log_path, manifest_path = log_paths(stem)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(dumps_log(log), encoding="utf-8")
    manifest_path.write_text(dumps_manifest(manifest), encoding="utf-8")
    return log_path, manifest_path


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _check_version(doc: dict, what: str, exc=SchemaError):
    version = doc.get("schema_version")
    if not isinstance(version, str):
        raise exc(f"{what}: missing schema_version")
    major = version.split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise exc(f"{what}: unsupported schema_version {version!r}")


def _require(d: dict, key: str, where: dict):
    if key not in d:
        raise SchemaError(f"missing field {key!r}", **where)
    return d[key]


def _number(value, name: str, where: dict, lo=None, hi=None, optional=False):
    if value is None:
        if optional:
            return None
        raise SchemaError(f"{name} is required", **where)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(f"{name} must be a finite number, got {value!r}", **where)
    if lo is not None and value < lo or hi is not None and value > hi:
        raise SchemaError(f"{name}={value} outside [{lo}, {hi}]", **where)
    return float(value)


def _point(value, name: str, where: dict):
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError(f"{name} must be a 2-element list", **where)
    return (_number(value[0], name, where), _number(value[1], name, where))


def _person(d, where: dict) -> PersonId:
    if not isinstance(d, dict):
        raise SchemaError(f"person must be an object, got {d!r}", **where)
    role = _require(d, "role", where)
    label = _require(d, "label", where)
    if role not in ROLES:
        raise SchemaError(f"unknown role {role!r}", **where)
    if not isinstance(label, str) or not label:
        raise SchemaError("person label must be a non-empty string", **where)
    return PersonId(role, label)


def _enum(value, allowed, name, where):
    if value not in allowed:
        raise SchemaError(f"{name}={value!r} not in {allowed}", **where)
    return value


def _parse_state(d: dict, where: dict) -> PersonState:
    person = _person(_require(d, "person", where), where)
    present = d.get("present", True)
    if not isinstance(present, bool):
        raise SchemaError("present must be boolean", **where)
    gaze_raw = d.get("gaze_target")
    gaze: GazeTarget
    if gaze_raw is None:
        gaze = None
    elif isinstance(gaze_raw, dict) and set(gaze_raw) == {"roi"} and isinstance(gaze_raw["roi"], str):
        gaze = gaze_raw["roi"]
    elif isinstance(gaze_raw, dict) and set(gaze_raw) == {"person"}:
        gaze = _person(gaze_raw["person"], where)
    else:
        raise SchemaError(f"malformed gaze_target {gaze_raw!r}", **where)
    angle = _number(d.get("gaze_angle_deg"), "gaze_angle_deg", where, 0.0, 180.0, optional=True)
    if isinstance(gaze, str) and angle is None:
        raise SchemaError("gaze_target on an ROI requires gaze_angle_deg", **where)
    gesture = _enum(d.get("gesture", "None"), GESTURES, "gesture", where)
    pointing = d.get("pointing_target")
    if pointing is not None:
        if gesture != "Pointing":
            raise SchemaError("pointing_target present but gesture is not Pointing", **where)
        if not isinstance(pointing, str):
            raise SchemaError("pointing_target must be an ROI name", **where)
    return PersonState(
        person=person,
        present=present,
        position_px=_point(d.get("position_px"), "position_px", where),
        gaze_target=gaze,
        gaze_angle_deg=angle,
        expression=_enum(d.get("expression", "Neutral"), EXPRESSIONS, "expression", where),
        valence=_number(d.get("valence"), "valence", where, -1.0, 1.0, optional=True),
        arousal=_number(d.get("arousal"), "arousal", where, -1.0, 1.0, optional=True),
        gesture=gesture,
        pointing_target=pointing,
    )


def parse_log_lines(lines: Iterable[str], fps: float) -> BehaviorLog:
    """Parse the line-delimited log body. Frame timing is checked against ``fps``."""
    header = None
    frames: list[FrameRecord] = []
    speech: list[SpeechSegment] = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(rec, dict):
            raise SchemaError("record must be an object", line=lineno)
        kind = rec.get("type")
        if header is None:
            if kind != "header":
                raise SchemaError("first record must be the header", line=lineno)
            _check_version(rec, "log")
            header = rec
            continue
        if kind == "frame":
            where = {"line": lineno, "frame_index": rec.get("frame_index")}
            idx = _require(rec, "frame_index", where)
            if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
                raise SchemaError("frame_index must be a non-negative integer", **where)
            if idx != len(frames):
                raise SchemaError(f"frame_index not contiguous (expected {len(frames)})", **where)
            if speech:
                raise SchemaError("frame records must precede speech records", **where)
            ts = _number(_require(rec, "timestamp_s", where), "timestamp_s", where, lo=0.0)
            if abs(ts - idx / fps) > TIME_TOL:
                raise SchemaError(f"timestamp_s={ts} != frame_index/fps={idx / fps}", **where)
            persons_raw = _require(rec, "persons", where)
            if not isinstance(persons_raw, list):
                raise SchemaError("persons must be a list", **where)
            states = tuple(_parse_state(p, where) for p in persons_raw)
            if len({s.person for s in states}) != len(states):
                raise SchemaError("person listed twice in one frame", **where)
            frames.append(FrameRecord(idx, ts, states))
        elif kind == "speech":
            where = {"line": lineno}
            start = _number(_require(rec, "start_s", where), "start_s", where, lo=0.0)
            end = _number(_require(rec, "end_s", where), "end_s", where, lo=0.0)
            if not start < end:
                raise SchemaError("speech segment needs start_s < end_s", **where)
            text = _require(rec, "text", where)
            if not isinstance(text, str):
                raise SchemaError("speech text must be a string", **where)
            speech.append(SpeechSegment(_person(_require(rec, "speaker", where), where), start, end, text))
        else:
            raise SchemaError(f"unknown record type {kind!r}", line=lineno)
    if header is None:
        raise SchemaError("empty log")
    if not frames:
        raise SchemaError("log has no frames")
    case_id = header.get("case_id")
    if not isinstance(case_id, str) or not case_id:
        raise SchemaError("header case_id must be a non-empty string", line=1)
    return BehaviorLog(case_id, float(fps), tuple(frames), tuple(speech))


def parse_manifest(doc: dict) -> SessionManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    _check_version(doc, "manifest", ManifestError)
    try:
        fps = doc["fps"]
        age = doc["child_age_months"]
        case_id = doc["case_id"]
        gender = doc["child_gender"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing field {exc.args[0]!r}") from None
    if isinstance(fps, bool) or not isinstance(fps, (int, float)) or not fps > 0:
        raise ManifestError(f"fps must be positive, got {fps!r}")
    if isinstance(age, bool) or not isinstance(age, int) or age <= 0:
        raise ManifestError(f"child_age_months must be a positive integer, got {age!r}")
    if gender not in GENDERS:
        raise ManifestError(f"child_gender {gender!r} not in {GENDERS}")
    rois = []
    for r in doc.get("rois", []):
        pos = r.get("position_px")
        rois.append(Roi(r["name"], tuple(float(v) for v in pos) if pos else None))
    if len({r.name for r in rois}) != len(rois):
        raise ManifestError("duplicate ROI names")
    paradigms = []
    for p in doc.get("paradigms", []):
        try:
            instr = tuple(
                InstructionEvent(i["session_code"], float(i["time_s"]), i.get("target_roi"))
                for i in p.get("instructions", [])
            )
            paradigms.append(ParadigmSegment(p["paradigm"], float(p["start_s"]), float(p["end_s"]), instr))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed paradigm entry: {exc}") from None
    return SessionManifest(str(case_id), gender, age, float(fps), tuple(rois), tuple(paradigms))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate_manifest(m: SessionManifest, duration_s: Optional[float] = None) -> None:
    roi_names = {r.name for r in m.rois}
    prev_end = -math.inf
    for p in sorted(m.paradigms, key=lambda p: p.start_s):
        if p.paradigm not in PARADIGM_SESSIONS:
            raise ManifestError(f"unknown paradigm {p.paradigm!r}")
        if not p.start_s < p.end_s:
            raise ManifestError(f"{p.paradigm}: start_s must be < end_s")
        if p.start_s < 0 or (duration_s is not None and p.end_s > duration_s + TIME_TOL):
            raise ManifestError(f"{p.paradigm}: interval [{p.start_s}, {p.end_s}] outside the log")
        if p.start_s < prev_end:
            raise ManifestError(f"{p.paradigm}: overlaps the previous paradigm")
        prev_end = p.end_s
        allowed = PARADIGM_SESSIONS[p.paradigm]
        for ins in p.instructions:
            if ins.session_code not in allowed:
                raise ManifestError(f"{p.paradigm}: session {ins.session_code} not valid (allowed {allowed})")
            if not p.contains(ins.time_s):
                raise ManifestError(f"{p.paradigm}/{ins.session_code}: time {ins.time_s} outside the paradigm")
            if p.paradigm in TARGETED_PARADIGMS and not ins.target_roi:
                raise ManifestError(f"{p.paradigm}/{ins.session_code}: target_roi required")
            if ins.target_roi is not None and ins.target_roi not in roi_names:
                raise ManifestError(f"{p.paradigm}/{ins.session_code}: ROI {ins.target_roi!r} not declared")


def validate_log(log: BehaviorLog, manifest: SessionManifest) -> None:
    if log.case_id != manifest.case_id:
        raise ManifestError(f"case_id mismatch: log {log.case_id!r} vs manifest {manifest.case_id!r}")
    if abs(log.fps - manifest.fps) > TIME_TOL:
        raise ManifestError("log fps differs from manifest fps")
    roi_names = {r.name for r in manifest.rois}
    children = set()
    prev_t = -math.inf
    for fr in log.frames:
        where = {"frame_index": fr.frame_index}
        if not fr.timestamp_s > prev_t:
            raise SchemaError("timestamps must be strictly increasing", **where)
        prev_t = fr.timestamp_s
        if abs(fr.timestamp_s - fr.frame_index / log.fps) > TIME_TOL:
            raise SchemaError("timestamp_s != frame_index/fps", **where)
        for s in fr.persons:
            if s.person.role == "Child":
                children.add(s.person)
            for name in (s.gaze_target, s.pointing_target):
                if isinstance(name, str) and name not in roi_names:
                    raise SchemaError(f"ROI {name!r} not declared in manifest", **where)
            for v, label in ((s.valence, "valence"), (s.arousal, "arousal")):
                if v is not None and not -1.0 <= v <= 1.0:
                    raise SchemaError(f"{label}={v} outside [-1, 1]", **where)
    by_speaker: dict[PersonId, list[SpeechSegment]] = {}
    for seg in log.speech:
        if seg.speaker.role == "Child":
            children.add(seg.speaker)
        if seg.end_s > log.duration_s + TIME_TOL:
            raise SchemaError(f"speech segment ends after the log ({seg.end_s})")
        by_speaker.setdefault(seg.speaker, []).append(seg)
    for speaker, segs in by_speaker.items():
        segs = sorted(segs, key=lambda s: s.start_s)
        for a, b in zip(segs, segs[1:]):
            if b.start_s < a.end_s:
                raise SchemaError(f"overlapping speech segments for {speaker}")
    if len(children) != 1:
        raise SchemaError(f"expected exactly one Child, found {len(children)}")
    validate_manifest(manifest, log.duration_s)


def load_manifest(path: Union[str, Path]) -> SessionManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc.msg})") from None
    return parse_manifest(doc)


def load_log(path: Union[str, Path], manifest_path: Union[str, Path, None] = None) -> tuple[BehaviorLog, SessionManifest]:
    """Load and fully validate a session.

    ``path`` is the ``.log.jsonl`` file (or the shared stem); the manifest is
    looked up next to it unless ``manifest_path`` is given.
    """
    log_path, default_manifest = log_paths(path)
    if Path(path).is_file() and not str(path).endswith(".manifest.json"):
        log_path = Path(path)
    manifest = load_manifest(manifest_path or default_manifest)
    with open(log_path, encoding="utf-8") as fh:
        log = parse_log_lines(fh, manifest.fps)
    validate_log(log, manifest)
    return log, manifest


def child_valence_series(log: BehaviorLog) -> list[tuple[float, float]]:
    """(timestamp, valence) for every frame where the child's face was scored."""
    child = log.child
    out = []
    seen = False
    for fr, s in log.states(child):
        if s is None or not s.present:
            continue
        seen = True
        if s.valence is not None:
            out.append((fr.timestamp_s, s.valence))
    if not seen:
        raise NoChildError(f"case {log.case_id!r}: child never present")
    return out


def child_series(log: BehaviorLog, attr: str) -> list[tuple[float, float]]:
    child = log.child
    return [
        (fr.timestamp_s, getattr(s, attr))
        for fr, s in log.states(child)
        if s is not None and s.present and getattr(s, attr) is not None
    ]
