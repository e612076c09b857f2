"""Compile instructions and response events into a timestamped behavior script.

Every instruction contributes its fixed instruction sentence. The events that
start inside the instruction's response window are reduced to a set of
*features* (``look_target``, ``smile``, ``speak_child``...) and matched against
per-paradigm response rules; the chosen rules pick sentences from the template
table, which reproduces the assessment's instruction/response descriptions
verbatim (including their original grammar).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .behavior_log import SessionManifest
from .errors import TemplateError
from .response_parser import ResponseEvent

SOCIAL_TARGETS = ("doctor", "parent")
DEPARTURE_TARGETS = ("parent", "door")

ORIGIN_RANK = {"Preamble": 0, "Instruction": 1, "Response": 2, "Emotion": 3}

PREAMBLE = (
    "The child is a {age}-month-old {gender}. "
    "The following is a time-ordered record of a clinical observation session."
)
GENDER_WORDS = {"male": "boy", "female": "girl"}


@dataclass(frozen=True)
class ResponseRule:
    index: int
    required: frozenset = frozenset()
    forbidden: frozenset = frozenset()

    @property
    def specificity(self) -> int:
        return len(self.required) + len(self.forbidden)

    def matches(self, features) -> bool:
        return self.required <= set(features) and not (self.forbidden & set(features))


def _rule(index, required=(), forbidden=()):
    return ResponseRule(index, frozenset(required), frozenset(forbidden))


# Responses without a rule (SS 1, IG 7, RJA 3, IJA 3, SA 4-5) have no event
# signature in the parsed log and are never emitted by default.
RULES: dict[str, tuple[ResponseRule, ...]] = {
    "RN": (_rule(1, {"look_social", "speak_child"}), _rule(2, {"look_social"}), _rule(3)),
    "SS": (
        _rule(2, {"look_social", "smile"}),
        _rule(3, {"smile"}, {"look_social"}),
        _rule(5, {"look_social"}, {"smile"}),
        _rule(4),
    ),
    "IG": (
        _rule(1, {"look_target"}),
        _rule(3, {"point_precise"}),
        _rule(4, {"point_rough"}),
        _rule(5, {"look_doctor"}),
        _rule(6, {"look_target_sustained"}),
        _rule(2),
    ),
    "RJA": (_rule(1, {"look_target"}), _rule(2, {"look_other"}, {"look_target"}), _rule(4)),
    "IJA": (
        _rule(1, {"look_target"}),
        _rule(2, {"look_doctor"}),
        _rule(4, {"look_target_sustained"}),
        _rule(5, {"point_target"}),
        _rule(6),
    ),
    "SA": (_rule(1, {"chase"}), _rule(2, {"look_departure"}, {"chase"}), _rule(3)),
}
MULTI_LINE = frozenset({"IG", "IJA", "SA"})


@dataclass(frozen=True)
class CompilerConfig:
    window_s: float = 5.0
    paradigm_windows: dict = field(default_factory=lambda: {"SA": 20.0})
    max_response_lines: int = 3
    sustained_look_s: float = 2.0
    idle_rois: tuple = ("toy",)

    def window_for(self, paradigm: str) -> float:
        return float(self.paradigm_windows.get(paradigm, self.window_s))

    @classmethod
    def from_dict(cls, d: dict) -> "CompilerConfig":
        unknown = set(d) - {"window_s", "paradigm_windows", "max_response_lines", "sustained_look_s", "idle_rois"}
        if unknown:
            raise ValueError(f"unknown compiler config keys: {sorted(unknown)}")
        d = dict(d)
        if "idle_rois" in d:
            d["idle_rois"] = tuple(d["idle_rois"])
        return cls(**d)


class TemplateTable:
    """Sentence templates keyed by (paradigm, kind, index)."""

    def __init__(self, entries: Iterable[dict]):
        self._table: dict[tuple[str, str, str], str] = {}
        for e in entries:
            key = (e["paradigm"], e["kind"], str(e["index"]))
            if not e["text"]:
                raise TemplateError(f"empty template {key}")
            self._table[key] = e["text"]

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "TemplateTable":
        if path is None:
            text = resources.files("scbu").joinpath("templates/table.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(text)["templates"])

    def instruction(self, paradigm: str, session_code: str) -> str:
        try:
            return self._table[(paradigm, "instruction", session_code)]
        except KeyError:
            raise TemplateError(f"no instruction template for {paradigm}/{session_code}") from None

    def response(self, paradigm: str, index: int) -> str:
        try:
            return self._table[(paradigm, "response", str(index))]
        except KeyError:
            raise TemplateError(f"no response template for {paradigm} response {index}") from None

    def responses(self) -> set[str]:
        return {text for (_, kind, _), text in self._table.items() if kind == "response"}


_DEFAULT_TABLE: Optional[TemplateTable] = None


def default_templates() -> TemplateTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = TemplateTable.load()
    return _DEFAULT_TABLE


def idle_responses(templates: Optional[TemplateTable] = None) -> tuple[str, ...]:
    """Distinct sentences of the fallback ("no response") rules, sorted."""
    t = templates or default_templates()
    return tuple(sorted({t.response(p, r.index) for p, rules in RULES.items() for r in rules if not r.required}))


@dataclass(frozen=True)
class ScriptLine:
    timestamp_s: float
    text: str
    origin: str
    ref: str = ""


@dataclass(frozen=True)
class ScriptDocument:
    case_id: str
    preamble: str
    lines: tuple[ScriptLine, ...] = ()

    def without_emotion(self) -> "ScriptDocument":
        return replace(self, lines=tuple(l for l in self.lines if l.origin != "Emotion"))

    def render(self) -> str:
        body = [self.preamble]
        body += [f"{format_timestamp(l.timestamp_s)} {l.text}" for l in self.lines]
        return "\n".join(body) + "\n"

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "preamble": self.preamble,
            "lines": [
                {"timestamp_s": l.timestamp_s, "text": l.text, "origin": l.origin, "ref": l.ref}
                for l in self.lines
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptDocument":
        return cls(d["case_id"], d["preamble"], tuple(ScriptLine(**l) for l in d["lines"]))


def format_timestamp(t: float) -> str:
    total = int(math.floor(t + 1e-9))
    return f"[{total // 60:02d}:{total % 60:02d}]"


def window_features(events: Sequence[ResponseEvent], target_roi: Optional[str], cfg: CompilerConfig) -> dict[str, float]:
    """Map each feature present in the window to the start time of its first event."""
    feats: dict[str, float] = {}

    def add(name, t):
        if name not in feats or t < feats[name]:
            feats[name] = t

    for e in events:
        t = e.start_s
        if e.kind == "look":
            if e.target in cfg.idle_rois:
                continue
            if target_roi is not None and e.target == target_roi:
                add("look_target", t)
                if e.end_s - e.start_s >= cfg.sustained_look_s - 1e-9:
                    add("look_target_sustained", t)
            elif e.target in SOCIAL_TARGETS:
                add("look_social", t)
            else:
                add("look_other", t)
            if e.target == "doctor":
                add("look_doctor", t)
            if e.target in DEPARTURE_TARGETS:
                add("look_departure", t)
        elif e.kind == "point":
            if target_roi is None or e.target == target_roi:
                add("point_target", t)
                add("point_precise" if e.precise else "point_rough", t)
        elif e.kind == "smile":
            add("smile", t)
        elif e.kind == "speak" and e.person.role == "Child":
            add("speak_child", t)
        elif e.kind == "chase":
            add("chase", t)
    return feats


def _fire_time(rule: ResponseRule, feats: dict[str, float]) -> Optional[float]:
    if not rule.required:
        return None
    return max(feats[f] for f in rule.required)


def select_responses(
    paradigm: str,
    window_events: Sequence[ResponseEvent],
    target_roi: Optional[str] = None,
    cfg: Optional[CompilerConfig] = None,
) -> list[tuple[int, Optional[float]]]:
    """Chosen ``(response_index, time)`` pairs; ``time`` is None for a no-response rule."""
    cfg = cfg or CompilerConfig()
    feats = window_features(window_events, target_roi, cfg)
    rules = RULES[paradigm]
    matching = [r for r in rules if r.matches(feats)]
    if paradigm in MULTI_LINE:
        fired = sorted(
            ((_fire_time(r, feats), r.index) for r in matching if r.required),
        )
        if fired:
            return [(idx, t) for t, idx in fired[: cfg.max_response_lines]]
        fallback = [r for r in matching if not r.required]
        return [(fallback[0].index, None)] if fallback else []
    if not matching:
        return []
    best = max(matching, key=lambda r: (r.specificity, -r.index))
    return [(best.index, _fire_time(best, feats))]


def classify_response(
    paradigm: str,
    window_events: Sequence[ResponseEvent],
    target_roi: Optional[str] = None,
    cfg: Optional[CompilerConfig] = None,
) -> tuple[int, ...]:
    """Response indices for one instruction window (one entry for single-line paradigms)."""
    return tuple(idx for idx, _ in select_responses(paradigm, window_events, target_roi, cfg))


def render_preamble(manifest: SessionManifest) -> str:
    gender = GENDER_WORDS.get(manifest.child_gender, manifest.child_gender)
    return PREAMBLE.format(age=manifest.child_age_months, gender=gender)


def emotion_lines(segments) -> list[ScriptLine]:
    return [
        ScriptLine(seg.start_s, f"Emotional dynamics: {seg.description}", "Emotion", seg.segment_id)
        for seg in segments or ()
        if seg.description
    ]


def compile_script(
    events: Sequence[ResponseEvent],
    manifest: SessionManifest,
    cfg: Optional[CompilerConfig] = None,
    segments=None,
    templates: Optional[TemplateTable] = None,
) -> ScriptDocument:
    """Build the script for one session.

    ``segments`` are described emotion segments; undescribed segments (and
    ``None``) add nothing, so the output then equals the plain behavior script.
    """
    cfg = cfg or CompilerConfig()
    templates = templates or default_templates()
    lines: list[ScriptLine] = []
    for p, ins in manifest.instructions():
        lines.append(ScriptLine(ins.time_s, templates.instruction(p.paradigm, ins.session_code), "Instruction", ins.session_code))
        window_end = min(ins.time_s + cfg.window_for(p.paradigm), p.end_s)
        window = [
            e for e in events
            if e.paradigm == p.paradigm and ins.time_s - 1e-9 <= e.start_s <= window_end + 1e-9
        ]
        for idx, t in select_responses(p.paradigm, window, ins.target_roi, cfg):
            lines.append(ScriptLine(
                window_end if t is None else t,
                templates.response(p.paradigm, idx),
                "Response",
                f"{p.paradigm}:{idx}",
            ))
    lines += emotion_lines(segments)
    order = sorted(range(len(lines)), key=lambda i: (lines[i].timestamp_s, ORIGIN_RANK[lines[i].origin], i))
    return ScriptDocument(manifest.case_id, render_preamble(manifest), tuple(lines[i] for i in order))
