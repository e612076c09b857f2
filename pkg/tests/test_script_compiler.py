import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbu.emotion_dynamics import EmotionSegment
from scbu.errors import TemplateError
from scbu.eval_harness.synth import SynthSpec, synth_dataset
from scbu.response_parser import ResponseEvent, parse_events
from scbu.script_compiler import (
    MULTI_LINE,
    RULES,
    CompilerConfig,
    ScriptDocument,
    TemplateTable,
    classify_response,
    compile_script,
    default_templates,
    format_timestamp,
    idle_responses,
)

from _builders import CHILD, DOCTOR, make_manifest

RN_CALLED = "The doctor called out the child's name."
RN_LOOK_SPEAK = "The child turns toward the doctor and look with saying hello."
RN_NONE = "The child continued to play with the toy."

# hand-copied sentences, one per paradigm, including the original typos
SPOT_CHECKS = {
    ("RN", "instruction", "P1"): "The parent called out the child's name.",
    ("SS", "response", "2"): "The child look at the doctor and smile .",
    ("IG", "response", "2"): "The child keeps his head down and continues to play with his toy.",
    ("RJA", "response", "1"): "The child turns his head backand then looks to the position of the clock.",
    ("IJA", "response", "1"): "The child is attracted to the animation playingand looks at the bird on the left wall.",
    ("SA", "response", "2"): "The child turns to the direction of the parent but remains seating at the table.",
}


def ev(kind, start, end=None, person=CHILD, paradigm="RN", target=None, text=None, precise=None):
    return ResponseEvent(kind, start, start + 1.0 if end is None else end, person, paradigm, target, text, precise)


def rn_manifest():
    return make_manifest([("RN", 0.0, 20.0, [("P2", 2.0, None)])], rois=("doctor", "toy"))


def test_rn_look_and_speak_golden():
    events = [ev("look", 3.0, target="doctor"), ev("speak", 3.4, 4.0, text="hello")]
    doc = compile_script(events, rn_manifest())
    texts = [ln.text for ln in doc.lines]
    assert texts == [RN_CALLED, RN_LOOK_SPEAK]
    assert doc.lines[1].timestamp_s == 3.4
    assert doc.lines[1].ref == "RN:1"


def test_rn_no_events_golden():
    doc = compile_script([], rn_manifest())
    assert [ln.text for ln in doc.lines] == [RN_CALLED, RN_NONE]
    assert doc.lines[1].timestamp_s == 7.0  # window end


def test_empty_inputs_give_preamble_only():
    doc = compile_script([], make_manifest([]))
    assert doc.lines == ()
    assert doc.render() == doc.preamble + "\n"


def test_preamble_wording():
    doc = compile_script([], make_manifest([], gender="female", age=26))
    assert doc.preamble == (
        "The child is a 26-month-old girl. "
        "The following is a time-ordered record of a clinical observation session."
    )


@pytest.mark.parametrize("kinds, expected", [
    ({"look", "speak"}, (1,)),
    ({"look"}, (2,)),
    (set(), (3,)),
])
def test_classify_rn(kinds, expected):
    events = []
    if "look" in kinds:
        events.append(ev("look", 1.0, target="doctor"))
    if "speak" in kinds:
        events.append(ev("speak", 1.2, text="hi"))
    assert classify_response("RN", events) == expected


@pytest.mark.parametrize("kinds, expected", [
    ({"look", "smile"}, (2,)),
    ({"smile"}, (3,)),
    ({"look"}, (5,)),
    (set(), (4,)),
])
def test_classify_ss(kinds, expected):
    events = []
    if "look" in kinds:
        events.append(ev("look", 1.0, target="doctor", paradigm="SS"))
    if "smile" in kinds:
        events.append(ev("smile", 1.5, paradigm="SS"))
    assert classify_response("SS", events) == expected


def test_classify_ija_look_and_point():
    events = [
        ev("look", 1.0, 1.8, paradigm="IJA", target="wall_left"),
        ev("point", 2.0, 2.5, paradigm="IJA", target="wall_left", precise=True),
    ]
    assert classify_response("IJA", events, target_roi="wall_left") == (1, 5)


def test_multi_line_cap_and_order():
    events = [
        ev("look", 1.0, 4.0, paradigm="IG", target="flower"),
        ev("point", 1.5, 2.0, paradigm="IG", target="flower", precise=True),
        ev("look", 0.5, 1.0, paradigm="IG", target="doctor"),
    ]
    # look_doctor at 0.5, look_target and sustained at 1.0, precise point at 1.5
    assert classify_response("IG", events, target_roi="flower") == (5, 1, 6)
    cfg = CompilerConfig(max_response_lines=1)
    assert classify_response("IG", events, target_roi="flower", cfg=cfg) == (5,)


def test_sa_chase_beats_departure_look():
    events = [ev("look", 1.0, paradigm="SA", target="door"), ev("chase", 2.0, 4.0, paradigm="SA", target="door")]
    assert classify_response("SA", events) == (1,)
    assert classify_response("SA", events[:1]) == (2,)
    assert classify_response("SA", []) == (3,)


def test_rja_other_look():
    assert classify_response("RJA", [ev("look", 1.0, paradigm="RJA", target="flower")], target_roi="clock") == (2,)
    assert classify_response("RJA", [ev("look", 1.0, paradigm="RJA", target="clock")], target_roi="clock") == (1,)


def test_idle_roi_ignored():
    assert classify_response("RJA", [ev("look", 1.0, paradigm="RJA", target="toy")], target_roi="clock") == (4,)


def test_events_outside_window_are_ignored():
    m = make_manifest([("RN", 0.0, 20.0, [("P2", 2.0, None)])])
    late = [ev("look", 7.5, target="doctor"), ev("speak", 7.6, text="hi")]
    doc = compile_script(late, m)
    assert doc.lines[1].text == RN_NONE


def test_sa_window_is_longer():
    m = make_manifest([("SA", 0.0, 40.0, [("P15", 2.0, None)])])
    doc = compile_script([ev("chase", 15.0, 20.0, paradigm="SA", target="door")], m)
    assert doc.lines[1].ref == "SA:1"


def test_spot_check_templates():
    t = default_templates()
    for (paradigm, kind, index), text in SPOT_CHECKS.items():
        got = t.instruction(paradigm, index) if kind == "instruction" else t.response(paradigm, int(index))
        assert got == text


def test_every_rule_has_a_template():
    t = default_templates()
    for paradigm, rules in RULES.items():
        for r in rules:
            assert t.response(paradigm, r.index)


def test_missing_template_raises(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"schema_version": "1.0", "templates": [
        {"paradigm": "RN", "kind": "instruction", "index": "P2", "text": "x"},
    ]}), encoding="utf-8")
    table = TemplateTable.load(path)
    with pytest.raises(TemplateError):
        compile_script([], rn_manifest(), templates=table)


def test_idle_responses_are_fallback_sentences():
    idle = idle_responses()
    assert RN_NONE in idle
    assert len(idle) == len(set(idle))
    assert RN_LOOK_SPEAK not in idle


@pytest.mark.parametrize("t, text", [(0.0, "[00:00]"), (59.999, "[00:59]"), (61.2, "[01:01]"), (3600.0, "[60:00]")])
def test_timestamp_format(t, text):
    assert format_timestamp(t) == text


def test_emotion_lines_and_without_emotion():
    seg = EmotionSegment("seg-000", 2.5, 3.5, (), "The child frowns briefly.")
    bare = compile_script([], rn_manifest())
    doc = compile_script([], rn_manifest(), segments=[seg])
    emo = [ln for ln in doc.lines if ln.origin == "Emotion"]
    assert [ln.text for ln in emo] == ["Emotional dynamics: The child frowns briefly."]
    assert emo[0].timestamp_s == 2.5
    assert doc.without_emotion() == bare
    undescribed = EmotionSegment("seg-000", 2.5, 3.5, (), None)
    assert compile_script([], rn_manifest(), segments=[undescribed]) == bare


def test_synthetic_scripts_invariants():
    table = default_templates()
    response_texts = table.responses()
    for case in synth_dataset(SynthSpec(2, 2, seed=21)):
        events = parse_events(case.log, case.manifest)
        doc = compile_script(events, case.manifest)
        again = compile_script(events, case.manifest)
        assert doc.render() == again.render()
        stamps = [ln.timestamp_s for ln in doc.lines]
        assert stamps == sorted(stamps)
        n_instr = sum(len(p.instructions) for p in case.manifest.paradigms)
        assert sum(ln.origin == "Instruction" for ln in doc.lines) == n_instr
        for ln in doc.lines:
            if ln.origin == "Response":
                assert ln.text in response_texts
        assert ScriptDocument.from_dict(json.loads(json.dumps(doc.to_dict()))) == doc


_kinds = st.sampled_from(["look", "point", "smile", "speak", "chase"])
_targets = st.sampled_from(["flower", "clock", "doctor", "parent", "door", "toy", None])


@settings(max_examples=200, deadline=None)
@given(
    paradigm=st.sampled_from(sorted(RULES)),
    raw=st.lists(st.tuples(_kinds, st.floats(0, 5), _targets, st.booleans()), max_size=6),
)
def test_classification_is_deterministic_and_order_free(paradigm, raw):
    events = [
        ev(k, t, person=CHILD if k != "speak" or flag else DOCTOR, paradigm=paradigm,
           target=tgt, precise=flag if k == "point" else None)
        for k, t, tgt, flag in raw
    ]
    a = classify_response(paradigm, events, target_roi="flower")
    b = classify_response(paradigm, list(reversed(events)), target_roi="flower")
    assert a == b
    assert a
    if paradigm not in MULTI_LINE:
        assert len(a) == 1
    assert len(set(a)) == len(a) <= CompilerConfig().max_response_lines
