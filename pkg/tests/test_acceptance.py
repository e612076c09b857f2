"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runtime limits are checked inside each test; fixtures that only build shared
input data are not timed.
"""
import json
import random
import time
from contextlib import contextmanager

import httpx
import mpmath
import numpy as np
import pytest

from scbu.cli import main
from scbu.emotion_dynamics import EmotionConfig, StubDescriber, find_dynamic_points, merge_segments
from scbu.ensemble import AgentsConfig, run_agents, vote
from scbu.errors import NoQuorum
from scbu.eval_harness import (
    ConfusionCounts,
    EnsembleConfig,
    PipelineConfig,
    SynthSpec,
    build_case_script,
    compute_metrics,
    fewshot_split,
    group_ttest,
    loocv_run,
    metrics,
    synth_dataset,
)
from scbu.llm_gateway import BackendSpec, FixtureBackend, HttpBackend, MockBackend, RecordingBackend, detect
from scbu.prompt_builder import SCRIPT_HEADER, PromptTemplates, build_prompt
from scbu.response_parser import ResponseEvent, parse_events
from scbu.script_compiler import compile_script

from _builders import CHILD, make_manifest

# published figures for the full 95-child set (71 ASD, 24 TD), best configuration
PUBLISHED = {"acc": 92.63, "f1": 95.24, "sn": 98.59, "sp": 75.00}
N_ASD, N_TD = 71, 24

# Welch fixture, derived by hand: means 3 and 6, variances 2.5 and 10
WELCH_A = [1, 2, 3, 4, 5]
WELCH_B = [2, 4, 6, 8, 10]
WELCH_T = -1.8973665961
WELCH_DF = 5.882352941
# frozen from 40-digit quadrature of the t density
WELCH_P = 0.1075311949306272


@contextmanager
def criterion(capsys, number, title, limit_s=None):
    start = time.perf_counter()
    outcome = "FAIL"
    detail = ""
    try:
        yield
        elapsed = time.perf_counter() - start
        detail = f"{elapsed:.2f} s"
        if limit_s is not None:
            detail += f" (limit {limit_s} s)"
            assert elapsed < limit_s, f"criterion {number} took {elapsed:.2f} s, limit {limit_s} s"
        outcome = "PASS"
    finally:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:>2} {outcome}: {title} [{detail or 'error'}]")


@pytest.fixture(scope="module")
def full_set():
    return synth_dataset(SynthSpec(N_ASD, N_TD, seed=0))


def _pct_round(num, den):
    return round(100 * num / den, 2) if den else None


def test_01_metric_arithmetic(capsys):
    with criterion(capsys, 1, "metric arithmetic from brute-forced confusion counts", 1.0):
        matches = []
        for tp in range(N_ASD + 1):
            for tn in range(N_TD + 1):
                fn, fp = N_ASD - tp, N_TD - tn
                got = {
                    "acc": _pct_round(tp + tn, N_ASD + N_TD),
                    "f1": _pct_round(2 * tp, 2 * tp + fp + fn),
                    "sn": _pct_round(tp, N_ASD),
                    "sp": _pct_round(tn, N_TD),
                }
                if got == PUBLISHED:
                    matches.append((tp, fn, tn, fp))
        assert matches == [(70, 1, 18, 6)]
        acc, f1, sn, sp = metrics(ConfusionCounts(tp=70, fn=1, tn=18, fp=6))
        for got, want in zip((acc, f1, sn, sp), (92.63, 95.24, 98.59, 75.00)):
            assert abs(got - want) <= 0.01


def _naive_points(values, times, alpha):
    return [(times[n], values[n] - values[n - 1]) for n in range(1, len(values))
            if abs(values[n] - values[n - 1]) > alpha]


def _naive_segments(points, h, duration):
    spans = []
    for t, _ in sorted(points):
        a, b = t - h, t + h
        if spans and a <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], b)
        else:
            spans.append([a, b])
    return [(max(a, 0.0), min(b, duration), [p for p in points if a <= p[0] <= b]) for a, b in spans]


def test_02_dynamic_points_match_naive_reference(capsys):
    rng = np.random.default_rng(2024)
    series_set = []
    for _ in range(1000):
        n = int(rng.integers(2, 501))
        fps = float(rng.choice([10.0, 25.0, 30.0]))
        values = rng.uniform(-1, 1, n) * rng.uniform(0.05, 1)
        series_set.append(([k / fps for k in range(n)], values.tolist(), float(rng.uniform(0.02, 0.6))))
    with criterion(capsys, 2, "emotion dynamic points equal the naive reference on 1000 series", 5.0):
        for times, values, alpha in series_set:
            cfg = EmotionConfig(alpha=alpha)
            points = find_dynamic_points(list(zip(times, values)), cfg)
            ref = _naive_points(values, times, alpha)
            assert [(p.time_s, p.derivative) for p in points] == ref
            segs = merge_segments(points, cfg, times[-1])
            want = _naive_segments(ref, cfg.half_window_s, times[-1])
            assert [(s.start_s, s.end_s, [(p.time_s, p.derivative) for p in s.source_points]) for s in segs] == want


def test_03_threshold_monotonicity(capsys):
    rng = np.random.default_rng(7)
    alphas = [0.05, 0.1, 0.175, 0.2, 0.3]
    series_set = [np.clip(np.cumsum(rng.normal(0, 0.15, int(rng.integers(2, 400)))), -1, 1) for _ in range(100)]
    with criterion(capsys, 3, "dynamic point counts never grow with the threshold", 2.0):
        for values in series_set:
            s = [(k / 10.0, float(v)) for k, v in enumerate(values)]
            counts = [len(find_dynamic_points(s, EmotionConfig(alpha=a))) for a in alphas]
            assert counts == sorted(counts, reverse=True)


def test_04_script_golden_fidelity(capsys):
    with criterion(capsys, 4, "name-calling fixture compiles to the exact template sentences", 1.0):
        m = make_manifest([("RN", 0.0, 20.0, [("P2", 2.0, None)])], rois=("doctor", "toy"))
        events = [
            ResponseEvent("look", 3.0, 4.0, CHILD, "RN", "doctor"),
            ResponseEvent("speak", 3.4, 4.0, CHILD, "RN", text="hello"),
        ]
        doc = compile_script(events, m)
        got = [ln.text.encode("utf-8") for ln in doc.lines]
        assert got == [
            b"The doctor called out the child's name.",
            b"The child turns toward the doctor and look with saying hello.",
        ]
        quiet = compile_script([], m)
        assert quiet.lines[1].ref == "RN:3"
        assert quiet.lines[1].text == "The child continued to play with the toy."


def test_05_without_emotion_equivalence(capsys, full_set):
    with criterion(capsys, 5, f"describer-off scripts equal compiler-only scripts on {len(full_set)} cases"):
        no_describer = PipelineConfig(use_emotion=True, describer=None)
        stub = PipelineConfig(use_emotion=True, describer=StubDescriber())
        n_emotion_lines = 0
        for case in full_set:
            direct = compile_script(parse_events(case.log, case.manifest), case.manifest).render().encode("utf-8")
            assert build_case_script(case, no_describer).script.render().encode("utf-8") == direct
            assert build_case_script(case, PipelineConfig()).script.render().encode("utf-8") == direct
            with_emo = build_case_script(case, stub).script
            n_emotion_lines += sum(ln.origin == "Emotion" for ln in with_emo.lines)
            assert with_emo.without_emotion().render().encode("utf-8") == direct
        assert n_emotion_lines > 0


def _mode(labels):
    return max(("TD", "ASD"), key=lambda lab: (labels.count(lab), lab == "ASD"))


def _scripted(name, *answers):
    return MockBackend(BackendSpec(name, options={"responses": list(answers)}))


def test_06_ensemble_properties(capsys, tmp_path):
    rng = random.Random(6)
    vectors = [[rng.choice(("ASD", "TD", "Abstain")) for _ in range(rng.randint(1, 9))] for _ in range(10_000)]
    m = make_manifest([("RN", 0.0, 20.0, [("P2", 2.0, None)])], rois=("doctor", "toy"))
    bundle = build_prompt(compile_script([], m))
    with criterion(capsys, 6, "vote and agent discussion properties", 10.0):
        for labels in vectors:
            if "ASD" not in labels and "TD" not in labels:
                with pytest.raises(NoQuorum):
                    vote(labels)
                continue
            shuffled = rng.sample(labels, len(labels))
            assert vote(labels)[0] == vote(shuffled)[0] == _mode([x for x in labels if x != "Abstain"])

        a, b, dm = _scripted("a", "Judgment: ASD"), _scripted("b", "Judgment: ASD"), _scripted("dm", "Judgment: ASD")
        t = run_agents(bundle, [a, b], dm, AgentsConfig(max_rounds=3))
        assert (len(t.rounds), a.calls, b.calls, dm.calls, t.decided_by) == (1, 1, 1, 1, "Consensus")

        a, b, dm = _scripted("a", "Judgment: ASD"), _scripted("b", "Judgment: TD"), _scripted("dm", "Judgment: TD")
        t = run_agents(bundle, [a, b], dm, AgentsConfig(max_rounds=3))
        assert (len(t.rounds), a.calls, b.calls, dm.calls, t.decided_by) == (3, 3, 3, 1, "DecisionMaker")

        live = [RecordingBackend(_scripted("a", "A.\nJudgment: ASD"), tmp_path),
                RecordingBackend(_scripted("b", "B1.\nJudgment: TD", "B2.\nJudgment: ASD"), tmp_path)]
        first = run_agents(bundle, live, RecordingBackend(_scripted("dm", "S.\nJudgment: ASD"), tmp_path),
                           AgentsConfig(max_rounds=3, parallel=False), case_id="c1")
        replay = [FixtureBackend(BackendSpec(n, kind="fixture", options={"directory": str(tmp_path)})) for n in ("a", "b", "dm")]
        again = run_agents(bundle, replay[:2], replay[2], AgentsConfig(max_rounds=3), case_id="c1")
        assert len(first.rounds) == 2
        assert again.to_json().encode("utf-8") == first.to_json().encode("utf-8")


def test_07_protocol_integrity(capsys, full_set):
    with criterion(capsys, 7, "LOOCV coverage and order invariance; stratified few-shot split", 10.0):
        cases = synth_dataset(SynthSpec(15, 15, seed=11))
        ens = EnsembleConfig.single(MockBackend(BackendSpec("mock")))
        report = loocv_run(cases, PipelineConfig(), ens)
        ids = [r.case_id for r in report.rows]
        assert sorted(ids) == sorted(c.case_id for c in cases) and len(set(ids)) == 30
        assert not report.failed
        assert loocv_run(list(reversed(cases)), PipelineConfig(), ens, max_workers=1).to_json() == report.to_json()

        train, test = fewshot_split(full_set, seed=0)
        labels = lambda cs: (sum(c.label == "ASD" for c in cs), sum(c.label == "TD" for c in cs))  # noqa: E731
        assert labels(train) == (10, 10)
        assert labels(test) == (61, 14)


def test_08_welch_t_test(capsys):
    with criterion(capsys, 8, "Welch t-test against the hand-computed fixture"):
        s = group_ttest(WELCH_A, WELCH_B)
        assert abs(s.t_value - WELCH_T) < 1e-6
        assert abs(s.df - WELCH_DF) < 1e-6
        assert abs(s.p_value - WELCH_P) < 1e-6
        # second, independent route for p: direct quadrature of the density
        mpmath.mp.dps = 30
        df = mpmath.mpf(s.df)
        c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
        p = 2 * mpmath.quad(lambda u: c * (1 + u * u / df) ** (-(df + 1) / 2), [abs(s.t_value), mpmath.inf])
        assert abs(s.p_value - float(p)) < 1e-6
        same = group_ttest(WELCH_A, WELCH_A)
        assert (same.t_value, same.p_value) == (0.0, 1.0)


def test_09_end_to_end_offline_run(capsys, tmp_path):
    with criterion(capsys, 9, "synth then LOOCV eval on 20 cases with the mock backend", 30.0):
        data, out = tmp_path / "data", tmp_path / "out"
        assert main(["synth", "--n-asd", "10", "--n-td", "10", "--seed", "1", "--out", str(data)]) == 0
        assert main(["eval", "--dataset", str(data), "--protocol", "loocv", "--backend", "mock",
                     "--out", str(out)]) == 0
        capsys.readouterr()
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert len(report["rows"]) == 20 and not report["failed"]
        recount = ConfusionCounts.from_pairs((r["truth"], r["predicted"]) for r in report["rows"])
        assert recount == ConfusionCounts(**report["counts"])
        recomputed = compute_metrics(recount).as_percentages()
        assert recomputed == report["metrics"]
        printed = (out / "report.txt").read_text(encoding="utf-8")
        assert "ACC {:.2f} | F1 {:.2f} | SN {:.2f} | SP {:.2f}".format(
            *(recomputed[k] for k in ("acc", "f1", "sn", "sp"))) in printed


def test_10_prompt_contract(capsys):
    with criterion(capsys, 10, "four prompt parts in order; golden HTTP request"):
        t = PromptTemplates.load()
        m = make_manifest([("RN", 0.0, 20.0, [("P2", 2.0, None)])], rois=("doctor", "toy"))
        bundle = build_prompt(compile_script([], m))
        text = bundle.render()
        parts = [t.system, SCRIPT_HEADER, t.domain_knowledge, t.human_experience, t.format]
        positions = [text.find(p) for p in parts]
        assert -1 not in positions and positions == sorted(positions)

        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"choices": [{"message": {"content": "Judgment: TD"}}]})

        spec = BackendSpec("remote", kind="http", endpoint="http://llm.local/v1/chat/completions")
        backend = HttpBackend(spec, client=httpx.Client(transport=httpx.MockTransport(handler)))
        assert detect(bundle, backend, "c").label == "TD"
        assert (seen["temperature"], seen["max_tokens"]) == (0.7, 1000)
        assert seen["messages"] == bundle.messages()
