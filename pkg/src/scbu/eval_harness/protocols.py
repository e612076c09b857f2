"""End-to-end evaluation protocols over a labelled dataset.

All protocols are zero-training: an LLM (or a panel of them) judges every
test case once. ``loocv_run`` evaluates every case; ``fewshot_run`` holds out
a stratified 10 ASD + 10 TD exemplar pool and tests on the rest;
``threshold_sweep`` repeats the evaluation for several emotion thresholds.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..behavior_log import child_series, child_valence_series
from ..emotion_dynamics import (
    Describer,
    DynamicPoint,
    EmotionConfig,
    describe_segments,
    dynamics_stats,
    find_dynamic_points,
    merge_segments,
)
from ..ensemble import AgentsConfig, run_agents, vote
from ..errors import InsufficientClass, NoQuorum, ScbuError, TooShortError
from ..llm_gateway import Backend, detect
from ..prompt_builder import PromptBundle, PromptProfile, build_prompt
from ..response_parser import ParserConfig, measure_responses, parse_events
from ..script_compiler import CompilerConfig, ScriptDocument, compile_script
from .dataset import Case
from .metrics import ConfusionCounts, compute_metrics, fmt_pct
from .stats import GroupStats, group_ttest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    parser: ParserConfig = field(default_factory=ParserConfig)
    compiler: CompilerConfig = field(default_factory=CompilerConfig)
    emotion: EmotionConfig = field(default_factory=EmotionConfig)
    profile: PromptProfile = field(default_factory=PromptProfile)
    use_emotion: bool = False
    describer: Optional[Describer] = None
    context_budget_tokens: Optional[int] = None


@dataclass(frozen=True)
class EnsembleConfig:
    """How verdicts are produced: one backend, a vote, or an agent discussion."""

    mode: str
    backends: tuple
    decision_maker: Optional[Backend] = None
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    tie_break: str = "ASD"

    def __post_init__(self):
        if self.mode not in ("none", "vote", "agents"):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        if not self.backends:
            raise ValueError("at least one backend is required")
        if self.mode == "none" and len(self.backends) != 1:
            raise ValueError("mode 'none' takes exactly one backend")
        if self.mode == "agents" and self.decision_maker is None:
            raise ValueError("mode 'agents' needs a decision maker")

    @classmethod
    def single(cls, backend: Backend) -> "EnsembleConfig":
        return cls("none", (backend,))


@dataclass(frozen=True)
class CaseScript:
    script: ScriptDocument
    n_points: int


def media_ref(case: Case) -> str:
    return f"media://{case.case_id}"


def case_points(case: Case, cfg: EmotionConfig) -> list[DynamicPoint]:
    try:
        return find_dynamic_points(child_valence_series(case.log), cfg)
    except TooShortError:
        return []


def build_case_script(case: Case, pipeline: PipelineConfig) -> CaseScript:
    events = parse_events(case.log, case.manifest, pipeline.parser)
    points = case_points(case, pipeline.emotion)
    segments = None
    if pipeline.use_emotion and pipeline.describer is not None:
        segments = merge_segments(points, pipeline.emotion, case.log.duration_s)
        segments = describe_segments(segments, media_ref(case), pipeline.describer, case.case_id)
    return CaseScript(compile_script(events, case.manifest, pipeline.compiler, segments), len(points))


@dataclass(frozen=True)
class Prediction:
    label: str
    rationale: str
    detail: dict = field(default_factory=dict)


def predict(bundle: PromptBundle, case_id: str, ens: EnsembleConfig, audit_dir=None) -> Prediction:
    if ens.mode == "none":
        r = detect(bundle, ens.backends[0], case_id, audit_dir)
        return Prediction(r.label, r.rationale, {"backend": r.backend, "prompt_hash": r.prompt_hash})
    if ens.mode == "vote":
        results = [detect(bundle, b, case_id, audit_dir) for b in ens.backends]
        try:
            label, tally = vote(results, ens.tie_break)
        except NoQuorum:
            return Prediction("Abstain", "every backend abstained", {"votes": {r.backend: r.label for r in results}})
        return Prediction(label, str(tally), {"votes": {r.backend: r.label for r in results}})
    transcript = run_agents(bundle, ens.backends, ens.decision_maker, ens.agents, case_id)
    if audit_dir is not None:
        path = Path(audit_dir) / f"{case_id}__transcript.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(transcript.to_json(), encoding="utf-8")
    return Prediction(transcript.label, transcript.summary, {"rounds": len(transcript.rounds), "decided_by": transcript.decided_by})


@dataclass(frozen=True)
class CaseRow:
    case_id: str
    truth: str
    predicted: str
    rationale: str


@dataclass(frozen=True)
class EvalReport:
    protocol: dict
    counts: ConfusionCounts
    rows: tuple[CaseRow, ...]
    failed: tuple[tuple[str, str], ...] = ()

    @property
    def n_abstain(self) -> int:
        return sum(r.predicted == "Abstain" for r in self.rows)

    def metrics(self) -> dict:
        return compute_metrics(self.counts).as_percentages()

    def is_consistent(self) -> bool:
        recount = ConfusionCounts.from_pairs((r.truth, r.predicted) for r in self.rows)
        return recount == self.counts

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn, "fn": self.counts.fn},
            "metrics": self.metrics() if self.counts.total else None,
            "n_abstain": self.n_abstain,
            "rows": [r.__dict__ for r in self.rows],
            "failed": [{"case_id": c, "error": e} for c, e in self.failed],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    def to_text(self) -> str:
        c = self.counts
        out = [f"protocol: {json.dumps(self.protocol, sort_keys=True)}",
               f"cases: {c.total} (TP {c.tp}, FN {c.fn}, TN {c.tn}, FP {c.fp}; {self.n_abstain} abstained)"]
        if c.total:
            m = self.metrics()
            out.append("ACC {} | F1 {} | SN {} | SP {}".format(*(fmt_pct(m[k]) for k in ("acc", "f1", "sn", "sp"))))
        for cid, err in self.failed:
            out.append(f"FAILED {cid}: {err}")
        for r in self.rows:
            mark = "ok " if r.truth == r.predicted else "ERR"
            out.append(f"{mark} {r.case_id}  truth={r.truth} predicted={r.predicted}")
        return "\n".join(out) + "\n"


def _report(protocol: dict, rows: list[CaseRow], failed: list[tuple[str, str]]) -> EvalReport:
    rows = sorted(rows, key=lambda r: r.case_id)
    for cid, err in failed:
        logger.warning("case %s failed and is excluded from the counts: %s", cid, err)
    counts = ConfusionCounts.from_pairs((r.truth, r.predicted) for r in rows)
    return EvalReport(protocol, counts, tuple(rows), tuple(sorted(failed)))


def evaluate_cases(
    cases: Sequence[Case],
    pipeline: PipelineConfig,
    ens: EnsembleConfig,
    protocol: dict,
    exemplars: Sequence[tuple[ScriptDocument, str]] = (),
    max_workers: int = 4,
    audit_dir=None,
) -> EvalReport:
    """Judge every case once. Ctrl-C stops scheduling and returns a partial report."""

    def one(case: Case) -> CaseRow:
        built = build_case_script(case, pipeline)
        bundle = build_prompt(built.script, pipeline.profile, exemplars, context_budget_tokens=pipeline.context_budget_tokens)
        pred = predict(bundle, case.case_id, ens, audit_dir)
        return CaseRow(case.case_id, case.label, pred.label, pred.rationale)

    rows: list[CaseRow] = []
    failed: list[tuple[str, str]] = []
    pool = ThreadPoolExecutor(max_workers=max(1, max_workers))
    futures = {pool.submit(one, c): c.case_id for c in cases}
    try:
        for fut in as_completed(futures):
            try:
                rows.append(fut.result())
            except ScbuError as exc:
                failed.append((futures[fut], f"{type(exc).__name__}: {exc}"))
    except KeyboardInterrupt:
        pool.shutdown(wait=True, cancel_futures=True)
        done = {r.case_id for r in rows}
        logger.warning("interrupted: returning a partial report over %d of %d cases", len(done), len(cases))
        return _report(dict(protocol, partial=True), rows, failed)
    pool.shutdown(wait=True)
    return _report(protocol, rows, failed)


def _ensemble_descriptor(ens: EnsembleConfig) -> dict:
    d = {"mode": ens.mode, "backends": [b.name for b in ens.backends]}
    if ens.mode == "agents":
        d["decision_maker"] = ens.decision_maker.name
        d["max_rounds"] = ens.agents.max_rounds
    return d


def loocv_run(cases: Sequence[Case], pipeline: PipelineConfig, ens: EnsembleConfig, max_workers: int = 4, audit_dir=None) -> EvalReport:
    protocol = {
        "name": "loocv",
        "shots": 0,
        "n_cases": len(cases),
        "emotion": pipeline.use_emotion,
        "alpha": pipeline.emotion.alpha,
        "ensemble": _ensemble_descriptor(ens),
    }
    return evaluate_cases(cases, pipeline, ens, protocol, max_workers=max_workers, audit_dir=audit_dir)


def fewshot_split(cases: Sequence[Case], seed: int, per_class: int = 10) -> tuple[list[Case], list[Case]]:
    """Stratified split: ``per_class`` ASD and ``per_class`` TD cases for training, the rest for testing."""
    rng = np.random.default_rng(seed)
    train_ids = set()
    train = []
    for label in ("ASD", "TD"):
        pool = [c for c in cases if c.label == label]
        if len(pool) < per_class:
            raise InsufficientClass(f"{label}: {len(pool)} cases, need {per_class}")
        for k in rng.permutation(len(pool))[:per_class]:
            train.append(pool[k])
            train_ids.add(pool[k].case_id)
    test = [c for c in cases if c.case_id not in train_ids]
    return train, test


def fewshot_run(
    cases: Sequence[Case],
    pipeline: PipelineConfig,
    ens: EnsembleConfig,
    n_shots: int = 20,
    seed: int = 0,
    per_class: int = 10,
    max_workers: int = 4,
    audit_dir=None,
) -> EvalReport:
    if n_shots % 2 or n_shots > 2 * per_class:
        raise ValueError(f"n_shots must be even and at most {2 * per_class}")
    train, test = fewshot_split(cases, seed, per_class)
    exemplars = []
    for label in ("ASD", "TD"):
        pool = [c for c in train if c.label == label][: n_shots // 2]
        exemplars += [(build_case_script(c, pipeline).script, label) for c in pool]
    protocol = {
        "name": "fewshot",
        "shots": n_shots,
        "seed": seed,
        "n_train": len(train),
        "n_test": len(test),
        "emotion": pipeline.use_emotion,
        "alpha": pipeline.emotion.alpha,
        "ensemble": _ensemble_descriptor(ens),
    }
    return evaluate_cases(test, pipeline, ens, protocol, exemplars, max_workers, audit_dir)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    report: EvalReport
    n_points: int


def threshold_sweep(cases: Sequence[Case], alphas: Sequence[float], pipeline: PipelineConfig, ens: EnsembleConfig, max_workers: int = 4) -> list[SweepRow]:
    rows = []
    for a in alphas:
        p = replace(pipeline, emotion=replace(pipeline.emotion, alpha=a))
        report = loocv_run(cases, p, ens, max_workers)
        n_points = sum(len(case_points(c, p.emotion)) for c in cases)
        rows.append(SweepRow(a, report, n_points))
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> list[dict]:
    table = []
    for r in rows:
        m = r.report.metrics() if r.report.counts.total else {"acc": None, "f1": None, "sn": None, "sp": None}
        table.append({"alpha": r.alpha, "n_points": r.n_points, **m})
    return table


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    table = sweep_table(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "n_points", "acc", "f1", "sn", "sp"])
        w.writeheader()
        w.writerows(table)


# --------------------------------------------------------------------------
# group statistics
# --------------------------------------------------------------------------

STAT_VARIABLES = (
    "look_latency", "point_latency", "chase_latency",
    "look_duration", "point_duration", "chase_duration",
    "valence_max", "valence_min", "arousal_max", "arousal_min",
    "dynamic_frequency", "dynamic_latency",
)


def case_measures(case: Case, parser: Optional[ParserConfig] = None, emotion: Optional[EmotionConfig] = None) -> dict[str, float]:
    """Per-case summary values; variables that cannot be measured are left out."""
    events = parse_events(case.log, case.manifest, parser)
    out: dict[str, float] = {}
    measures = measure_responses(events, case.manifest)
    for kind in ("look", "point", "chase"):
        ms = [m for m in measures if m.event_kind == kind]
        if ms:
            out[f"{kind}_latency"] = float(np.mean([m.latency_s for m in ms]))
            out[f"{kind}_duration"] = float(np.mean([m.duration_s for m in ms]))
    for attr in ("valence", "arousal"):
        values = [v for _, v in child_series(case.log, attr)]
        if values:
            out[f"{attr}_max"] = max(values)
            out[f"{attr}_min"] = min(values)
    points = case_points(case, emotion or EmotionConfig())
    freq, latency = dynamics_stats(points, [i.time_s for _, i in case.manifest.instructions()])
    out["dynamic_frequency"] = float(freq)
    if latency is not None:
        out["dynamic_latency"] = latency
    return out


def group_statistics(cases: Sequence[Case], parser=None, emotion=None, equal_var: bool = False) -> list[GroupStats]:
    per_case = [(c.label, case_measures(c, parser, emotion)) for c in cases]
    stats = []
    for var in STAT_VARIABLES:
        td = [m[var] for label, m in per_case if label == "TD" and var in m]
        asd = [m[var] for label, m in per_case if label == "ASD" and var in m]
        if len(td) >= 2 and len(asd) >= 2:
            stats.append(group_ttest(td, asd, var, equal_var))
    return stats
