"""Fusing verdicts from several backends.

``vote`` is plain majority voting over non-abstaining verdicts.
``run_agents`` runs the discussion protocol: every round each active agent
re-reads the script together with the previous round's verdicts and
arguments; the loop stops on unanimous agreement or after ``max_rounds``, and
a decision-maker backend summarizes the last round.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import BackendError, NoQuorum, TieError, UnparseableVerdict
from .llm_gateway import Backend, complete_with_retries
from .prompt_builder import PromptBundle, parse_verdict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tally:
    asd: int
    td: int
    abstain: int
    tied: bool = False

    def __str__(self):
        return f"ASD {self.asd} - TD {self.td}" + (f" ({self.abstain} abstained)" if self.abstain else "")


def vote(results: Sequence, tie_break: Optional[str] = "ASD") -> tuple[str, Tally]:
    """Majority label among non-abstaining results.

    Items may be :class:`DetectionResult` objects or bare label strings. Ties
    go to ``tie_break``; with ``tie_break=None`` a tie raises :class:`TieError`.
    """
    labels = [r if isinstance(r, str) else r.label for r in results]
    asd = labels.count("ASD")
    td = labels.count("TD")
    tally = Tally(asd, td, len(labels) - asd - td, tied=asd == td)
    if asd + td == 0:
        raise NoQuorum("every verdict abstained")
    if asd > td:
        return "ASD", tally
    if td > asd:
        return "TD", tally
    if tie_break is None:
        raise TieError(f"tied vote: {tally}")
    logger.info("tied vote (%s), applying tie-break %s", tally, tie_break)
    return tie_break, tally


@dataclass(frozen=True)
class AgentsConfig:
    max_rounds: int = 3
    rationale_chars: int = 600
    full_history_to_decider: bool = False
    tie_break: str = "ASD"
    parallel: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "AgentsConfig":
        unknown = set(d) - {"max_rounds", "rationale_chars", "full_history_to_decider", "tie_break", "parallel"}
        if unknown:
            raise ValueError(f"unknown agents config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AgentState:
    backend: str
    verdict: str = "Abstain"
    rationale: str = ""
    round_index: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class AgentMessage:
    agent: str
    verdict: str
    rationale: str
    raw: str
    error: Optional[str] = None


@dataclass(frozen=True)
class DiscussionRound:
    index: int
    messages: tuple[AgentMessage, ...]

    def verdicts(self) -> dict[str, str]:
        return {m.agent: m.verdict for m in self.messages if m.error is None}


@dataclass(frozen=True)
class DiscussionTranscript:
    case_id: str
    rounds: tuple[DiscussionRound, ...]
    label: str
    summary: str
    decided_by: str
    decider_raw: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "rounds": [
                {"index": r.index, "messages": [m.__dict__ for m in r.messages]} for r in self.rounds
            ],
            "final": {
                "label": self.label,
                "summary": self.summary,
                "decided_by": self.decided_by,
                "decider_raw": self.decider_raw,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DiscussionTranscript":
        rounds = tuple(
            DiscussionRound(r["index"], tuple(AgentMessage(**m) for m in r["messages"])) for r in d["rounds"]
        )
        f = d["final"]
        return cls(d["case_id"], rounds, f["label"], f["summary"], f["decided_by"], f.get("decider_raw"))

    def pretty(self) -> str:
        out = [f"Case {self.case_id}"]
        for r in self.rounds:
            out.append(f"-- round {r.index} --")
            for m in r.messages:
                if m.error:
                    out.append(f"  [{m.agent}] ERROR: {m.error}")
                else:
                    out.append(f"  [{m.agent}] {m.verdict}: {m.rationale}")
        out.append(f"== final: {self.label} (decided by {self.decided_by})")
        if self.summary:
            out.append(f"   {self.summary}")
        return "\n".join(out) + "\n"


def _clip(text: str, n: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= n else text[: n - 3] + "..."


def _discussion_block(round_: DiscussionRound, n_chars: int) -> str:
    lines = []
    for m in round_.messages:
        if m.error is None:
            lines.append(f"[{m.agent}]\nverdict: {m.verdict}\nrationale: {_clip(m.rationale, n_chars)}")
    return "\n\n".join(lines)


def agent_messages(bundle: PromptBundle, agent: AgentState, prev: Optional[DiscussionRound], cfg: AgentsConfig) -> list[dict]:
    if prev is None:
        return bundle.messages()
    own = ", ".join(f"round {i}: {v}" for i, v in agent.history) or "none"
    user = (
        bundle.user_text()
        + "\n### Discussion\n"
        + f"You are agent {agent.backend}. Your verdicts so far: {own}.\n"
        + f"Verdicts and arguments from round {prev.index}:\n\n"
        + _discussion_block(prev, cfg.rationale_chars)
        + "\n\nRe-analyze the behavior script in light of this discussion. If you disagree with "
        "another agent, explain why and try to convince them; change your verdict only if their "
        "arguments are convincing. End with the required Judgment line.\n"
    )
    return [{"role": "system", "content": bundle.system_text}, {"role": "user", "content": user}]


def decider_messages(bundle: PromptBundle, rounds: Sequence[DiscussionRound], cfg: AgentsConfig) -> list[dict]:
    shown = rounds if cfg.full_history_to_decider else rounds[-1:]
    blocks = [f"Round {r.index}:\n\n{_discussion_block(r, cfg.rationale_chars)}" for r in shown]
    user = (
        bundle.user_text()
        + "\n### Panel results\n"
        + "Several experts analyzed this script. Their detection results are below.\n\n"
        + "\n\n".join(blocks)
        + "\n\nAs the decision maker, summarize the experts' results and reasoning and give the final "
        "decision. End with the required Judgment line.\n"
    )
    return [{"role": "system", "content": bundle.system_text}, {"role": "user", "content": user}]


def _ask(backend: Backend, messages, case_id) -> AgentMessage:
    try:
        raw = complete_with_retries(backend, messages, case_id)
    except BackendError as exc:
        return AgentMessage(backend.name, "Abstain", "", "", error=str(exc))
    try:
        label, rationale = parse_verdict(raw)
    except UnparseableVerdict:
        label, rationale = "Abstain", raw.strip()
    return AgentMessage(backend.name, label, rationale, raw)


def run_agents(
    bundle: PromptBundle,
    backends: Sequence[Backend],
    decision_maker: Backend,
    cfg: Optional[AgentsConfig] = None,
    case_id: str = "",
) -> DiscussionTranscript:
    cfg = cfg or AgentsConfig()
    if len(backends) < 2:
        raise ValueError("the discussion protocol needs at least two agents")
    if cfg.max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    agents = {b.name: AgentState(b.name) for b in backends}
    active = list(backends)
    rounds: list[DiscussionRound] = []
    consensus = None
    for r in range(1, cfg.max_rounds + 1):
        prev = rounds[-1] if rounds else None
        requests = [(b, agent_messages(bundle, agents[b.name], prev, cfg)) for b in active]
        if cfg.parallel and len(requests) > 1:
            with ThreadPoolExecutor(max_workers=len(requests)) as pool:
                msgs = list(pool.map(lambda req: _ask(req[0], req[1], case_id), requests))
        else:
            msgs = [_ask(b, m, case_id) for b, m in requests]
        round_ = DiscussionRound(r, tuple(msgs))
        rounds.append(round_)
        for m in msgs:
            if m.error is not None:
                logger.warning("case %s: agent %s dropped after error: %s", case_id, m.agent, m.error)
                continue
            st = agents[m.agent]
            st.verdict, st.rationale, st.round_index = m.verdict, m.rationale, r
            st.history.append((r, m.verdict))
        active = [b for b, m in zip(active, msgs) if m.error is None]
        if not active:
            raise NoQuorum(f"case {case_id}: every agent failed")
        labels = {agents[b.name].verdict for b in active}
        if len(labels) == 1 and "Abstain" not in labels:
            consensus = labels.pop()
            break

    raw = None
    summary = ""
    decider_label = None
    try:
        raw = complete_with_retries(decision_maker, decider_messages(bundle, rounds, cfg), case_id)
        decider_label, summary = parse_verdict(raw)
    except (BackendError, UnparseableVerdict) as exc:
        logger.warning("case %s: decision maker gave no usable answer (%s)", case_id, exc)

    if consensus is not None:
        return DiscussionTranscript(case_id, tuple(rounds), consensus, summary, "Consensus", raw)
    if decider_label is not None:
        return DiscussionTranscript(case_id, tuple(rounds), decider_label, summary, "DecisionMaker", raw)
    label, tally = vote([m.verdict for m in rounds[-1].messages if m.error is None], cfg.tie_break)
    return DiscussionTranscript(case_id, tuple(rounds), label, f"fallback vote {tally}", "Vote", raw)
