"""Four-part domain prompt: system, script content, domain prompt, format prompt.

Optional few-shot exemplars (labelled scripts) are placed between the system
prompt and the script under test. The domain prompt has two independently
switchable subsections, diagnostic knowledge and clinical experience.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import ContextOverflow, UnparseableVerdict
from .script_compiler import ScriptDocument

LABELS = ("ASD", "TD")
SCRIPT_HEADER = "### Behavior script"
EXEMPLAR_HEADER = "### Example"


@dataclass(frozen=True)
class PromptProfile:
    use_domain_knowledge: bool = True
    use_human_experience: bool = True
    use_emotion_lines: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PromptProfile":
        unknown = set(d) - {"use_domain_knowledge", "use_human_experience", "use_emotion_lines"}
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PromptTemplates:
    system: str
    domain_knowledge: str
    human_experience: str
    format: str

    @classmethod
    def load(cls, directory: Union[str, Path, None] = None) -> "PromptTemplates":
        def read(name):
            if directory is None:
                return resources.files("scbu").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
            return (Path(directory) / f"{name}.txt").read_text(encoding="utf-8")

        return cls(*(read(n).strip() for n in ("system", "domain_knowledge", "human_experience", "format")))


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    script_text: str
    domain_text: str
    format_text: str
    exemplars: tuple = ()

    def exemplar_text(self) -> str:
        blocks = []
        for k, (doc, label) in enumerate(self.exemplars, start=1):
            blocks.append(f"{EXEMPLAR_HEADER} {k}\n{doc.render().rstrip()}\nJudgment: {label}")
        return "\n\n".join(blocks)

    def user_text(self) -> str:
        parts = []
        if self.exemplars:
            parts.append("The following labelled scripts are examples.\n\n" + self.exemplar_text())
        parts.append(f"{SCRIPT_HEADER}\n{self.script_text.rstrip()}")
        if self.domain_text:
            parts.append(self.domain_text)
        parts.append(self.format_text)
        return "\n\n".join(parts) + "\n"

    def render(self) -> str:
        return self.system_text + "\n\n" + self.user_text()

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text()},
        ]

    def prompt_hash(self) -> str:
        return messages_hash(self.messages())


def messages_hash(messages: Sequence[dict]) -> str:
    blob = json.dumps(list(messages), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    """Rough token count (about four characters per token)."""
    return math.ceil(len(text) / 4)


def order_exemplars(exemplars: Sequence[tuple[ScriptDocument, str]], order: str = "interleave") -> list:
    """``interleave`` alternates ASD/TD starting with ASD; ``given`` keeps input order."""
    if order == "given":
        return list(exemplars)
    if order != "interleave":
        raise ValueError(f"unknown exemplar order {order!r}")
    queues = {label: [e for e in exemplars if e[1] == label] for label in LABELS}
    out = []
    while any(queues.values()):
        for label in LABELS:
            if queues[label]:
                out.append(queues[label].pop(0))
    return out


def build_prompt(
    script: ScriptDocument,
    profile: Optional[PromptProfile] = None,
    exemplars: Sequence[tuple[ScriptDocument, str]] = (),
    *,
    templates: Optional[PromptTemplates] = None,
    exemplar_order: str = "interleave",
    max_exemplars: int = 20,
    context_budget_tokens: Optional[int] = None,
) -> PromptBundle:
    profile = profile or PromptProfile()
    templates = templates or PromptTemplates.load()
    if len(exemplars) > max_exemplars:
        raise ValueError(f"{len(exemplars)} exemplars exceed the maximum of {max_exemplars}")
    for _, label in exemplars:
        if label not in LABELS:
            raise ValueError(f"exemplar label must be one of {LABELS}, got {label!r}")

    def prepare(doc: ScriptDocument) -> ScriptDocument:
        return doc if profile.use_emotion_lines else doc.without_emotion()

    domain = []
    if profile.use_domain_knowledge:
        domain.append(templates.domain_knowledge)
    if profile.use_human_experience:
        domain.append(templates.human_experience)
    bundle = PromptBundle(
        system_text=templates.system,
        script_text=prepare(script).render(),
        domain_text="\n\n".join(domain),
        format_text=templates.format,
        exemplars=tuple((prepare(d), label) for d, label in order_exemplars(exemplars, exemplar_order)),
    )
    if context_budget_tokens is not None:
        need = estimate_tokens(bundle.render())
        if need > context_budget_tokens:
            raise ContextOverflow(need, context_budget_tokens)
    return bundle


_FINAL = re.compile(r"judg(?:e)?ment\s*[:：]\s*\**\s*(ASD|TD)\b", re.IGNORECASE)
_TOKEN = re.compile(r"\b(ASD|TD)\b", re.IGNORECASE)


def parse_verdict(text: str) -> tuple[str, str]:
    """Extract ``(label, rationale)`` from an answer.

    The ``Judgment: <label>`` line wins (last one if repeated); otherwise the
    last bare ``ASD``/``TD`` token in the text is used.
    """
    matches = list(_FINAL.finditer(text))
    if matches:
        m = matches[-1]
        line_start = text.rfind("\n", 0, m.start()) + 1
        line_end = text.find("\n", m.end())
        line_end = len(text) if line_end < 0 else line_end
        rationale = (text[:line_start] + text[line_end:]).strip()
        return m.group(1).upper(), rationale
    tokens = list(_TOKEN.finditer(text))
    if tokens:
        return tokens[-1].group(1).upper(), text.strip()
    raise UnparseableVerdict("answer contains neither ASD nor TD")
