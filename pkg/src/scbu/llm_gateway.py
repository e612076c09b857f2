"""Backends that answer a rendered prompt, and single-model detection.

Three backend kinds share one interface, ``complete(messages, case_id=...)``:

* ``mock``: offline and deterministic. Either a phrase-count rule applied to
  the script section of the prompt, or a scripted list of answers.
* ``fixture``: replays answers recorded on disk, keyed by the request hash
  (``<dir>/<backend>/<sha256>.json``, which is what ``RecordingBackend``
  writes, or a shared ``<dir>/<sha256>.json``) or by
  ``<dir>/<backend>/<case_id>.txt``.
* ``http``: an OpenAI-style chat-completion endpoint. Credentials come from
  the environment variable named in ``api_key_env``.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import (
    BackendError,
    ExemplarPolicyError,
    TransientBackendError,
    UnparseableVerdict,
)
from .prompt_builder import SCRIPT_HEADER, PromptBundle, messages_hash, parse_verdict
from .script_compiler import idle_responses

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("mock", "fixture", "http")


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str = "mock"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    max_tokens: int = 1000
    temperature: float = 0.7
    api_key_env: Optional[str] = None
    allows_exemplars: bool = False
    retries: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 120.0
    max_concurrency: int = 4
    min_interval_s: float = 0.0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"backend kind must be one of {BACKEND_KINDS}")
        if not self.max_tokens > 0:
            raise ValueError("max_tokens must be > 0")
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "BackendSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown backend keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DetectionResult:
    case_id: str
    backend: str
    label: str
    rationale: str
    raw_response: str
    latency_ms: float
    prompt_hash: str

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def script_section(messages: Sequence[dict]) -> str:
    """The behavior-script block of the last user message."""
    user = [m["content"] for m in messages if m["role"] == "user"]
    if not user:
        return ""
    text = user[-1]
    at = text.rfind(SCRIPT_HEADER)
    if at < 0:
        return text
    body = text[at + len(SCRIPT_HEADER):]
    end = body.find("\n\n")
    return body if end < 0 else body[:end]


class Backend:
    """Base class: concurrency limit and request spacing around ``_complete``."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self.calls = 0
        self._slots = threading.BoundedSemaphore(max(1, spec.max_concurrency))
        self._lock = threading.Lock()
        self._next_slot = 0.0

    @property
    def name(self) -> str:
        return self.spec.name

    def _pace(self):
        if self.spec.min_interval_s <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.spec.min_interval_s
        if wait > 0:
            time.sleep(wait)

    def complete(self, messages: Sequence[dict], *, case_id: str = "") -> str:
        with self._slots:
            self._pace()
            with self._lock:
                self.calls += 1
            return self._complete(list(messages), case_id)

    def _complete(self, messages: list[dict], case_id: str) -> str:
        raise NotImplementedError


class MockBackend(Backend):
    """Offline backend.

    ``options["responses"]``: answers returned in turn (the last one repeats);
    entries may also be callables ``f(messages, case_id) -> str``.
    Otherwise the phrase rule applies: count the timestamped script lines that
    contain one of ``options["phrases"]`` (default: the "no response" templates)
    and answer ASD when the count reaches ``options["threshold"]`` or, if no
    absolute threshold is given, when their share reaches ``options["share"]``.
    """

    DEFAULT_SHARE = 0.35

    def __init__(self, spec: BackendSpec):
        super().__init__(spec)
        opts = spec.options
        self.responses = list(opts.get("responses", []))
        self.phrases = tuple(opts.get("phrases", ())) or idle_responses()
        self.threshold = opts.get("threshold")
        self.share = float(opts.get("share", self.DEFAULT_SHARE))
        self._turn = 0

    def _complete(self, messages, case_id):
        if self.responses:
            with self._lock:
                k = min(self._turn, len(self.responses) - 1)
                self._turn += 1
            answer = self.responses[k]
            return answer(messages, case_id) if callable(answer) else answer
        lines = [ln for ln in script_section(messages).splitlines() if ln.startswith("[")]
        hits = sum(any(p in ln for p in self.phrases) for ln in lines)
        if self.threshold is not None:
            label = "ASD" if hits >= int(self.threshold) else "TD"
            rule = f"threshold {int(self.threshold)}"
        else:
            label = "ASD" if lines and hits / len(lines) >= self.share else "TD"
            rule = f"share {self.share:.2f}"
        return (
            f"In {hits} of {len(lines)} script line(s) the child does not respond to the instruction "
            f"(rule: {rule}).\nJudgment: {label}"
        )


class FixtureBackend(Backend):
    def __init__(self, spec: BackendSpec):
        super().__init__(spec)
        directory = spec.options.get("directory") or spec.endpoint
        if not directory:
            raise ValueError(f"fixture backend {spec.name!r} needs options.directory")
        self.directory = Path(directory)

    def _complete(self, messages, case_id):
        # per-backend recordings first: agents in a panel see identical first-round prompts
        h = messages_hash(messages)
        for path in (self.directory / self.spec.name / f"{h}.json", self.directory / f"{h}.json"):
            if path.is_file():
                return json.loads(path.read_text(encoding="utf-8"))["response"]
        path = self.directory / self.spec.name / f"{case_id}.txt"
        if path.is_file():
            return path.read_text(encoding="utf-8")
        raise BackendError(f"fixture backend {self.name!r}: no recording for case {case_id!r}")


class RecordingBackend(Backend):
    """Wraps another backend and records every exchange for later fixture replay."""

    def __init__(self, inner: Backend, directory):
        super().__init__(inner.spec)
        self.inner = inner
        self.directory = Path(directory)

    def _complete(self, messages, case_id):
        answer = self.inner.complete(messages, case_id=case_id)
        record = {"backend": self.name, "case_id": case_id, "request": messages, "response": answer}
        path = self.directory / self.name / f"{messages_hash(messages)}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, sort_keys=True, indent=1, ensure_ascii=False), encoding="utf-8")
        return answer


class HttpBackend(Backend):
    def __init__(self, spec: BackendSpec, client=None):
        super().__init__(spec)
        if not spec.endpoint:
            raise ValueError(f"http backend {spec.name!r} needs an endpoint")
        import httpx

        self.client = client or httpx.Client(timeout=spec.timeout_s)

    def request_body(self, messages: Sequence[dict]) -> dict:
        body = {
            "messages": list(messages),
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        }
        if self.spec.model:
            body["model"] = self.spec.model
        return body

    def headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.spec.api_key_env:
            key = os.environ.get(self.spec.api_key_env)
            if not key:
                raise BackendError(f"environment variable {self.spec.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _complete(self, messages, case_id):
        import httpx

        try:
            resp = self.client.post(self.spec.endpoint, json=self.request_body(messages), headers=self.headers())
        except httpx.TransportError as exc:
            raise TransientBackendError(f"{self.name}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"{self.name}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.name}: malformed completion payload") from exc


def make_backend(spec: BackendSpec, **kwargs) -> Backend:
    if spec.kind == "mock":
        return MockBackend(spec)
    if spec.kind == "fixture":
        return FixtureBackend(spec)
    return HttpBackend(spec, **kwargs)


def complete_with_retries(backend: Backend, messages, case_id: str = "", sleep: Callable[[float], None] = time.sleep) -> str:
    attempts = backend.spec.retries + 1
    for attempt in range(attempts):
        try:
            return backend.complete(messages, case_id=case_id)
        except TransientBackendError as exc:
            if attempt == attempts - 1:
                raise BackendError(f"{backend.name}: giving up after {attempts} attempts ({exc})") from exc
            delay = backend.spec.backoff_s * 2 ** attempt
            logger.info("%s: transient failure (%s), retrying in %.2fs", backend.name, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


def _persist(audit_dir: Optional[Path], case_id: str, backend: str, prompt_hash: str, raw: str, tag: str = "") -> None:
    if audit_dir is None:
        return
    audit_dir = Path(audit_dir)
    audit_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{case_id}__{backend}{tag}__{prompt_hash[:12]}"
    (audit_dir / f"{stem}.txt").write_text(raw, encoding="utf-8")


def detect_messages(
    messages: Sequence[dict],
    backend: Backend,
    case_id: str = "",
    audit_dir=None,
    sleep: Callable[[float], None] = time.sleep,
    tag: str = "",
) -> DetectionResult:
    prompt_hash = messages_hash(messages)
    t0 = time.perf_counter()
    raw = complete_with_retries(backend, messages, case_id, sleep=sleep)
    latency_ms = (time.perf_counter() - t0) * 1000.0
    _persist(audit_dir, case_id, backend.name, prompt_hash, raw, tag)
    try:
        label, rationale = parse_verdict(raw)
    except UnparseableVerdict:
        logger.warning("case %s / %s: unparseable verdict, recording abstention", case_id, backend.name)
        label, rationale = "Abstain", raw.strip()
    return DetectionResult(case_id, backend.name, label, rationale, raw, latency_ms, prompt_hash)


def detect(bundle: PromptBundle, backend: Backend, case_id: str = "", audit_dir=None, sleep: Callable[[float], None] = time.sleep) -> DetectionResult:
    """One verdict from one backend; the raw answer is persisted before it is parsed."""
    if bundle.exemplars and not backend.spec.allows_exemplars:
        raise ExemplarPolicyError(f"backend {backend.name!r} does not accept few-shot exemplars")
    return detect_messages(bundle.messages(), backend, case_id, audit_dir, sleep)
