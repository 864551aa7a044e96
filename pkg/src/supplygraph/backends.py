"""Completion backends: live HTTP, scripted/gazetteer, record, and replay.

Every backend answers a BackendRequest with a BackendResponse. Requests are
identified by a stable content hash over (system, user, question,
temperature); the request tag never enters the hash, so replay does not
depend on call-site labels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import requests

from .errors import (
    BackendUnavailable,
    CassetteWriteError,
    DuplicateKey,
    ParseError,
    ReplayMiss,
    ScriptMiss,
)
from .prompting import (
    CLASSIFICATION_USER_PREFIX,
    EXTRACTION_USER_PREFIX,
    REASONING_PREAMBLE,
    ExtractedEntity,
    PromptTriple,
    estimate_tokens,
    render_entity_list,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_TOKENS = 512

ENDPOINT_ENV = "SUPPLYGRAPH_ENDPOINT"
API_KEY_ENV = "SUPPLYGRAPH_API_KEY"
MODEL_ENV = "SUPPLYGRAPH_MODEL"

_QUESTION_RE = re.compile(
    r"^Is this entity (?P<name>.+) mentioned in the description belonging to a "
    r"(?P<category>.+)\?$",
    re.DOTALL,
)


@dataclass(frozen=True)
class BackendRequest:
    prompt: PromptTriple
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    request_tag: str = ""

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int = 0


def request_key(prompt: PromptTriple, temperature: float = 0.0) -> str:
    """Stable hex key for a request's content (request tags excluded)."""
    payload = json.dumps(
        [prompt.system, prompt.user, prompt.question, f"{temperature:.6g}"],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> BackendResponse: ...


def _synthetic_response(prompt: PromptTriple, text: str) -> BackendResponse:
    input_tokens = sum(estimate_tokens(p) for p in (prompt.system, prompt.user, prompt.question))
    return BackendResponse(
        text=text,
        input_tokens=input_tokens,
        output_tokens=estimate_tokens(text),
        latency_ms=0,
    )


@dataclass(frozen=True)
class GazetteerEntry:
    description: str
    categories: frozenset[str]


@dataclass
class ScriptFile:
    """Parsed script/cassette: keyed responses plus an optional gazetteer."""

    entries: dict[str, str] = field(default_factory=dict)
    gazetteer: dict[str, GazetteerEntry] = field(default_factory=dict)


def _parse_gazetteer(record: dict, path: str, lineno: int) -> dict[str, GazetteerEntry]:
    gazetteer: dict[str, GazetteerEntry] = {}
    body = record["gazetteer"]
    if not isinstance(body, dict):
        raise ParseError("gazetteer must be an object", path=path, line=lineno)
    for name, entry in body.items():
        if name != name.lower() or name != name.strip() or "  " in name or not name:
            raise ParseError(
                f"gazetteer name {name!r} must be lowercase and normalized",
                path=path, line=lineno,
            )
        if not isinstance(entry, dict) or "description" not in entry or "categories" not in entry:
            raise ParseError(
                f"gazetteer entry for {name!r} needs description and categories",
                path=path, line=lineno,
            )
        if not isinstance(entry["description"], str) or not isinstance(entry["categories"], list):
            raise ParseError(
                f"gazetteer entry for {name!r} has wrong field types",
                path=path, line=lineno,
            )
        gazetteer[name] = GazetteerEntry(
            description=entry["description"],
            categories=frozenset(entry["categories"]),
        )
    return gazetteer


def load_script(path: str) -> ScriptFile:
    """Load a JSONL script or cassette.

    Records are either {"key", "response"} pairs or one optional
    {"gazetteer": {...}} record. Raises DuplicateKey on repeated keys and
    ParseError on malformed records (gazetteer names must be pre-normalized).
    """
    script = ScriptFile()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path=str(path), line=lineno) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not an object", path=str(path), line=lineno)
            if set(record) == {"gazetteer"}:
                script.gazetteer.update(_parse_gazetteer(record, str(path), lineno))
                continue
            if set(record) != {"key", "response"}:
                raise ParseError(
                    f"record must be key/response or gazetteer, got {sorted(record)}",
                    path=str(path), line=lineno,
                )
            if not isinstance(record["key"], str) or not isinstance(record["response"], str):
                raise ParseError("key and response must be strings", path=str(path), line=lineno)
            if record["key"] in script.entries:
                raise DuplicateKey(record["key"])
            script.entries[record["key"]] = record["response"]
    return script


class ScriptedBackend:
    """Deterministic offline backend: keyed responses, then gazetteer synthesis.

    Extraction prompts are answered by scanning the embedded article text for
    gazetteer names (whole-phrase, word-boundary matches, ordered by first
    occurrence). Classification prompts answer Yes exactly when the asked
    category is in the gazetteer's set for the asked entity.
    """

    def __init__(self, script: ScriptFile):
        self.script = script

    def complete(self, request: BackendRequest) -> BackendResponse:
        key = request_key(request.prompt, request.temperature)
        if key in self.script.entries:
            return _synthetic_response(request.prompt, self.script.entries[key])
        text = self._synthesize(request.prompt)
        if text is None:
            raise ScriptMiss(f"no script entry for key {key[:12]} and no synthesis possible")
        return _synthetic_response(request.prompt, text)

    def _synthesize(self, prompt: PromptTriple) -> str | None:
        if not self.script.gazetteer:
            return None
        if prompt.user.startswith(EXTRACTION_USER_PREFIX):
            news = prompt.user[len(EXTRACTION_USER_PREFIX):]
            return self._extract_from(news)
        if prompt.user.startswith(CLASSIFICATION_USER_PREFIX):
            return self._classify_from(prompt.question)
        return None

    def _extract_from(self, news: str) -> str:
        found: list[tuple[int, str]] = []
        for name in self.script.gazetteer:
            m = re.search(r"\b" + re.escape(name) + r"\b", news)
            if m:
                found.append((m.start(), name))
        found.sort()
        entities = [
            ExtractedEntity(name=name, description=self.script.gazetteer[name].description)
            for _, name in found
        ]
        return render_entity_list(entities)

    def _classify_from(self, question: str) -> str | None:
        if question.startswith(REASONING_PREAMBLE):
            question = question[len(REASONING_PREAMBLE):].lstrip()
        m = _QUESTION_RE.match(question)
        if not m:
            return None
        entry = self.script.gazetteer.get(m.group("name"))
        if entry is not None and m.group("category") in entry.categories:
            return "Yes"
        return "No"


class ReplayBackend:
    """Strict cassette playback; unknown requests raise ReplayMiss."""

    def __init__(self, script: ScriptFile):
        self.entries = script.entries

    def complete(self, request: BackendRequest) -> BackendResponse:
        key = request_key(request.prompt, request.temperature)
        if key not in self.entries:
            raise ReplayMiss(f"cassette has no entry for key {key[:12]}")
        return _synthetic_response(request.prompt, self.entries[key])


class RecordingBackend:
    """Proxy to a live backend that appends (key, response) lines to a cassette.

    A request whose key was already recorded in this session is answered from
    the cassette without touching the live backend, so recording and replay
    return identical text even for stochastic upstreams.
    """

    def __init__(self, live: Backend, cassette_path: str):
        self.live = live
        self.cassette_path = cassette_path
        self._seen: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, request: BackendRequest) -> BackendResponse:
        key = request_key(request.prompt, request.temperature)
        with self._lock:
            if key in self._seen:
                return _synthetic_response(request.prompt, self._seen[key])
        response = self.live.complete(request)
        with self._lock:
            if key not in self._seen:
                self._seen[key] = response.text
                line = json.dumps({"key": key, "response": response.text}, ensure_ascii=False)
                try:
                    with open(self.cassette_path, "a", encoding="utf-8") as fh:
                        fh.write(line + "\n")
                except OSError as exc:
                    raise CassetteWriteError(f"cannot append to {self.cassette_path}: {exc}") from exc
        return response


class HttpBackend:
    """Chat-completion HTTP client with bounded retries and in-flight cap.

    Sends {"messages": [...], "temperature", "max_tokens"} where the question
    part is appended to the user message; expects the usual
    choices[0].message.content reply shape. The API key is sent as a bearer
    token and never logged.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        model: str | None = None,
        timeout_s: float = 30.0,
        retry_cap: int = 3,
        backoff_base_s: float = 0.5,
        in_flight: int = 8,
    ):
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        self.endpoint = endpoint
        self._api_key = api_key
        self.model = model
        self.timeout_s = timeout_s
        self.retry_cap = retry_cap
        self.backoff_base_s = backoff_base_s
        self._slots = threading.Semaphore(in_flight)
        self._rng = random.Random()

    @classmethod
    def from_env(cls, **overrides) -> "HttpBackend":
        endpoint = os.environ.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise ValueError(f"{ENDPOINT_ENV} is not set")
        return cls(
            endpoint=endpoint,
            api_key=os.environ.get(API_KEY_ENV) or None,
            model=os.environ.get(MODEL_ENV) or None,
            **overrides,
        )

    def _payload(self, request: BackendRequest) -> dict:
        user = request.prompt.user + "\n\n" + request.prompt.question
        payload = {
            "messages": [
                {"role": "system", "content": request.prompt.system},
                {"role": "user", "content": user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if self.model:
            payload["model"] = self.model
        return payload

    def complete(self, request: BackendRequest) -> BackendResponse:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        payload = self._payload(request)
        attempts = 1 + self.retry_cap
        last_error = "unknown"
        for attempt in range(attempts):
            if attempt:
                delay = self.backoff_base_s * (2 ** (attempt - 1))
                time.sleep(delay + self._rng.uniform(0, self.backoff_base_s))
            started = time.monotonic()
            try:
                with self._slots:
                    resp = requests.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = f"{type(exc).__name__}"
                log.warning("backend attempt %d/%d failed: %s", attempt + 1, attempts, last_error)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("backend attempt %d/%d failed: %s", attempt + 1, attempts, last_error)
                continue
            if resp.status_code != 200:
                raise BackendUnavailable(
                    f"backend rejected request: HTTP {resp.status_code}", attempts=attempt + 1
                )
            return self._parse(resp, started)
        raise BackendUnavailable(
            f"backend unreachable after {attempts} attempts: {last_error}", attempts=attempts
        )

    def _parse(self, resp: requests.Response, started: float) -> BackendResponse:
        latency_ms = int((time.monotonic() - started) * 1000)
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed backend response: {exc}", attempts=1) from exc
        usage = body.get("usage", {})
        return BackendResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            latency_ms=latency_ms,
        )
