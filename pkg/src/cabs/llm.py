"""Chat-completion client: prompt rendering, retry/caching, strict validation.

The wire protocol is the ubiquitous chat-completion JSON shape
(``{model, messages: [{role, content}]}`` in, ``choices[0].message.content``
out).  All judging calls run at temperature 0 and responses are cached
content-addressed by (model, prompt, temperature), so corpus evaluations
replay deterministically from a warm cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from . import core
from .errors import (
    AuthError,
    ExhaustedRetries,
    MissingBinding,
    ResponseShapeError,
    SchemaViolation,
    Unparseable,
)

_TEMPLATE_PLACEHOLDERS = {
    "extract": ("report",),
    "match": ("gt", "pred"),
    "mcq": ("abnormality_json", "negative_name"),
}

_MCQ_TYPES = frozenset(
    {"existence_positive", "existence_negative", "location", "attribute"}
)


def _template_text(name: str) -> str:
    return resources.files("cabs.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")


_TEMPLATE_CACHE: dict[str, str] = {}


def render_prompt(template: str, bindings: dict[str, str]) -> str:
    """Substitute placeholders into a shipped template, byte-exact otherwise.

    Raises:
        MissingBinding: a required placeholder has no binding.
    """
    if template not in _TEMPLATE_PLACEHOLDERS:
        raise ValueError(f"unknown template {template!r}")
    if template not in _TEMPLATE_CACHE:
        _TEMPLATE_CACHE[template] = _template_text(template)
    text = _TEMPLATE_CACHE[template]
    for name in _TEMPLATE_PLACEHOLDERS[template]:
        if name not in bindings:
            raise MissingBinding(name)
        text = text.replace("{" + name + "}", bindings[name])
    return text


def strict_reprompt(prompt: str, previous_response: str, error: str) -> str:
    """The single allowed follow-up after an invalid judge response."""
    return (
        f"{prompt}\n\n"
        f"Your previous response failed validation: {error}\n"
        f"Previous response:\n{previous_response}\n"
        "Return exactly one valid JSON object now, with no explanations."
    )


@dataclass(frozen=True)
class ModelConfig:
    """Connection settings for one judge model.

    The API key is referenced by environment variable name and is never
    stored, logged, or folded into cache keys.
    """

    endpoint: str = "http://localhost:8080/v1/chat/completions"
    model: str = "judge"
    api_key_env: str = "CABS_LLM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


class TransportTimeout(Exception):
    """Raised by transports when the request deadline passes."""


class TransportFailure(Exception):
    """Raised by transports on connection-level trouble (retried)."""


class Transport(Protocol):
    def post(
        self, url: str, payload: dict, headers: dict[str, str], timeout: float
    ) -> tuple[int, str]: ...


class HttpxTransport:
    def post(
        self, url: str, payload: dict, headers: dict[str, str], timeout: float
    ) -> tuple[int, str]:
        try:
            response = httpx.post(url, json=payload, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TransportTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise TransportFailure(str(exc)) from exc
        return response.status_code, response.text


def request_digest(model: str, prompt: str, temperature: float) -> str:
    """SHA-256 over the canonical (model, prompt, temperature) encoding.

    Distinct triples collide only if SHA-256 collides (probability on the
    order of 2**-128 even across billions of requests), so a digest is safe
    to treat as the identity of a judging call.
    """
    material = json.dumps(
        {"model": model, "prompt": prompt, "temperature": temperature},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed on-disk cache: ``{digest}.json`` per response.

    Concurrent misses for the same digest coalesce onto one fetch; a digest
    is written at most once.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, digest: str) -> threading.Lock:
        with self._locks_guard:
            if digest not in self._locks:
                self._locks[digest] = threading.Lock()
            return self._locks[digest]

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> str | None:
        path = self._path(digest)
        if not path.exists():
            return None
        entry = json.loads(path.read_text("utf-8"))
        return entry["response_text"]

    def put(self, digest: str, response_text: str) -> None:
        path = self._path(digest)
        if path.exists():
            return
        entry = {
            "request_digest": digest,
            "response_text": response_text,
            "timestamp": time.time(),
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, ensure_ascii=False), "utf-8")
        tmp.replace(path)

    def get_or_fetch(self, digest: str, fetch: Callable[[], str]) -> str:
        cached = self.get(digest)
        if cached is not None:
            return cached
        with self._lock_for(digest):
            cached = self.get(digest)
            if cached is not None:
                return cached
            response_text = fetch()
            self.put(digest, response_text)
            return response_text


class LlmClient:
    """Bounded-concurrency chat-completion client with retry and caching."""

    def __init__(
        self,
        cfg: ModelConfig,
        cache: ResponseCache | None = None,
        transport: Transport | None = None,
        max_in_flight: int = 8,
        backoff_base: float = 0.25,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.cache = cache
        self.transport = transport or HttpxTransport()
        self._semaphore = threading.Semaphore(max_in_flight)
        self._backoff_base = backoff_base
        self._sleep = sleep
        self.network_calls = 0

    def complete(self, prompt: str) -> str:
        """Return the first choice's text for a prompt, via cache if warm."""
        digest = request_digest(self.cfg.model, prompt, self.cfg.temperature)
        if self.cache is not None:
            return self.cache.get_or_fetch(digest, lambda: self._fetch(prompt))
        return self._fetch(prompt)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _fetch(self, prompt: str) -> str:
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        last_reason = "transient"
        with self._semaphore:
            for attempt in range(self.cfg.max_retries + 1):
                try:
                    self.network_calls += 1
                    status, body = self.transport.post(
                        self.cfg.endpoint, payload, self._headers(), self.cfg.timeout
                    )
                except TransportTimeout:
                    last_reason = "timeout"
                    if attempt < self.cfg.max_retries:
                        self._sleep(self._backoff_base * (2**attempt))
                    continue
                except TransportFailure:
                    last_reason = "transient"
                    if attempt < self.cfg.max_retries:
                        self._sleep(self._backoff_base * (2**attempt))
                    continue
                if status in (401, 403):
                    raise AuthError(f"authentication rejected (HTTP {status})")
                if status == 429 or status >= 500:
                    last_reason = "transient"
                    if attempt < self.cfg.max_retries:
                        self._sleep(self._backoff_base * (2**attempt))
                    continue
                if status != 200:
                    raise ResponseShapeError(f"unexpected HTTP status {status}")
                return _first_choice_text(body)
        raise ExhaustedRetries(
            f"gave up after {self.cfg.max_retries + 1} attempts ({last_reason})",
            reason=last_reason,
        )


def _first_choice_text(body: str) -> str:
    try:
        obj = json.loads(body)
        content = obj["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise ResponseShapeError(f"completion body not in expected shape: {exc}") from exc
    if not isinstance(content, str):
        raise ResponseShapeError("choices[0].message.content is not a string")
    return content


# --- response validation -------------------------------------------------------

@dataclass(frozen=True)
class ParsedResponse:
    """Validated payload plus whether the consistency clamp repaired it."""

    payload: Any
    repaired: bool = False


_FENCE_RE = re.compile(r"\A```[a-zA-Z0-9_-]*\n(.*?)\n?```\Z", re.DOTALL)


def _strip_fence(text: str) -> str:
    text = text.strip()
    match = _FENCE_RE.match(text)
    return match.group(1) if match else text


def parse_json_response(text: str, schema: str) -> ParsedResponse:
    """Strictly parse a judge response against a named schema.

    A single leading/trailing code fence is tolerated; nothing else is.
    ``schema`` is one of ``decomposition``, ``match``, ``mcq``.

    Raises:
        Unparseable: the text is not a JSON object (no extraction heuristics).
        SchemaViolation: valid JSON that breaks the schema; carries the path.
    """
    try:
        obj = json.loads(_strip_fence(text))
    except json.JSONDecodeError as exc:
        raise Unparseable(f"response is not valid JSON: {exc}") from exc
    if schema == "decomposition":
        return ParsedResponse(core.decomposition_from_obj(obj))
    if schema == "match":
        payload, repaired = _validate_match(obj)
        return ParsedResponse(payload, repaired=repaired)
    if schema == "mcq":
        return ParsedResponse(_validate_mcq(obj))
    raise ValueError(f"unknown schema {schema!r}")


def _exact_keys(obj: dict, keys: tuple[str, ...], path: str) -> None:
    for key in keys:
        if key not in obj:
            raise SchemaViolation(f"{path}.{key}" if path else key, "missing required key")
    extra = sorted(set(obj) - set(keys))
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise SchemaViolation(where, "unknown key")


def _validate_match(obj: Any) -> tuple[dict, bool]:
    if not isinstance(obj, dict):
        raise SchemaViolation("response", "expected object")
    _exact_keys(obj, ("abnormalities", "false_positive"), "")
    if not isinstance(obj["abnormalities"], list):
        raise SchemaViolation("abnormalities", "expected array")
    if not isinstance(obj["false_positive"], list):
        raise SchemaViolation("false_positive", "expected array")
    repaired = False
    rows: list[dict] = []
    for i, item in enumerate(obj["abnormalities"]):
        path = f"abnormalities[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(path, "expected object")
        _exact_keys(item, ("name", "hit", "location_match", "attribute_match"), path)
        if not isinstance(item["name"], str) or not item["name"]:
            raise SchemaViolation(f"{path}.name", "expected non-empty string")
        for flag in ("hit", "location_match", "attribute_match"):
            if not isinstance(item[flag], bool):
                raise SchemaViolation(f"{path}.{flag}", "expected boolean")
        hit = item["hit"]
        loc, attr = item["location_match"], item["attribute_match"]
        if not hit and (loc or attr):
            # Judge broke the hit=false clamp; repair rather than discard.
            loc = attr = False
            repaired = True
        rows.append(
            {"name": item["name"], "hit": hit, "location_match": loc, "attribute_match": attr}
        )
    names: list[str] = []
    for i, item in enumerate(obj["false_positive"]):
        path = f"false_positive[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(path, "expected object")
        _exact_keys(item, ("name",), path)
        if not isinstance(item["name"], str) or not item["name"]:
            raise SchemaViolation(f"{path}.name", "expected non-empty string")
        names.append(item["name"])
    return {"abnormalities": rows, "false_positives": names}, repaired


def _validate_mcq(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolation("response", "expected object")
    _exact_keys(obj, ("items",), "")
    if not isinstance(obj["items"], list):
        raise SchemaViolation("items", "expected array")
    for i, item in enumerate(obj["items"]):
        path = f"items[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(path, "expected object")
        _exact_keys(item, ("type", "question", "options", "answer"), path)
        if item["type"] not in _MCQ_TYPES:
            raise SchemaViolation(f"{path}.type", f"invalid value {item['type']!r}")
        if not isinstance(item["question"], str) or not item["question"]:
            raise SchemaViolation(f"{path}.question", "expected non-empty string")
        options = item["options"]
        if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
            raise SchemaViolation(f"{path}.options", "expected array of strings")
        if not isinstance(item["answer"], str):
            raise SchemaViolation(f"{path}.answer", "expected string")
    return obj
