"""Structured-output chat backends: a real HTTP client and a scripted stand-in.

Both backends expose one operation, ``complete(request)``, which returns a
payload conforming to the request's output schema or raises a BackendError.
The scripted backend plays back recorded payloads by call index, which makes
whole pipeline runs bit-reproducible in tests; the HTTP backend talks to any
OpenAI-compatible chat-completions endpoint using its JSON-schema response
format.

Every call, successful or not, is appended to the backend's call log with a
hash of the request, so a run's model interactions can be audited or replayed
later.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx

__all__ = [
    "BackendError",
    "BackendSettings",
    "CallLogEntry",
    "Config",
    "CostRates",
    "EngineSettings",
    "ExhaustedError",
    "FixtureMismatchError",
    "HttpBackend",
    "RateLimitedError",
    "RetryPolicy",
    "SchemaViolationError",
    "ScriptedBackend",
    "StructuredRequest",
    "StructuredResponse",
    "TokenUsage",
    "TransportError",
    "create_backend",
    "load_config",
    "request_hash",
    "validate_payload",
]


@dataclass(frozen=True)
class StructuredRequest:
    """One structured-output completion request."""

    system_prompt: str
    user_messages: tuple[str, ...]
    output_schema: Mapping[str, Any]
    temperature: float = 0.0
    model_id: str = ""

    def __post_init__(self) -> None:
        if not self.output_schema:
            raise ValueError("output_schema must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "user_messages", tuple(self.user_messages))


@dataclass(frozen=True)
class TokenUsage:
    prompt: int = 0
    completion: int = 0


@dataclass(frozen=True)
class StructuredResponse:
    payload: dict[str, Any]
    usage: TokenUsage
    latency_ms: int


class BackendError(Exception):
    """Base class for completion failures."""


class TransportError(BackendError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class RateLimitedError(BackendError):
    def __init__(self, retry_after: float | None = None):
        super().__init__(f"rate limited (retry after {retry_after})")
        self.retry_after = retry_after


class SchemaViolationError(BackendError):
    def __init__(self, raw: str, violations: Sequence[str]):
        super().__init__("payload violates output schema: " + "; ".join(violations))
        self.raw = raw
        self.violations = list(violations)


class ExhaustedError(BackendError):
    def __init__(self, attempts: int):
        super().__init__(f"backend exhausted after {attempts} attempts")
        self.attempts = attempts


class FixtureMismatchError(AssertionError):
    """A scripted call's request hash diverged from the recorded one."""


def request_hash(request: StructuredRequest) -> str:
    doc = {
        "system_prompt": request.system_prompt,
        "user_messages": list(request.user_messages),
        "output_schema": request.output_schema,
        "temperature": request.temperature,
        "model_id": request.model_id,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Payload validation (deliberately small JSON-schema subset)
# ---------------------------------------------------------------------------

_JSON_TYPES = {
    "object": dict,
    "array": list,
    "string": str,
    "boolean": bool,
    "null": type(None),
}


def _type_ok(value: Any, type_name: str) -> bool:
    if type_name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    expected = _JSON_TYPES.get(type_name)
    return expected is not None and isinstance(value, expected)


def _type_label(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    return {dict: "object", list: "array", str: "string"}.get(type(value), type(value).__name__)


def _validate(value: Any, schema: Mapping[str, Any], path: str, out: list[str]) -> None:
    declared = schema.get("type")
    if declared is not None:
        allowed = declared if isinstance(declared, list) else [declared]
        if not any(_type_ok(value, t) for t in allowed):
            expected = " or ".join(allowed)
            out.append(f"{path or '$'}: expected {expected}, got {_type_label(value)}")
            return
    if "enum" in schema and value not in schema["enum"]:
        out.append(f"{path or '$'}: {value!r} not in enum {schema['enum']!r}")
        return
    if isinstance(value, dict):
        for name in schema.get("required", ()):
            if name not in value:
                out.append(f"{path or '$'}: missing required field {name!r}")
        for name, sub in schema.get("properties", {}).items():
            if name in value:
                _validate(value[name], sub, f"{path}.{name}" if path else name, out)
    elif isinstance(value, list):
        items = schema.get("items")
        if items:
            for i, element in enumerate(value):
                _validate(element, items, f"{path}[{i}]", out)


def validate_payload(payload: Any, output_schema: Mapping[str, Any]) -> list[str]:
    """Check required fields, primitive types, enums and array items, recursively.

    Returns human-readable violation strings; empty means conformant.
    """
    violations: list[str] = []
    _validate(payload, output_schema, "", violations)
    return violations


# ---------------------------------------------------------------------------
# Call log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallLogEntry:
    index: int
    request_hash: str
    ok: bool
    error: str | None
    usage: TokenUsage
    latency_ms: int
    attempts: int = 1


class _CallLogMixin:
    def _init_log(self) -> None:
        self.call_log: list[CallLogEntry] = []
        self._log_lock = threading.Lock()

    def _log(
        self,
        rhash: str,
        ok: bool,
        error: str | None,
        usage: TokenUsage,
        latency_ms: int,
        attempts: int = 1,
    ) -> None:
        with self._log_lock:
            self.call_log.append(
                CallLogEntry(
                    index=len(self.call_log),
                    request_hash=rhash,
                    ok=ok,
                    error=error,
                    usage=usage,
                    latency_ms=latency_ms,
                    attempts=attempts,
                )
            )


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


class ScriptedBackend(_CallLogMixin):
    """Deterministic playback backend keyed by ordinal call index.

    Fixture format: ``{"calls": [{"expect_hash": optional, "payload": {...},
    "usage": {"prompt": n, "completion": n}}]}``. When a call entry carries
    ``expect_hash``, the incoming request hash must match it — this catches
    prompt drift in recorded end-to-end tests. Requests beyond the recorded
    calls raise ExhaustedError(0).
    """

    model_id = "scripted"

    def __init__(self, calls: Sequence[Mapping[str, Any]]):
        self.calls = list(calls)
        self._cursor = 0
        self._cursor_lock = threading.Lock()
        self._init_log()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        doc = json.loads(Path(path).read_text())
        return cls(doc["calls"])

    def complete(self, request: StructuredRequest) -> StructuredResponse:
        rhash = request_hash(request)
        with self._cursor_lock:
            index = self._cursor
            self._cursor += 1
        if index >= len(self.calls):
            self._log(rhash, False, "exhausted", TokenUsage(), 0)
            raise ExhaustedError(0)
        entry = self.calls[index]
        expected = entry.get("expect_hash")
        if expected is not None and expected != rhash:
            self._log(rhash, False, "fixture-mismatch", TokenUsage(), 0)
            raise FixtureMismatchError(
                f"call #{index}: request hash {rhash} != recorded {expected}"
            )
        payload = entry["payload"]
        if not isinstance(payload, dict):
            self._log(rhash, False, "schema-violation", TokenUsage(), 0)
            raise SchemaViolationError(
                json.dumps(payload), ["top-level value is not an object"]
            )
        violations = validate_payload(payload, request.output_schema)
        usage_doc = entry.get("usage", {})
        usage = TokenUsage(
            prompt=int(usage_doc.get("prompt", 0)),
            completion=int(usage_doc.get("completion", 0)),
        )
        if violations:
            self._log(rhash, False, "schema-violation", usage, 0)
            raise SchemaViolationError(json.dumps(payload), violations)
        self._log(rhash, True, None, usage, 0)
        return StructuredResponse(payload=payload, usage=usage, latency_ms=0)


# ---------------------------------------------------------------------------
# HTTP backend (OpenAI-compatible)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    structured: int = 3
    transport: int = 5
    backoff_base_ms: int = 500


class HttpBackend(_CallLogMixin):
    """Chat-completions client for OpenAI-compatible endpoints.

    Credentials come from the environment variable named in the settings;
    transport problems and rate limits are retried with exponential backoff,
    schema-violating payloads are retried up to the structured budget, and
    when budgets run out the call raises ExhaustedError with the attempt
    count.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        completions_path: str = "/chat/completions",
        timeout_s: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        sleep=time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model
        self.api_key_env = api_key_env
        self.completions_path = completions_path
        self.timeout_s = timeout_s
        self.retry = retry
        self._sleep = sleep
        self._init_log()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_once(self, request: StructuredRequest) -> tuple[dict[str, Any], TokenUsage]:
        messages = [{"role": "system", "content": request.system_prompt}]
        messages += [{"role": "user", "content": m} for m in request.user_messages]
        body = {
            "model": request.model_id or self.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": "response",
                    "strict": True,
                    "schema": request.output_schema,
                },
            },
        }
        url = self.endpoint + self.completions_path
        try:
            resp = httpx.post(url, headers=self._headers(), json=body, timeout=self.timeout_s)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            raise RateLimitedError(float(retry_after) if retry_after else None)
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            doc = resp.json()
            content = doc["choices"][0]["message"]["content"]
            usage_doc = doc.get("usage", {})
            usage = TokenUsage(
                prompt=int(usage_doc.get("prompt_tokens", 0)),
                completion=int(usage_doc.get("completion_tokens", 0)),
            )
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        try:
            payload = json.loads(content)
        except json.JSONDecodeError:
            raise SchemaViolationError(content, ["content is not a JSON object"])
        if not isinstance(payload, dict):
            raise SchemaViolationError(content, ["top-level value is not an object"])
        violations = validate_payload(payload, request.output_schema)
        if violations:
            raise SchemaViolationError(content, violations)
        return payload, usage

    def complete(self, request: StructuredRequest) -> StructuredResponse:
        rhash = request_hash(request)
        transport_tries = 0
        structured_tries = 0
        attempts = 0
        started = time.monotonic()
        while True:
            attempts += 1
            try:
                payload, usage = self._post_once(request)
            except (TransportError, RateLimitedError) as exc:
                transport_tries += 1
                if transport_tries > self.retry.transport:
                    latency = int((time.monotonic() - started) * 1000)
                    self._log(rhash, False, "exhausted", TokenUsage(), latency, attempts)
                    raise ExhaustedError(attempts) from exc
                delay = (self.retry.backoff_base_ms / 1000.0) * (2 ** (transport_tries - 1))
                if isinstance(exc, RateLimitedError) and exc.retry_after:
                    delay = max(delay, exc.retry_after)
                self._sleep(delay)
            except SchemaViolationError as exc:
                structured_tries += 1
                if structured_tries > self.retry.structured:
                    latency = int((time.monotonic() - started) * 1000)
                    self._log(rhash, False, "exhausted", TokenUsage(), latency, attempts)
                    raise ExhaustedError(attempts) from exc
            else:
                latency = int((time.monotonic() - started) * 1000)
                self._log(rhash, True, None, usage, latency, attempts)
                return StructuredResponse(payload=payload, usage=usage, latency_ms=latency)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "scripted"  # "scripted" | "openai-compatible"
    endpoint: str = ""
    model: str = ""
    fixture: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    completions_path: str = "/chat/completions"
    timeout_s: float = 60.0


@dataclass(frozen=True)
class EngineSettings:
    max_iterations: int = 10
    temperature: float = 0.0


@dataclass(frozen=True)
class CostRates:
    prompt_per_1k: float = 0.0
    completion_per_1k: float = 0.0


@dataclass(frozen=True)
class Config:
    backend: BackendSettings = BackendSettings()
    retry: RetryPolicy = RetryPolicy()
    engine: EngineSettings = EngineSettings()
    cost: CostRates = CostRates()
    base_dir: Path = field(default_factory=Path)


def _section(doc: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = doc.get(name, {})
    if not isinstance(value, Mapping):
        raise ValueError(f"config section {name!r} must be a table/object")
    return value


def load_config(path: str | Path) -> Config:
    """Load engine-wide configuration from a JSON or TOML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib  # type: ignore[no-redef]
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)

    backend = _section(doc, "backend")
    retry = _section(doc, "retry")
    engine = _section(doc, "engine")
    cost = _section(doc, "cost")
    return Config(
        backend=BackendSettings(
            kind=str(backend.get("kind", "scripted")),
            endpoint=str(backend.get("endpoint", "")),
            model=str(backend.get("model", "")),
            fixture=str(backend.get("fixture", "")),
            api_key_env=str(backend.get("api_key_env", "OPENAI_API_KEY")),
            completions_path=str(backend.get("completions_path", "/chat/completions")),
            timeout_s=float(backend.get("timeout_s", 60.0)),
        ),
        retry=RetryPolicy(
            structured=int(retry.get("structured", 3)),
            transport=int(retry.get("transport", 5)),
            backoff_base_ms=int(retry.get("backoff_base_ms", 500)),
        ),
        engine=EngineSettings(
            max_iterations=int(engine.get("max_iterations", 10)),
            temperature=float(engine.get("temperature", 0.0)),
        ),
        cost=CostRates(
            prompt_per_1k=float(cost.get("prompt_per_1k", 0.0)),
            completion_per_1k=float(cost.get("completion_per_1k", 0.0)),
        ),
        base_dir=path.parent,
    )


def create_backend(config: Config):
    """Instantiate the backend named by the configuration."""
    settings = config.backend
    if settings.kind == "scripted":
        if not settings.fixture:
            raise ValueError("scripted backend requires backend.fixture")
        fixture = Path(settings.fixture)
        if not fixture.is_absolute():
            fixture = config.base_dir / fixture
        return ScriptedBackend.from_file(fixture)
    if settings.kind in ("openai-compatible", "http"):
        if not settings.endpoint or not settings.model:
            raise ValueError("http backend requires backend.endpoint and backend.model")
        return HttpBackend(
            endpoint=settings.endpoint,
            model=settings.model,
            api_key_env=settings.api_key_env,
            completions_path=settings.completions_path,
            timeout_s=settings.timeout_s,
            retry=config.retry,
        )
    raise ValueError(f"unknown backend kind {settings.kind!r}")
