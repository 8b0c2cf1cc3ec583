"""Model inference behind one interface: text chat, vision chat and embeddings.

Every model call in the package goes through :class:`Backend`. Two
implementations ship here:

* :class:`MockBackend` replays a :class:`MockScript` and is fully
  deterministic, so the whole pipeline can be tested offline.
* :class:`OpenAICompatBackend` speaks the common HTTP chat-completions and
  embeddings wire shape.

Both share retry handling, tool-call normalisation and embedding
normalisation, which live on the base class.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, TypeVar

import httpx
import numpy as np

from adreason._textutil import find_json_object

log = logging.getLogger(__name__)

ROLES = ("controller", "captioner", "expert", "refiner", "judge")
DEFAULT_DIMENSION = 1024

T = TypeVar("T")


class BackendError(RuntimeError):
    retryable = False


class TransportError(BackendError):
    """Timeouts, connection failures and 5xx replies; retried."""

    retryable = True


class RateLimitError(TransportError):
    pass


class AuthError(BackendError):
    """Bad or missing credentials; never retried."""


class RequestValidationError(BackendError, ValueError):
    """The request itself is invalid (client-side check or a 4xx reply)."""


class MalformedResponse(BackendError):
    """The provider (or mock script) produced something we cannot use."""


class DimensionMismatch(BackendError):
    pass


# -- request / response types ------------------------------------------------


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user", "assistant"]
    content: str


@dataclass(frozen=True)
class ImageRef:
    path: str
    detail: Literal["low", "high", "auto"] = "auto"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: Mapping[str, Any]


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping[str, Any]


@dataclass
class ChatRequest:
    """One chat call.

    ``task`` is a free-form label (``"caption"``, ``"judge"``...) used for logging
    and by mock matchers; it is never sent to a provider.
    """

    messages: list[Message]
    role: str = "controller"
    images: list[ImageRef] = field(default_factory=list)
    tools: list[ToolSpec] = field(default_factory=list)
    temperature: float = 0.0
    max_tokens: int = 1024
    task: str = ""

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise RequestValidationError(f"unknown model role {self.role!r}; expected one of {ROLES}")
        if not any(m.role == "user" for m in self.messages):
            raise RequestValidationError("a chat request needs at least one user message")
        if self.max_tokens <= 0:
            raise RequestValidationError("max_tokens must be positive")

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    tool_call: ToolCall | None = None
    tokens: int = 0


# -- retry -------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff: retry ``k`` waits ``base_delay * growth**k`` seconds."""

    max_retries: int = 8
    base_delay: float = 1.0
    growth: float = 2.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.base_delay < 0:
            raise ValueError("base_delay must be >= 0")
        if self.growth <= 1:
            raise ValueError("growth must be > 1")

    def delay(self, retry_index: int) -> float:
        return self.base_delay * self.growth**retry_index

    def delays(self) -> list[float]:
        return [self.delay(k) for k in range(self.max_retries)]


def is_retryable(exc: BaseException) -> bool:
    if isinstance(exc, BackendError):
        return exc.retryable
    return isinstance(exc, (TimeoutError, ConnectionError))


def with_retry(
    action: Callable[[], T],
    policy: RetryPolicy | None = None,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run ``action`` up to ``1 + max_retries`` times.

    Non-retryable errors propagate at once; after the last attempt the last
    error propagates unchanged.
    """
    policy = policy or RetryPolicy()
    retry = 0
    while True:
        try:
            return action()
        except Exception as exc:
            if not is_retryable(exc) or retry >= policy.max_retries:
                raise
            delay = policy.delay(retry)
            log.warning("attempt %d failed (%s); retrying in %.2fs", retry + 1, exc, delay)
            sleep(delay)
            retry += 1


# -- tool-call text parsing --------------------------------------------------

_ACTION_LINE = re.compile(r"(?im)^\s*(?:action\s*:\s*)?([a-z_][a-z0-9_]*)\s*[(:]?\s*(\{.*\})\s*\)?\s*$")


def parse_text_tool_call(text: str, allowed: Iterable[str] | None = None) -> ToolCall | None:
    """Recover a tool call written as text.

    Two shapes are accepted: a JSON object with ``tool``/``name``/``action`` plus
    ``arguments``/``args``, or a line ``ACTION: tool_name {json args}`` (also
    ``tool_name({...})``).
    """
    names = set(allowed) if allowed is not None else None

    def ok(name: object) -> bool:
        return isinstance(name, str) and (names is None or name in names)

    for m in _ACTION_LINE.finditer(text):
        name = m.group(1)
        if not ok(name):
            continue
        args = find_json_object(m.group(2))
        if args is not None:
            return ToolCall(name, args)
    obj = find_json_object(text)
    if obj is not None:
        name = obj.get("tool") or obj.get("name") or obj.get("action")
        args = obj.get("arguments", obj.get("args", obj.get("parameters", {})))
        if ok(name) and isinstance(args, dict):
            return ToolCall(name, args)
    return None


# -- backend base ------------------------------------------------------------


class Backend(ABC):
    """Shared front for all providers.

    Subclasses implement :meth:`_chat` and :meth:`_embed`; this class adds
    retries, tool-call normalisation, L2 normalisation of embeddings and
    per-role call counters. Handles are safe to share between threads.
    """

    def __init__(
        self,
        *,
        dimension: int = DEFAULT_DIMENSION,
        retry: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.retry = retry or RetryPolicy()
        self._sleep = sleep
        self._counter_lock = threading.Lock()
        self.calls: Counter[str] = Counter()
        self.tokens = 0

    @abstractmethod
    def _chat(self, request: ChatRequest) -> ChatResponse: ...

    @abstractmethod
    def _embed(self, texts: list[str]) -> Sequence[Sequence[float]]: ...

    def chat(self, request: ChatRequest) -> ChatResponse:
        response = with_retry(lambda: self._chat(request), self.retry, sleep=self._sleep)
        if response.tool_call is None and request.tools:
            call = parse_text_tool_call(response.text, [t.name for t in request.tools])
            if call is not None:
                response = replace(response, tool_call=call)
        with self._counter_lock:
            self.calls[request.role] += 1
            self.tokens += response.tokens
        return response

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Embed ``texts``; returns an ``(n, dimension)`` array of unit vectors."""
        texts = list(texts)
        if not texts:
            raise ValueError("embed() needs at least one text")
        if any(not t.strip() for t in texts):
            raise ValueError("cannot embed an empty text")
        raw = with_retry(lambda: self._embed(texts), self.retry, sleep=self._sleep)
        try:
            arr = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise MalformedResponse(f"embedding payload is not numeric: {exc}") from exc
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise MalformedResponse(f"expected {len(texts)} vectors, got shape {arr.shape}")
        if arr.shape[1] != self.dimension:
            raise DimensionMismatch(f"expected dimension {self.dimension}, got {arr.shape[1]}")
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise MalformedResponse("embedding backend returned a zero or non-finite vector")
        with self._counter_lock:
            self.calls["embed"] += 1
        return arr / norms

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]


# -- mock --------------------------------------------------------------------

_MOCK_ERRORS: dict[str, type[BackendError]] = {
    "transport": TransportError,
    "rate_limit": RateLimitError,
    "auth": AuthError,
    "malformed": MalformedResponse,
}


@dataclass
class MockRule:
    """A matcher plus the canned reply it produces.

    All given matcher fields must hold: ``role`` and ``task`` compare exactly,
    every ``contains`` string must occur in the concatenated message text,
    ``regex`` must search-match it, and ``image_contains`` must occur in at
    least one attached image path. ``error`` makes the rule raise instead of
    replying (for fault injection). ``repeat`` rules are never consumed.
    """

    response: ChatResponse | None = None
    role: str | None = None
    task: str | None = None
    contains: tuple[str, ...] = ()
    regex: str | None = None
    image_contains: str | None = None
    error: str | None = None
    repeat: bool = False
    responder: Callable[[ChatRequest], ChatResponse | str] | None = None

    def __post_init__(self) -> None:
        if isinstance(self.contains, str):
            self.contains = (self.contains,)
        if self.error is not None and self.error not in _MOCK_ERRORS:
            raise ValueError(f"unknown mock error kind {self.error!r}")
        if self.response is None and self.error is None and self.responder is None:
            raise ValueError("a mock rule needs a response, an error or a responder")

    def matches(self, request: ChatRequest) -> bool:
        if self.role is not None and request.role != self.role:
            return False
        if self.task is not None and request.task != self.task:
            return False
        text = request.text
        if any(s not in text for s in self.contains):
            return False
        if self.regex is not None and not re.search(self.regex, text):
            return False
        if self.image_contains is not None and not any(
            self.image_contains in img.path for img in request.images
        ):
            return False
        return True

    def reply(self, request: ChatRequest) -> ChatResponse:
        if self.error is not None:
            raise _MOCK_ERRORS[self.error](f"scripted {self.error} failure")
        if self.responder is not None:
            out = self.responder(request)
            return ChatResponse(out) if isinstance(out, str) else out
        assert self.response is not None
        return self.response

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MockRule:
        match = data.get("match", {})
        resp = data.get("response")
        response = None
        if resp is not None:
            if isinstance(resp, str):
                resp = {"text": resp}
            call = resp.get("tool_call")
            response = ChatResponse(
                text=resp.get("text", ""),
                finish_reason=resp.get("finish_reason", "tool_calls" if call else "stop"),
                tool_call=ToolCall(call["name"], dict(call.get("arguments", {}))) if call else None,
            )
        contains = match.get("contains", ())
        return cls(
            response=response,
            role=match.get("role"),
            task=match.get("task"),
            contains=(contains,) if isinstance(contains, str) else tuple(contains),
            regex=match.get("regex"),
            image_contains=match.get("image_contains"),
            error=data.get("error"),
            repeat=bool(data.get("repeat", False)),
        )

    def to_dict(self) -> dict[str, Any]:
        if self.responder is not None:
            raise ValueError("rules with a Python responder cannot be serialised")
        match = {
            k: v
            for k, v in {
                "role": self.role,
                "task": self.task,
                "contains": list(self.contains) or None,
                "regex": self.regex,
                "image_contains": self.image_contains,
            }.items()
            if v is not None
        }
        out: dict[str, Any] = {"match": match}
        if self.response is not None:
            resp: dict[str, Any] = {"text": self.response.text}
            if self.response.tool_call is not None:
                resp["tool_call"] = {
                    "name": self.response.tool_call.name,
                    "arguments": dict(self.response.tool_call.arguments),
                }
            out["response"] = resp
        if self.error is not None:
            out["error"] = self.error
        if self.repeat:
            out["repeat"] = True
        return out


@dataclass
class MockScript:
    """Scripted replies for :class:`MockBackend`.

    File format (JSON)::

        {
          "mode": "ordered" | "first_match",
          "dimension": 1024,
          "embedding_fallback": "error" | "hash",
          "embeddings": {"some text": [0.1, ...]},
          "rules": [
            {"match": {"role": "controller", "task": "controller", "contains": ["..."]},
             "response": {"text": "thought", "tool_call": {"name": "finish", "arguments": {...}}},
             "repeat": false},
            {"match": {"task": "ocr"}, "error": "transport"}
          ]
        }

    In ``ordered`` mode each request consumes the earliest unconsumed rule that
    matches it (``repeat`` rules stay live); this mode is meant for a single
    consumer. In ``first_match`` mode rules are never consumed and the mock is
    safe to share between threads. A request no rule matches is an error.
    """

    rules: list[MockRule] = field(default_factory=list)
    mode: Literal["ordered", "first_match"] = "ordered"
    embeddings: dict[str, list[float]] = field(default_factory=dict)
    embedding_fallback: Literal["error", "hash"] = "error"
    dimension: int = DEFAULT_DIMENSION

    def __post_init__(self) -> None:
        if self.mode not in ("ordered", "first_match"):
            raise ValueError(f"unknown mock mode {self.mode!r}")
        if self.embedding_fallback not in ("error", "hash"):
            raise ValueError(f"unknown embedding fallback {self.embedding_fallback!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MockScript:
        return cls(
            rules=[MockRule.from_dict(r) for r in data.get("rules", [])],
            mode=data.get("mode", "ordered"),
            embeddings={k: list(v) for k, v in data.get("embeddings", {}).items()},
            embedding_fallback=data.get("embedding_fallback", "error"),
            dimension=int(data.get("dimension", DEFAULT_DIMENSION)),
        )

    @classmethod
    def load(cls, path: str | Path) -> MockScript:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "dimension": self.dimension,
            "embedding_fallback": self.embedding_fallback,
            "embeddings": self.embeddings,
            "rules": [r.to_dict() for r in self.rules],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def hashed_embedding(text: str, dimension: int) -> np.ndarray:
    """Deterministic bag-of-words vector via signed feature hashing.

    Texts sharing words get positive cosine similarity, which is enough to
    make offline retrieval behave plausibly.
    """
    vec = np.zeros(dimension)
    for tok in re.findall(r"\w+", text.lower()):
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(digest[:4], "little") % dimension
        vec[idx] += 1.0 if digest[4] & 1 else -1.0
    if not np.any(vec):
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=4).digest()
        vec[int.from_bytes(digest, "little") % dimension] = 1.0
    return vec


class MockBackend(Backend):
    """Deterministic scripted backend; every request is appended to ``requests``."""

    def __init__(
        self,
        script: MockScript | None = None,
        *,
        retry: RetryPolicy | None = None,
        sleep: Callable[[float], None] = lambda _s: None,
    ) -> None:
        self.script = script or MockScript()
        super().__init__(dimension=self.script.dimension, retry=retry, sleep=sleep)
        self._consumed = [False] * len(self.script.rules)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> MockBackend:
        return cls(MockScript.load(path), **kwargs)

    def _chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            chosen = None
            for i, rule in enumerate(self.script.rules):
                if self._consumed[i] or not rule.matches(request):
                    continue
                chosen = rule
                if self.script.mode == "ordered" and not rule.repeat:
                    self._consumed[i] = True
                break
        if chosen is None:
            raise MalformedResponse(
                f"unmatched request (role={request.role!r}, task={request.task!r}): "
                f"{request.text[:120]!r}"
            )
        return chosen.reply(request)

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            vec = self.script.embeddings.get(text)
            if vec is None:
                vec = self.script.embeddings.get(text.strip())
            if vec is None:
                if self.script.embedding_fallback != "hash":
                    raise MalformedResponse(f"no scripted embedding for {text[:60]!r}")
                vec = hashed_embedding(text, self.dimension)
            out.append(np.asarray(vec, dtype=np.float64))
        return out

    @property
    def unconsumed(self) -> list[MockRule]:
        return [r for r, used in zip(self.script.rules, self._consumed) if not used and not r.repeat]


# -- HTTP provider -----------------------------------------------------------


def _image_part(img: ImageRef) -> dict[str, Any]:
    path = Path(img.path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise RequestValidationError(f"cannot read image {path}: {exc}") from exc
    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    url = f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"
    return {"type": "image_url", "image_url": {"url": url, "detail": img.detail}}


def chat_completion_body(request: ChatRequest, model: str) -> dict[str, Any]:
    """Translate a request into a chat-completions JSON body.

    Images are attached to the last user message as base64 data URLs.
    """
    last_user = max(i for i, m in enumerate(request.messages) if m.role == "user")
    messages: list[dict[str, Any]] = []
    for i, msg in enumerate(request.messages):
        if i == last_user and request.images:
            parts: list[dict[str, Any]] = [{"type": "text", "text": msg.content}]
            parts.extend(_image_part(img) for img in request.images)
            messages.append({"role": msg.role, "content": parts})
        else:
            messages.append({"role": msg.role, "content": msg.content})
    body: dict[str, Any] = {
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    if request.tools:
        body["tools"] = [
            {
                "type": "function",
                "function": {"name": t.name, "description": t.description, "parameters": dict(t.parameters)},
            }
            for t in request.tools
        ]
        body["tool_choice"] = "auto"
    return body


def parse_chat_completion(payload: Mapping[str, Any]) -> ChatResponse:
    try:
        choice = payload["choices"][0]
        message = choice["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"chat payload lacks choices[0].message: {exc}") from exc
    text = message.get("content") or ""
    if isinstance(text, list):
        text = "".join(p.get("text", "") for p in text if isinstance(p, dict))
    call = None
    tool_calls = message.get("tool_calls") or []
    if tool_calls:
        fn = tool_calls[0].get("function", {})
        raw_args = fn.get("arguments", "{}")
        try:
            args = json.loads(raw_args) if isinstance(raw_args, str) else dict(raw_args)
        except ValueError as exc:
            raise MalformedResponse(f"tool-call arguments are not JSON: {raw_args!r}") from exc
        if not isinstance(args, dict) or not fn.get("name"):
            raise MalformedResponse("tool call without a name or object arguments")
        call = ToolCall(fn["name"], args)
    usage = payload.get("usage") or {}
    return ChatResponse(
        text=text,
        finish_reason=choice.get("finish_reason") or "stop",
        tool_call=call,
        tokens=int(usage.get("total_tokens", 0) or 0),
    )


class OpenAICompatBackend(Backend):
    """Client for any provider exposing ``/chat/completions`` and ``/embeddings``.

    ``models`` maps each role to a model name; roles missing from it fall back
    to the ``controller`` model.
    """

    def __init__(
        self,
        *,
        api_key: str,
        models: Mapping[str, str],
        embedding_model: str,
        base_url: str = "https://api.openai.com/v1",
        dimension: int = DEFAULT_DIMENSION,
        timeout: float = 120.0,
        retry: RetryPolicy | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        super().__init__(dimension=dimension, retry=retry, sleep=sleep)
        if not api_key:
            raise AuthError("no API key configured")
        if "controller" not in models:
            raise ValueError("models must define at least the 'controller' role")
        self.models = dict(models)
        self.embedding_model = embedding_model
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    @classmethod
    def from_env(cls, config_path: str | Path | None = None, **kwargs: Any) -> OpenAICompatBackend:
        """Build from ``ADREASON_*`` environment variables, optionally seeded by a JSON file.

        Keys: ``api_key``, ``base_url``, ``embedding_model``, ``dimension`` and
        ``models`` (role -> model). Environment variables win:
        ``ADREASON_API_KEY``, ``ADREASON_BASE_URL``, ``ADREASON_EMBED_MODEL``,
        ``ADREASON_EMBED_DIM``, ``ADREASON_MODEL_<ROLE>``.
        """
        cfg: dict[str, Any] = {}
        if config_path is not None:
            cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        models = dict(cfg.get("models", {}))
        for role in ROLES:
            env = os.environ.get(f"ADREASON_MODEL_{role.upper()}")
            if env:
                models[role] = env
        models.setdefault("controller", "gpt-4o")
        return cls(
            api_key=os.environ.get("ADREASON_API_KEY", cfg.get("api_key", "")),
            base_url=os.environ.get("ADREASON_BASE_URL", cfg.get("base_url", "https://api.openai.com/v1")),
            embedding_model=os.environ.get("ADREASON_EMBED_MODEL", cfg.get("embedding_model", "bge-m3")),
            dimension=int(os.environ.get("ADREASON_EMBED_DIM", cfg.get("dimension", DEFAULT_DIMENSION))),
            models=models,
            **kwargs,
        )

    def _post(self, path: str, body: Mapping[str, Any]) -> Mapping[str, Any]:
        try:
            resp = self._client.post(f"{self.base_url}{path}", json=body, headers=self._headers)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransportError(f"{path}: {exc}") from exc
        code = resp.status_code
        if code in (401, 403):
            raise AuthError(f"{path}: HTTP {code}")
        if code == 429:
            raise RateLimitError(f"{path}: HTTP 429")
        if code >= 500:
            raise TransportError(f"{path}: HTTP {code}")
        if code >= 400:
            raise RequestValidationError(f"{path}: HTTP {code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{path}: body is not JSON") from exc

    def _chat(self, request: ChatRequest) -> ChatResponse:
        model = self.models.get(request.role, self.models["controller"])
        return parse_chat_completion(self._post("/chat/completions", chat_completion_body(request, model)))

    def _embed(self, texts: list[str]) -> list[list[float]]:
        payload = self._post("/embeddings", {"model": self.embedding_model, "input": texts})
        try:
            rows = sorted(payload["data"], key=lambda d: d.get("index", 0))
            return [row["embedding"] for row in rows]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"embedding payload lacks data[].embedding: {exc}") from exc
