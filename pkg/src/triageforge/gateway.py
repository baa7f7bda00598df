"""Provider-agnostic chat-completion gateway.

Two backends: a remote HTTP chat-completion endpoint, and a scripted
backend that replays canned responses so every other module can be
exercised deterministically and offline.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .errors import (
    EmptyCompletionError,
    GatewayUnavailableError,
    PreconditionError,
    ScriptExhaustedError,
    UnboundSlotError,
)


class Role(str, Enum):
    SYSTEM = "system"
    ASSISTANT = "assistant"
    USER = "user"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        if not self.content:
            raise PreconditionError("ChatMessage.content must be non-empty")
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 2048
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise PreconditionError("ChatRequest.messages must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise PreconditionError("temperature must be in [0, 2]")
        if self.max_output_tokens < 1:
            raise PreconditionError("max_output_tokens must be positive")
        saw_assistant = False
        for msg in self.messages:
            if msg.role is Role.ASSISTANT:
                saw_assistant = True
            elif msg.role is Role.SYSTEM and saw_assistant:
                raise PreconditionError(
                    "system message must precede assistant messages"
                )

    def latest_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role is Role.USER:
                return msg.content
        return ""


@dataclass
class AuditEntry:
    tag: str
    prompt_chars: int
    response_chars: int
    latency_s: float


class BackendKind(str, Enum):
    REMOTE_HTTP = "remote_http"
    SCRIPTED = "scripted"


@dataclass
class ScriptEntry:
    """One canned response, guarded by an optional matcher.

    Matcher fields are AND-ed; an entry with no matcher fields matches
    everything. ``turn_index`` counts prior calls carrying the same tag.
    """

    response: str
    tag: Optional[str] = None
    user_contains: Optional[str] = None
    turn_index: Optional[int] = None
    # Echo entries return the latest user message instead of fixed text;
    # handy as a catch-all for pure formatting passes in fixtures.
    echo_user: bool = False

    def matches(self, request: ChatRequest, tag_turn: int) -> bool:
        if self.tag is not None and self.tag != request.tag:
            return False
        if self.user_contains is not None:
            if self.user_contains not in request.latest_user_content():
                return False
        if self.turn_index is not None and self.turn_index != tag_turn:
            return False
        return True

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptEntry":
        return cls(
            response=data.get("response", ""),
            tag=data.get("tag"),
            user_contains=data.get("user_contains"),
            turn_index=data.get("turn_index"),
            echo_user=bool(data.get("echo_user", False)),
        )


class ScriptedBackend:
    """Ordered first-match-wins script. Never touches the network."""

    kind = BackendKind.SCRIPTED

    def __init__(self, entries: Sequence[ScriptEntry]):
        self.entries = list(entries)
        self._tag_turns: dict[str, int] = {}

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls([ScriptEntry.from_dict(item) for item in raw])

    def complete(self, request: ChatRequest) -> str:
        turn = self._tag_turns.get(request.tag, 0)
        for entry in self.entries:
            if entry.matches(request, turn):
                self._tag_turns[request.tag] = turn + 1
                if entry.echo_user:
                    return request.latest_user_content()
                return entry.response
        raise ScriptExhaustedError(
            f"no script entry matches tag={request.tag!r} turn={turn} "
            f"user={request.latest_user_content()[:80]!r}"
        )


class RemoteHttpBackend:
    """Chat-completion HTTP endpoint speaking the usual JSON body shape."""

    kind = BackendKind.REMOTE_HTTP

    def __init__(self, base_url: str, auth_token_env: str = "TRIAGEFORGE_API_TOKEN",
                 timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.auth_token_env = auth_token_env
        self.timeout_s = timeout_s

    def complete(self, request: ChatRequest) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": request.model_id,
            "messages": [
                {"role": m.role.value, "content": m.content}
                for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body, headers=headers, timeout=self.timeout_s,
            )
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise GatewayUnavailableError(str(exc)) from exc


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 200


class Gateway:
    """Front door for every model call; keeps an append-only audit log."""

    def __init__(self, backend, sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self._sleep = sleep
        self._lock = threading.Lock()
        self.audit_log: list[AuditEntry] = []

    def complete_chat(self, request: ChatRequest) -> str:
        started = time.monotonic()
        text = self.backend.complete(request)
        if not text:
            raise EmptyCompletionError(f"empty completion for tag={request.tag!r}")
        entry = AuditEntry(
            tag=request.tag,
            prompt_chars=sum(len(m.content) for m in request.messages),
            response_chars=len(text),
            latency_s=time.monotonic() - started,
        )
        with self._lock:
            self.audit_log.append(entry)
        return text

    def with_retry(self, request: ChatRequest,
                   policy: RetryPolicy = RetryPolicy()) -> str:
        # Retries cover transport failures only; content-level errors
        # (script exhaustion, empty output) surface immediately so
        # scripted runs stay deterministic.
        if policy.max_attempts < 1:
            raise PreconditionError("max_attempts must be >= 1")
        last_exc = None
        for attempt in range(policy.max_attempts):
            try:
                return self.complete_chat(request)
            except GatewayUnavailableError as exc:
                last_exc = exc
                if attempt + 1 < policy.max_attempts:
                    self._sleep(policy.backoff_base_ms * (2 ** attempt) / 1000.0)
        raise GatewayUnavailableError(
            f"all {policy.max_attempts} attempts failed: {last_exc}",
            attempts=policy.max_attempts,
        )


_SLOT_RE = re.compile(r"<([A-Za-z][A-Za-z0-9 _-]*)>")


def render_template(template: str, bindings: dict[str, str]) -> str:
    """Replace every ``<slot name>`` marker with its binding, verbatim."""

    def _substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise UnboundSlotError(name)
        return bindings[name]

    return _SLOT_RE.sub(_substitute, template)
