"""Chat-with-images backends: live HTTP, scripted, and record/replay.

The rest of the pipeline only sees ``complete(messages, stage) -> str``, so
everything except the live model call is deterministic and testable offline.
"""

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests


class BackendError(Exception):
    """Transport or protocol failure while talking to the model server."""


class ReplayMissError(BackendError):
    """Playback-mode request whose digest has no recorded response."""


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png: bytes


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")
        if not self.parts:
            raise ValueError("chat message needs at least one part")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role=role, parts=(TextPart(text),))


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "local-vlm"
    temperature: float = 0.1
    top_p: float = 0.95
    max_retries: int = 2
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_retries < 0:
            raise ValueError("max retries must be >= 0")


def message_digest(messages: list[ChatMessage], stage: str) -> str:
    """Stable content digest used as the replay key."""
    canon = {"stage": stage, "messages": []}
    for msg in messages:
        parts = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                parts.append({"text": part.text})
            else:
                parts.append({"png_sha256": hashlib.sha256(part.png).hexdigest()})
        canon["messages"].append({"role": msg.role, "parts": parts})
    payload = json.dumps(canon, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class ChatBackend:
    """Base interface; subclasses implement ``complete``."""

    max_retries: int = 2

    def complete(self, messages: list[ChatMessage], stage: str) -> str:
        raise NotImplementedError


class HttpChatBackend(ChatBackend):
    """Speaks the open chat-completions wire shape over HTTP POST."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.max_retries = config.max_retries

    def complete(self, messages: list[ChatMessage], stage: str) -> str:
        body = {
            "model": self.config.model,
            "messages": [self._wire_message(m) for m in messages],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
        }
        try:
            resp = requests.post(self.config.endpoint, json=body, timeout=self.config.timeout_s)
        except requests.RequestException as exc:
            raise BackendError(f"{stage} request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"{stage} request returned HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{stage} response is not chat-completions shaped: {exc}") from exc
        if not isinstance(content, str):
            raise BackendError(f"{stage} response content is not text")
        return content

    @staticmethod
    def _wire_message(message: ChatMessage) -> dict:
        content = []
        for part in message.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                b64 = base64.b64encode(part.png).decode("ascii")
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                )
        return {"role": message.role, "content": content}


class ScriptedBackend(ChatBackend):
    """Canned responses per stage; a list is consumed in order (last repeats)."""

    def __init__(self, responses: dict[str, str | list[str]], max_retries: int = 2):
        self.max_retries = max_retries
        self._responses = {k: list(v) if isinstance(v, list) else [v] for k, v in responses.items()}
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[tuple[str, list[ChatMessage]]] = []

    def complete(self, messages: list[ChatMessage], stage: str) -> str:
        with self._lock:
            self.calls.append((stage, list(messages)))
            if stage not in self._responses:
                raise BackendError(f"scripted backend has no responses for stage {stage!r}")
            seq = self._responses[stage]
            i = self._cursor.get(stage, 0)
            self._cursor[stage] = i + 1
            return seq[min(i, len(seq) - 1)]


@dataclass
class ReplayStore:
    """Directory of JSON records {stage, request_digest, response_text}."""

    root: Path
    _records: dict[tuple[str, str], str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)
        for path in sorted(self.root.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                rec = json.load(fh)
            self._records[(rec["stage"], rec["request_digest"])] = rec["response_text"]

    def put(self, stage: str, digest: str, response_text: str) -> None:
        with self._lock:
            self._records[(stage, digest)] = response_text
            path = self.root / f"{stage}-{digest[:20]}.json"
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(
                    {"stage": stage, "request_digest": digest, "response_text": response_text},
                    fh,
                    indent=2,
                )

    def get(self, stage: str, digest: str) -> Optional[str]:
        return self._records.get((stage, digest))


class ReplayBackend(ChatBackend):
    """Record responses from an inner backend, or play them back by digest."""

    RECORD = "record"
    PLAY = "play"

    def __init__(self, store: ReplayStore, mode: str, inner: ChatBackend | None = None):
        if mode not in (self.RECORD, self.PLAY):
            raise ValueError(f"replay mode must be record or play, got {mode!r}")
        if mode == self.RECORD and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.store = store
        self.mode = mode
        self.inner = inner
        self.max_retries = inner.max_retries if inner is not None else 2

    def complete(self, messages: list[ChatMessage], stage: str) -> str:
        digest = message_digest(messages, stage)
        if self.mode == self.PLAY:
            hit = self.store.get(stage, digest)
            if hit is None:
                raise ReplayMissError(f"no recorded response for stage {stage}, digest {digest[:12]}")
            return hit
        response = self.inner.complete(messages, stage)
        self.store.put(stage, digest, response)
        return response
