"""Request types, retry policy and the role-level operations.

Every model role (tagger, captioner, analyzer, reasoner) speaks the same
chat-completion protocol; the role only changes the fixed instruction
preamble and how the reply is parsed.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Protocol, TypeVar, runtime_checkable

import numpy as np

from ..core import Caption, ImageRef, TagSet
from ..errors import BackendError, InvalidInput, ProtocolError, TransportError, ZeroVectorError

log = logging.getLogger(__name__)

ROLES = ("tagger", "captioner", "analyzer", "reasoner")
API_KEY_ENV = "SATIREDECODER_API_KEY"

TAGGER_PREAMBLE = (
    "You are an image tagging model. List every distinct object, person, animal "
    "and salient item visible in the image as short lowercase noun phrases, "
    "separated by commas. Output only the list."
)
CAPTIONER_PREAMBLE = (
    "You are an image captioning model. Describe the image in one fluent, "
    "factual sentence. Output only the sentence."
)
ANALYZER_PREAMBLES = {
    "local": (
        "You compare the objects detected in two contrasting scenes of one image. "
        "Scene A is the normal scene and scene B the conflicting scene. Describe "
        "which objects appear, disappear or change between A and B, and which "
        "differences look deliberate or incongruous. Answer in at most three sentences."
    ),
    "global": (
        "You compare the descriptions of two contrasting scenes of one image. "
        "Scene A is the normal scene and scene B the conflicting scene. Describe "
        "how the situation changes from A to B and what contradiction or irony "
        "the contrast reveals. Answer in at most three sentences."
    ),
}


@dataclass(frozen=True)
class Attachment:
    media_type: str
    data: bytes = field(repr=False)
    name: str = ""

    @classmethod
    def from_image(cls, image: ImageRef) -> "Attachment":
        return cls(media_type=image.media_type, data=image.data, name=image.id)

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user"]
    text: str
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise InvalidInput(f"unsupported message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None
    # which pipeline role issued the request; used by mocks, never sent on the wire
    role: str = "reasoner"

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise InvalidInput("a chat request needs at least one user message")
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidInput(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise InvalidInput("max_tokens must be positive")

    @property
    def user_text(self) -> str:
        return "\n".join(m.text for m in self.messages if m.role == "user")

    @property
    def attachments(self) -> list[Attachment]:
        return [a for m in self.messages for a in m.attachments]

    def wire_body(self, model: str) -> dict[str, Any]:
        """JSON body as sent over HTTP; images become base64 data URLs."""
        messages = []
        for m in self.messages:
            content: list[dict[str, Any]] = [{"type": "text", "text": m.text}]
            content += [{"type": "image_url", "image_url": {"url": a.data_url()}} for a in m.attachments]
            messages.append({"role": m.role, "content": content})
        body: dict[str, Any] = {
            "model": model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body

    def canonical_bytes(self) -> bytes:
        """Stable serialization used for cache keys; attachments enter by digest."""
        doc = {
            "role": self.role,
            "messages": [
                {
                    "role": m.role,
                    "text": m.text,
                    "attachments": [[a.media_type, hashlib.sha256(a.data).hexdigest()] for a in m.attachments],
                }
                for m in self.messages
            ],
            "temperature": repr(float(self.temperature)),
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise InvalidInput("embedding must have dim >= 1")
        if not any(values):
            raise ZeroVectorError("embedding is all zeros")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model_name: str
    api_key: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    retry_backoff: float = 1.0

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise InvalidInput("timeout must be > 0")
        if self.max_retries < 0:
            raise InvalidInput("max_retries must be >= 0")
        if self.retry_backoff < 0:
            raise InvalidInput("retry_backoff must be >= 0")

    def resolved_api_key(self) -> str | None:
        return os.environ.get(API_KEY_ENV) or self.api_key


@runtime_checkable
class ChatBackend(Protocol):
    model_name: str

    def complete(self, request: ChatRequest) -> str: ...


@runtime_checkable
class EmbedderClient(Protocol):
    model_name: str
    supports_tokens: bool

    def embed_sentence(self, text: str) -> EmbeddingVector: ...

    def embed_tokens(self, text: str) -> list[tuple[str, EmbeddingVector]]: ...


def _retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportError):
        return True
    if isinstance(exc, BackendError):
        return exc.retryable
    return False


T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff: float = 1.0

    def delays(self) -> list[float]:
        """Sleep before retry k is backoff * 2**k."""
        return [self.backoff * 2**k for k in range(self.max_retries)]

    def call(self, fn: Callable[[], T], sleep: Callable[[float], None] = time.sleep) -> tuple[T, int]:
        """Run ``fn`` with retries on transient errors; returns (value, attempts)."""
        delays = self.delays()
        attempt = 0
        while True:
            attempt += 1
            try:
                return fn(), attempt
            except Exception as exc:
                if not _retryable(exc) or attempt > self.max_retries:
                    if isinstance(exc, TransportError):
                        exc.attempts = attempt
                    raise
                delay = delays[attempt - 1]
                log.debug("retrying after %s (attempt %d, sleeping %.2fs)", exc, attempt, delay)
                sleep(delay)


@dataclass
class CallRecord:
    role: str
    key: str
    attempts: int
    ok: bool


class RetryingBackend:
    """Wraps a backend with a retry policy and records attempts per call."""

    def __init__(self, inner: ChatBackend, policy: RetryPolicy, sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.policy = policy
        self.model_name = inner.model_name
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []

    def complete(self, request: ChatRequest) -> str:
        attempts = 0

        def once() -> str:
            nonlocal attempts
            attempts += 1
            return self.inner.complete(request)

        key = _request_label(request)
        try:
            text, _ = self.policy.call(once, sleep=self._sleep)
        except Exception:
            self._record(CallRecord(request.role, key, attempts, ok=False))
            raise
        self._record(CallRecord(request.role, key, attempts, ok=True))
        return text

    def _record(self, rec: CallRecord) -> None:
        with self._lock:
            self.calls.append(rec)

    @property
    def retries(self) -> int:
        with self._lock:
            return sum(c.attempts - 1 for c in self.calls)


def _request_label(request: ChatRequest) -> str:
    names = [a.name for a in request.attachments if a.name]
    return ",".join(names) if names else request.digest[:12]


def parse_tag_list(text: str) -> TagSet:
    """Split on commas and newlines, normalize, drop empties."""
    parts = [p for line in text.splitlines() for p in line.split(",")]
    # tolerate bullet-list replies
    return TagSet.of(p.strip().lstrip("-*•").strip() for p in parts)


def _single_image_request(image: ImageRef, preamble: str, role: str) -> ChatRequest:
    return ChatRequest(
        messages=(
            Message("system", preamble),
            Message("user", "Image:", (Attachment.from_image(image),)),
        ),
        temperature=0.0,
        max_tokens=256,
        role=role,
    )


def tag_image(client: ChatBackend, image: ImageRef) -> TagSet:
    """Run the local-entity tagger on one image; the result may be empty."""
    return parse_tag_list(client.complete(_single_image_request(image, TAGGER_PREAMBLE, "tagger")))


def caption_image(client: ChatBackend, image: ImageRef) -> Caption:
    text = client.complete(_single_image_request(image, CAPTIONER_PREAMBLE, "captioner"))
    if not text.strip():
        raise ProtocolError("captioner returned empty text")
    return Caption(text)


def analyzer_request(side_a: str, side_b: str, mode: str) -> ChatRequest:
    if mode not in ANALYZER_PREAMBLES:
        raise InvalidInput(f"mode must be 'local' or 'global', got {mode!r}")
    if not side_a.strip() or not side_b.strip():
        raise InvalidInput("both sides of a discrepancy analysis must be non-empty")
    return ChatRequest(
        messages=(
            Message("system", ANALYZER_PREAMBLES[mode]),
            Message("user", f"<A>\n{side_a}\n</A>\n<B>\n{side_b}\n</B>"),
        ),
        temperature=0.0,
        max_tokens=256,
        role="analyzer",
    )


def analyze_discrepancy(client: ChatBackend, side_a: str, side_b: str, mode: str) -> str:
    text = client.complete(analyzer_request(side_a, side_b, mode)).strip()
    if not text:
        raise ProtocolError("analyzer returned empty text")
    return text


def chat_complete(client: ChatBackend, request: ChatRequest) -> str:
    return client.complete(request)


def embed(
    client: EmbedderClient, text: str, granularity: str = "sentence"
) -> EmbeddingVector | list[tuple[str, EmbeddingVector]]:
    if not text.strip():
        raise InvalidInput("cannot embed empty text")
    if granularity == "sentence":
        return client.embed_sentence(text)
    if granularity == "tokens":
        if not client.supports_tokens:
            raise InvalidInput(f"embedder {client.model_name!r} has no token granularity")
        return client.embed_tokens(text)
    raise InvalidInput(f"unknown granularity {granularity!r}")


def cosine(a: EmbeddingVector | np.ndarray, b: EmbeddingVector | np.ndarray) -> float:
    x = a.array() if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=np.float64)
    y = b.array() if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVectorError("cosine of a zero vector")
    return float(np.dot(x, y) / (nx * ny))


def join_url(base_url: str, path: str) -> str:
    return base_url.rstrip("/") + "/" + path.lstrip("/")


class RetryingEmbedder:
    """Embedder counterpart of :class:`RetryingBackend`."""

    def __init__(self, inner: EmbedderClient, policy: RetryPolicy, sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.policy = policy
        self.model_name = inner.model_name
        self.supports_tokens = inner.supports_tokens
        self._sleep = sleep
        self._lock = threading.Lock()
        self.attempts = 0

    def _call(self, fn: Callable[[], T]) -> T:
        def once() -> T:
            with self._lock:
                self.attempts += 1
            return fn()

        value, _ = self.policy.call(once, sleep=self._sleep)
        return value

    def embed_sentence(self, text: str) -> EmbeddingVector:
        return self._call(lambda: self.inner.embed_sentence(text))

    def embed_tokens(self, text: str) -> list[tuple[str, EmbeddingVector]]:
        return self._call(lambda: self.inner.embed_tokens(text))
