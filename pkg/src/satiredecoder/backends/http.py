"""HTTP clients for the JSON wire protocol (see docs/protocol.md).

A client performs exactly one attempt per call; wrap it in
:class:`~satiredecoder.backends.base.RetryingBackend` for retries.
"""

from __future__ import annotations

import time
from typing import Any

import httpx

from ..errors import BackendError, ProtocolError, TransportError
from .base import BackendConfig, ChatRequest, EmbeddingVector, join_url

CHAT_PATH = "/chat"
EMBED_PATH = "/embed"


class _HttpClient:
    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.model_name = config.model_name
        headers = {"Content-Type": "application/json"}
        key = config.resolved_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        # httpx.Client keeps a connection pool and is safe to share between threads
        self._client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def ping(self) -> None:
        """Raise TransportError unless the server answers an HTTP request."""
        start = time.monotonic()
        try:
            self._client.get(self.config.base_url)
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.config.base_url} unreachable: {exc}", elapsed=time.monotonic() - start) from exc

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        url = join_url(self.config.base_url, path)
        start = time.monotonic()
        try:
            resp = self._client.post(url, json=body)
        except httpx.TimeoutException as exc:
            elapsed = time.monotonic() - start
            raise TransportError(f"timeout after {elapsed:.2f}s calling {url}", elapsed=elapsed) from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__} calling {url}: {exc}", elapsed=time.monotonic() - start) from exc
        if not resp.is_success:
            try:
                message = str(resp.json().get("error", resp.text))
            except ValueError:
                message = resp.text
            raise BackendError(f"HTTP {resp.status_code} from {url}: {message}", status=resp.status_code)
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {url}") from exc
        if not isinstance(payload, dict):
            raise ProtocolError(f"response from {url} is not a JSON object")
        return payload


class HttpChatBackend(_HttpClient):
    def complete(self, request: ChatRequest) -> str:
        payload = self._post(CHAT_PATH, request.wire_body(self.model_name))
        text = payload.get("text")
        if not isinstance(text, str):
            raise ProtocolError("response has no string field 'text'")
        return text


class HttpEmbedder(_HttpClient):
    supports_tokens = True

    def embed_sentence(self, text: str) -> EmbeddingVector:
        payload = self._post(EMBED_PATH, {"model": self.model_name, "input": text, "granularity": "sentence"})
        return _vector(payload.get("embedding"))

    def embed_tokens(self, text: str) -> list[tuple[str, EmbeddingVector]]:
        payload = self._post(EMBED_PATH, {"model": self.model_name, "input": text, "granularity": "tokens"})
        tokens = payload.get("tokens")
        if not isinstance(tokens, list) or not tokens:
            raise ProtocolError("response has no non-empty 'tokens' list")
        out = []
        for item in tokens:
            if not isinstance(item, dict) or not isinstance(item.get("token"), str):
                raise ProtocolError("malformed token entry")
            out.append((item["token"], _vector(item.get("embedding"))))
        dims = {v.dim for _, v in out}
        if len(dims) != 1:
            raise ProtocolError(f"token embeddings have mixed dimensions {sorted(dims)}")
        return out


def _vector(values: Any) -> EmbeddingVector:
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
        raise ProtocolError("embedding must be a list of numbers")
    return EmbeddingVector(tuple(values))
