"""Model backends: wire protocol clients, mocks and role operations."""

from .base import (
    ROLES,
    Attachment,
    BackendConfig,
    CallRecord,
    ChatBackend,
    ChatRequest,
    EmbedderClient,
    EmbeddingVector,
    Message,
    RetryingBackend,
    RetryingEmbedder,
    RetryPolicy,
    analyze_discrepancy,
    caption_image,
    chat_complete,
    cosine,
    embed,
    parse_tag_list,
    tag_image,
)
from .http import HttpChatBackend, HttpEmbedder
from .mock import FailureRule, Fixture, MockBackend, MockEmbedder, ScriptedBackend, load_fixture_file
from .sampling import entropy, mock_sample, temperature_softmax

__all__ = [
    "ROLES",
    "Attachment",
    "BackendConfig",
    "CallRecord",
    "ChatBackend",
    "ChatRequest",
    "EmbedderClient",
    "EmbeddingVector",
    "FailureRule",
    "Fixture",
    "HttpChatBackend",
    "HttpEmbedder",
    "Message",
    "MockBackend",
    "MockEmbedder",
    "RetryPolicy",
    "RetryingBackend",
    "RetryingEmbedder",
    "ScriptedBackend",
    "analyze_discrepancy",
    "caption_image",
    "chat_complete",
    "cosine",
    "embed",
    "entropy",
    "load_fixture_file",
    "mock_sample",
    "parse_tag_list",
    "tag_image",
    "temperature_softmax",
]
