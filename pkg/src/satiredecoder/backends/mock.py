"""Deterministic offline backends.

Mocks are pure functions of (request, seed): a fixture is looked up first,
otherwise a response is synthesized. The synthesized reasoner perturbs the
agent outputs it finds in the prompt with :func:`mock_sample`, so higher
temperatures really do produce noisier, more hallucination-prone answers.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..core import EMPTY_TAGS_RENDERING, derive_seed
from ..errors import BackendError, InvalidInput, ProtocolError, SchemaError, TransportError
from ..text import tokenize
from .base import ANALYZER_PREAMBLES, ChatRequest, EmbeddingVector
from .sampling import mock_sample

# objects the mock tagger/captioner "see"; chosen per image from its byte digest
SCENE_VOCABULARY = (
    "person", "dog", "cat", "car", "phone", "tree", "cup", "chair", "table", "bottle",
    "ball", "book", "bag", "bench", "clock", "bicycle", "umbrella", "laptop", "sign", "window",
)
# objects the mock reasoner invents when a draw rejects a real one
DISTRACTORS = ("unicorn", "spaceship", "piano", "giraffe", "volcano", "trophy", "robot", "castle")
KEEP_LOGIT = 1.5

# prompt lines the mock reasoner reads back; these match templates/cot_v1.txt
_PROMPT_FIELDS = {
    "le_yes": re.compile(r"^Objects in the YES scene: (.*)$", re.M),
    "le_but": re.compile(r"^Objects in the BUT scene: (.*)$", re.M),
    "gs_yes": re.compile(r"^Description of the YES scene: (.*)$", re.M),
    "gs_but": re.compile(r"^Description of the BUT scene: (.*)$", re.M),
}
_ANALYZER_SIDES = re.compile(r"<A>\n(.*)\n</A>\n<B>\n(.*)\n</B>", re.S)


@dataclass(frozen=True)
class Fixture:
    role: str
    key: str
    response: str
    temperature: float | None = None

    def matches(self, role: str, keys: Sequence[str], temperature: float) -> bool:
        if role != self.role or self.key not in keys:
            return False
        return self.temperature is None or float(self.temperature) == float(temperature)


@dataclass(frozen=True)
class FailureRule:
    """Fail requests for ``role`` (optionally only those matching ``match``).

    ``times=None`` fails forever; otherwise the first ``times`` attempts of
    each distinct request fail and later ones go through.
    """

    role: str
    match: str | None = None
    times: int | None = None
    error: str = "transport"

    def applies(self, request: ChatRequest) -> bool:
        if request.role != self.role:
            return False
        return self.match is None or self.match in _request_keys(request)

    def exception(self) -> Exception:
        if self.error == "transport":
            return TransportError(f"injected transport failure for {self.role}", elapsed=0.0)
        if self.error == "backend":
            return BackendError(f"injected 503 for {self.role}", status=503)
        if self.error == "protocol":
            return ProtocolError(f"injected protocol failure for {self.role}")
        raise InvalidInput(f"unknown injected error kind {self.error!r}")


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _request_keys(request: ChatRequest) -> list[str]:
    keys = []
    for a in request.attachments:
        if a.name:
            keys.append(a.name)
            keys.append(a.name.split(":")[0])
        keys.append(hashlib.sha256(a.data).hexdigest())
    keys.append(prompt_hash(request.user_text))
    keys.append(request.digest)
    return keys


def load_fixture_file(path: str | Path) -> tuple[list[Fixture], list[FailureRule]]:
    """Read a fixture file: a list of ``{role, key, temperature, response}``
    objects, or ``{"fixtures": [...], "failures": [...]}``."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if isinstance(doc, list):
        doc = {"fixtures": doc}
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: fixture file must be a list or an object")
    fixtures = []
    for i, entry in enumerate(doc.get("fixtures", [])):
        try:
            response = entry["response"]
            if isinstance(response, list):
                response = ", ".join(response)
            fixtures.append(Fixture(entry["role"], str(entry["key"]), str(response), entry.get("temperature")))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: fixture #{i} is missing field {exc}") from exc
    failures = [FailureRule(**rule) for rule in doc.get("failures", [])]
    return fixtures, failures


def _image_objects(data: bytes, k: int = 3) -> list[str]:
    digest = hashlib.sha256(data).hexdigest()
    rng = np.random.default_rng(derive_seed("scene", digest))
    picks = rng.choice(len(SCENE_VOCABULARY), size=k, replace=False)
    return [SCENE_VOCABULARY[i] for i in sorted(picks)]


class MockBackend:
    """Fixture-or-synthesize chat backend usable for any role."""

    def __init__(
        self,
        fixtures: Iterable[Fixture] = (),
        failures: Iterable[FailureRule] = (),
        *,
        model_name: str = "mock",
        analyzer_template: str = "{mode} discrepancy: {a} versus {b}",
        tags: Mapping[str, Sequence[str]] | None = None,
        captions: Mapping[str, str] | None = None,
    ):
        self.model_name = model_name
        self.fixtures = list(fixtures)
        self.failures = list(failures)
        self.analyzer_template = analyzer_template
        # convenience scripts keyed by image id
        self.tags = dict(tags or {})
        self.captions = dict(captions or {})
        self._lock = threading.Lock()
        self._failure_counts: dict[tuple[int, str], int] = {}
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "MockBackend":
        fixtures, failures = load_fixture_file(path)
        return cls(fixtures, failures, **kwargs)

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self.requests)

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.requests.append(request)
            for i, rule in enumerate(self.failures):
                if not rule.applies(request):
                    continue
                slot = (i, request.digest)
                seen = self._failure_counts.get(slot, 0)
                self._failure_counts[slot] = seen + 1
                if rule.times is None or seen < rule.times:
                    raise rule.exception()
        keys = _request_keys(request)
        for fx in self.fixtures:
            if fx.matches(request.role, keys, request.temperature):
                return fx.response
        return self._synthesize(request, keys)

    def _synthesize(self, request: ChatRequest, keys: list[str]) -> str:
        if request.role == "tagger":
            for k in keys:
                if k in self.tags:
                    return ", ".join(self.tags[k])
            return ", ".join(_image_objects(request.attachments[0].data))
        if request.role == "captioner":
            for k in keys:
                if k in self.captions:
                    return self.captions[k]
            objs = _image_objects(request.attachments[0].data)
            return f"a {objs[0]} next to a {objs[1]} and a {objs[2]}"
        if request.role == "analyzer":
            m = _ANALYZER_SIDES.search(request.user_text)
            if not m:
                raise ProtocolError("analyzer request lacks <A>/<B> sections")
            system = next((msg.text for msg in request.messages if msg.role == "system"), "")
            mode = next((k for k, v in ANALYZER_PREAMBLES.items() if v == system), "local")
            return self.analyzer_template.format(a=m.group(1), b=m.group(2), mode=mode)
        if request.role == "reasoner":
            return synthesize_reasoning(request)
        raise InvalidInput(f"mock backend cannot play role {request.role!r}")


def synthesize_reasoning(request: ChatRequest) -> str:
    """Three-section answer derived from the bundle lines in the prompt."""
    text = request.user_text
    fields = {}
    for name, pattern in _PROMPT_FIELDS.items():
        m = pattern.search(text)
        fields[name] = m.group(1).strip() if m else ""
    tags = sorted(
        {t.strip() for k in ("le_yes", "le_but") for t in fields[k].split(",")}
        - {"", EMPTY_TAGS_RENDERING}
    )
    base = request.seed if request.seed is not None else derive_seed("reasoner", request.digest)
    temperature = request.temperature

    def keep(*path: Any) -> bool:
        if temperature <= 0:
            return True
        return mock_sample([KEEP_LOGIT, 0.0], temperature, derive_seed(base, *path)) == 0

    def distractor(*path: Any) -> str:
        return DISTRACTORS[derive_seed(base, "distractor", *path) % len(DISTRACTORS)]

    r1 = [tag if keep("r1", i) else distractor("r1", i) for i, tag in enumerate(tags)]
    if not r1:
        r1 = [distractor("r1", "empty")]
    r1 = list(dict.fromkeys(r1))

    def perturb(caption: str, part: str) -> str:
        words = caption.split() or ["an", "image"]
        return " ".join(w if keep(part, i) else distractor(part, i) for i, w in enumerate(words))

    r2_yes = perturb(fields["gs_yes"], "gs_yes")
    r2_but = perturb(fields["gs_but"], "gs_but")
    r3 = (
        f"On the left, {r2_yes}. But on the right, {r2_but}. "
        f"The contrast between the {', '.join(r1)} satirizes the gap between how things "
        f"are supposed to work and how people actually behave in society."
    )
    return f"SUBTASK1: {', '.join(r1)}\nSUBTASK2: {r2_yes} {r2_but}\nSUBTASK3: {r3}"


class ScriptedBackend:
    """Returns (or raises) a fixed sequence of responses; the last one repeats."""

    def __init__(self, script: Sequence[str | Exception], *, model_name: str = "scripted"):
        self.model_name = model_name
        self._script = list(script)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.requests.append(request)
            if not self._script:
                raise InvalidInput("scripted backend ran out of responses")
            item = self._script.pop(0) if len(self._script) > 1 else self._script[0]
        if isinstance(item, Exception):
            raise item
        return item


class MockEmbedder:
    """Hash-seeded token vectors with non-negative components.

    Each distinct token maps to a fixed unit vector; a sentence embedding is
    the normalized mean of its token vectors. ``table`` overrides vectors for
    specific tokens (e.g. to build orthogonal cases).
    """

    supports_tokens = True

    def __init__(self, dim: int = 64, table: Mapping[str, Sequence[float]] | None = None,
                 model_name: str = "mock-embedder"):
        if dim < 1:
            raise InvalidInput("dim must be >= 1")
        self.dim = dim
        self.model_name = model_name
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in (table or {}).items()}
        for k, v in self.table.items():
            if v.shape != (dim,):
                raise InvalidInput(f"table vector for {k!r} has shape {v.shape}, expected ({dim},)")
        self.calls = 0
        self._lock = threading.Lock()

    def token_vector(self, token: str) -> np.ndarray:
        if token in self.table:
            return self.table[token]
        rng = np.random.default_rng(derive_seed("embed", self.dim, token))
        v = np.abs(rng.standard_normal(self.dim))
        return v / np.linalg.norm(v)

    def _tokens(self, text: str) -> list[str]:
        if not text.strip():
            raise InvalidInput("cannot embed empty text")
        return tokenize(text) or [text.strip()]

    def embed_tokens(self, text: str) -> list[tuple[str, EmbeddingVector]]:
        with self._lock:
            self.calls += 1
        return [(t, EmbeddingVector(tuple(self.token_vector(t)))) for t in self._tokens(text)]

    def embed_sentence(self, text: str) -> EmbeddingVector:
        with self._lock:
            self.calls += 1
        mean = np.mean([self.token_vector(t) for t in self._tokens(text)], axis=0)
        norm = np.linalg.norm(mean)
        return EmbeddingVector(tuple(mean / norm if norm else mean))
