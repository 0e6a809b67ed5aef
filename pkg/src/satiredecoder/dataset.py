"""Dataset manifests and the content-addressed response cache.

Manifest: JSON Lines. The first line is a metadata object
(``{"type": "metadata", "version": "1", ...}``); every other line is one
sample. Image paths are resolved relative to the manifest file.

Cache: one file per key at ``<cache_dir>/<role>/<model>/<digest>-<temperature>``,
written once via an atomic hard link.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema

from .backends.base import ChatBackend, ChatRequest, EmbedderClient, EmbeddingVector
from .core import ImageRef, ImageSample
from .decouple import SplitRule, split_image
from .errors import ConflictError, DuplicateIdError, InvalidInput, MissingFileError, SchemaError

MANIFEST_VERSION = "1"
CACHE_ROLES = ("tagger", "captioner", "analyzer", "reasoner", "embedder")

_STR_LIST = {"type": "array", "items": {"type": "string"}}
METADATA_SCHEMA = {
    "type": "object",
    "required": ["type", "version"],
    "properties": {
        "type": {"const": "metadata"},
        "version": {"type": "string"},
        "object_vocabulary": _STR_LIST,
    },
}
SAMPLE_SCHEMA = {
    "type": "object",
    "required": ["id"],
    "properties": {
        "type": {"const": "sample"},
        "id": {"type": "string", "minLength": 1},
        "image_path": {"type": "string", "minLength": 1},
        "yes_path": {"type": "string", "minLength": 1},
        "but_path": {"type": "string", "minLength": 1},
        "gold_description": {"type": "string"},
        "gold_objects": _STR_LIST,
        "vocabulary": _STR_LIST,
        "synonyms": {"type": "object", "additionalProperties": _STR_LIST},
    },
    "oneOf": [
        {"required": ["image_path"], "not": {"anyOf": [{"required": ["yes_path"]}, {"required": ["but_path"]}]}},
        {"required": ["yes_path", "but_path"], "not": {"required": ["image_path"]}},
    ],
}


@dataclass
class Manifest:
    version: str
    samples: list[ImageSample]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def object_vocabulary(self) -> frozenset[str]:
        """Manifest-level vocabulary plus every sample's gold objects."""
        vocab = set(self.metadata.get("object_vocabulary", ()))
        for s in self.samples:
            vocab |= s.gold_objects | s.vocabulary
        return frozenset(v.lower().strip() for v in vocab)


def _validate(doc: Any, schema: dict, where: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        field_path = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise SchemaError(f"{where}: field {field_path}: {exc.message}") from exc


def _media_type(path: Path) -> str:
    return mimetypes.guess_type(path.name)[0] or "application/octet-stream"


def _read_image(base: Path, rel: str, image_id: str, sample_id: str) -> ImageRef:
    path = (base / rel).resolve()
    if not path.is_file():
        raise MissingFileError(f"sample {sample_id!r}: image file {path} does not exist")
    data = path.read_bytes()
    if not data:
        raise SchemaError(f"sample {sample_id!r}: image file {path} is empty")
    return ImageRef(image_id, data, _media_type(path))


def load_manifest(path: str | Path, split_rule: SplitRule = SplitRule()) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest {path} does not exist")
    base = path.parent
    rows: list[tuple[int, dict]] = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
    if not rows:
        raise SchemaError(f"{path}: manifest is empty")
    meta_line, metadata = rows[0]
    _validate(metadata, METADATA_SCHEMA, f"{path}:{meta_line}")

    first_seen: dict[str, int] = {}
    samples = []
    for lineno, row in rows[1:]:
        _validate(row, SAMPLE_SCHEMA, f"{path}:{lineno}")
        sid = row["id"]
        if sid in first_seen:
            raise DuplicateIdError(f"{path}: sample id {sid!r} appears on lines {first_seen[sid]} and {lineno}")
        first_seen[sid] = lineno
        full = None
        if "image_path" in row:
            full = _read_image(base, row["image_path"], sid, sid)
            yes, but = split_image(full, split_rule)
        else:
            yes = _read_image(base, row["yes_path"], f"{sid}:yes", sid)
            but = _read_image(base, row["but_path"], f"{sid}:but", sid)
        samples.append(
            ImageSample(
                id=sid,
                image_yes=yes,
                image_but=but,
                gold_description=row.get("gold_description", ""),
                gold_objects=frozenset(row.get("gold_objects", ())),
                synonyms={k: frozenset(v) for k, v in row.get("synonyms", {}).items()},
                vocabulary=frozenset(row.get("vocabulary", ())),
                image_full=full,
            )
        )
    samples.sort(key=lambda s: s.id)
    return Manifest(version=metadata["version"], samples=samples, metadata=metadata)


def load_dataset(path: str | Path, split_rule: SplitRule = SplitRule()) -> list[ImageSample]:
    """Samples from a JSONL manifest, sorted by id."""
    return load_manifest(path, split_rule).samples


def _ext(media_type: str) -> str:
    return mimetypes.guess_extension(media_type) or ".bin"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def save_dataset(
    samples: Sequence[ImageSample], directory: str | Path, *, metadata: dict[str, Any] | None = None
) -> Path:
    """Write images and ``manifest.jsonl`` so that :func:`load_dataset` round-trips."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    meta = {"type": "metadata", "version": MANIFEST_VERSION, **(metadata or {})}
    lines = [json.dumps(meta, sort_keys=True)]
    for s in sorted(samples, key=lambda s: s.id):
        row: dict[str, Any] = {"type": "sample", "id": s.id}
        if s.image_full is not None:
            rel = f"images/{_safe(s.id)}{_ext(s.image_full.media_type)}"
            (directory / rel).write_bytes(s.image_full.data)
            row["image_path"] = rel
        else:
            for half, img in (("yes", s.image_yes), ("but", s.image_but)):
                rel = f"images/{_safe(s.id)}_{half}{_ext(img.media_type)}"
                (directory / rel).write_bytes(img.data)
                row[f"{half}_path"] = rel
        row["gold_description"] = s.gold_description
        row["gold_objects"] = sorted(s.gold_objects)
        row["vocabulary"] = sorted(s.vocabulary)
        row["synonyms"] = {k: sorted(v) for k, v in sorted(s.synonyms.items())}
        lines.append(json.dumps(row, sort_keys=True))
    path = directory / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class CacheKey:
    role: str
    model_name: str
    input_digest: str
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.role not in CACHE_ROLES:
            raise InvalidInput(f"unknown cache role {self.role!r}")

    @classmethod
    def for_request(cls, role: str, model_name: str, request_bytes: bytes, temperature: float = 0.0) -> "CacheKey":
        """Digest over role, model, request bytes and temperature together."""
        h = hashlib.sha256()
        for part in (role.encode(), model_name.encode(), repr(float(temperature)).encode(),
                     hashlib.sha256(request_bytes).digest()):
            h.update(len(part).to_bytes(8, "big"))
            h.update(part)
        return cls(role, model_name, h.hexdigest(), float(temperature))

    def relpath(self) -> Path:
        return Path(self.role) / _safe(self.model_name) / f"{self.input_digest}-{self.temperature!r}"


class ResponseCache:
    """Write-once file cache; safe for concurrent readers and writers."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path(self, key: CacheKey) -> Path:
        return self.directory / key.relpath()

    def get(self, key: CacheKey) -> bytes | None:
        try:
            data = self.path(key).read_bytes()
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return data

    def put(self, key: CacheKey, data: bytes) -> None:
        """Store ``data``; identical re-puts are no-ops, differing ones raise ConflictError."""
        final = self.path(key)
        final.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=final.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            try:
                os.link(tmp, final)
            except FileExistsError:
                if final.read_bytes() != data:
                    raise ConflictError(f"cache entry {final} already holds different bytes") from None
        finally:
            os.unlink(tmp)

    @property
    def hit_rate(self) -> float | None:
        with self._lock:
            total = self.hits + self.misses
            return self.hits / total if total else None

    def stats(self) -> dict[str, Any]:
        return {"hits": self.hits, "misses": self.misses, "hit_rate": self.hit_rate}


class CachedBackend:
    """Serve chat requests from the cache, falling through to ``inner`` on a miss."""

    def __init__(self, inner: ChatBackend, cache: ResponseCache):
        self.inner = inner
        self.cache = cache
        self.model_name = inner.model_name

    def complete(self, request: ChatRequest) -> str:
        key = CacheKey.for_request(request.role, self.model_name, request.canonical_bytes(), request.temperature)
        hit = self.cache.get(key)
        if hit is not None:
            return hit.decode("utf-8")
        text = self.inner.complete(request)
        self.cache.put(key, text.encode("utf-8"))
        return text


class CachedEmbedder:
    def __init__(self, inner: EmbedderClient, cache: ResponseCache):
        self.inner = inner
        self.cache = cache
        self.model_name = inner.model_name
        self.supports_tokens = inner.supports_tokens

    def _key(self, text: str, granularity: str) -> CacheKey:
        body = json.dumps({"text": text, "granularity": granularity}, sort_keys=True).encode("utf-8")
        return CacheKey.for_request("embedder", self.model_name, body)

    def embed_sentence(self, text: str) -> EmbeddingVector:
        key = self._key(text, "sentence")
        hit = self.cache.get(key)
        if hit is not None:
            return EmbeddingVector(tuple(json.loads(hit)))
        vec = self.inner.embed_sentence(text)
        self.cache.put(key, json.dumps(list(vec.values)).encode("utf-8"))
        return vec

    def embed_tokens(self, text: str) -> list[tuple[str, EmbeddingVector]]:
        key = self._key(text, "tokens")
        hit = self.cache.get(key)
        if hit is not None:
            return [(t, EmbeddingVector(tuple(v))) for t, v in json.loads(hit)]
        out = self.inner.embed_tokens(text)
        self.cache.put(key, json.dumps([[t, list(v.values)] for t, v in out]).encode("utf-8"))
        return out


def iter_cache_files(cache: ResponseCache) -> Iterable[Path]:
    return (p for p in cache.directory.rglob("*") if p.is_file() and not p.name.startswith(".tmp-"))
