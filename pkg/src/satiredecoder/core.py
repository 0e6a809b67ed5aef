"""Domain types shared by every other module.

Everything here is immutable and free of I/O so it can be passed between
worker threads without copying.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import InvalidInput

EMPTY_TAGS_RENDERING = "(none)"


def normalize_tag(raw: str) -> str:
    """Lowercase, trim and collapse internal whitespace.

    Returns ``""`` for all-whitespace input; callers drop empty results.
    """
    return " ".join(raw.lower().split())


@dataclass(frozen=True)
class ImageRef:
    id: str
    data: bytes = field(repr=False)
    media_type: str = "image/png"

    def __post_init__(self) -> None:
        if not self.data:
            raise InvalidInput(f"image {self.id!r} has no bytes")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class TagSet:
    """A set of normalized tags; build with :meth:`of` for raw input."""

    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        tags = frozenset(self.tags)
        for tag in tags:
            if not tag or tag != normalize_tag(tag):
                raise InvalidInput(f"tag {tag!r} is not normalized")
        object.__setattr__(self, "tags", tags)

    @classmethod
    def of(cls, raw: Iterable[str]) -> "TagSet":
        return cls(frozenset(t for t in (normalize_tag(r) for r in raw) if t))

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.tags))

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, item: object) -> bool:
        return item in self.tags

    def __or__(self, other: "TagSet") -> "TagSet":
        return TagSet(self.tags | other.tags)

    def sorted(self) -> list[str]:
        return sorted(self.tags)

    def render(self) -> str:
        """Comma-joined rendering used in prompts and analyzer requests."""
        return ", ".join(self.sorted()) if self.tags else EMPTY_TAGS_RENDERING


@dataclass(frozen=True)
class Caption:
    text: str

    def __post_init__(self) -> None:
        text = self.text.strip()
        if not text:
            raise InvalidInput("caption text must be non-empty")
        object.__setattr__(self, "text", text)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class ImageSample:
    """One satirical item with its two halves and evaluation annotations."""

    id: str
    image_yes: ImageRef
    image_but: ImageRef
    gold_description: str = ""
    gold_objects: frozenset[str] = frozenset()
    synonyms: Mapping[str, frozenset[str]] = field(default_factory=dict)
    # extra object names that count as mentions for CHAIR beyond gold_objects
    vocabulary: frozenset[str] = frozenset()
    image_full: ImageRef | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_objects", frozenset(normalize_tag(o) for o in self.gold_objects))
        object.__setattr__(self, "vocabulary", frozenset(normalize_tag(o) for o in self.vocabulary))
        object.__setattr__(
            self,
            "synonyms",
            {normalize_tag(k): frozenset(normalize_tag(a) for a in v) for k, v in self.synonyms.items()},
        )


@dataclass(frozen=True)
class SemanticBundle:
    """The six decoupled representations of one image."""

    le_yes: TagSet
    le_but: TagSet
    gs_yes: Caption
    gs_but: Caption
    d_local: str
    d_global: str

    def __post_init__(self) -> None:
        for name in ("d_local", "d_global"):
            if not getattr(self, name).strip():
                raise InvalidInput(f"bundle field {name} is empty")

    @property
    def reference_tags(self) -> TagSet:
        return self.le_yes | self.le_but

    @property
    def reference_caption(self) -> Caption:
        return Caption(f"{self.gs_yes.text} {self.gs_but.text}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "le_yes": self.le_yes.sorted(),
            "le_but": self.le_but.sorted(),
            "gs_yes": self.gs_yes.text,
            "gs_but": self.gs_but.text,
            "d_local": self.d_local,
            "d_global": self.d_global,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SemanticBundle":
        return cls(
            le_yes=TagSet.of(d["le_yes"]),
            le_but=TagSet.of(d["le_but"]),
            gs_yes=Caption(d["gs_yes"]),
            gs_but=Caption(d["gs_but"]),
            d_local=d["d_local"],
            d_global=d["d_global"],
        )


@dataclass(frozen=True)
class SubtaskTrace:
    """One temperature's run of the three subtasks and its uncertainty scores.

    A failed trace keeps ``error`` and leaves the results and scores unset.
    """

    temperature: float
    r1: TagSet | None = None
    r2: Caption | None = None
    r3: str | None = None
    u1: float | None = None
    u2: float | None = None
    u_combined: float | None = None
    parse_retries: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.temperature <= 2.0:
            raise InvalidInput(f"temperature {self.temperature} outside (0, 2]")
        if self.error is None:
            if self.r1 is None or self.r2 is None or not self.r3 or self.u_combined is None:
                raise InvalidInput("successful trace needs r1, r2, r3 and scores")
            if self.u1 is not None and not -1.0 <= self.u1 <= 0.0:
                raise InvalidInput(f"u1={self.u1} outside [-1, 0]")

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        if self.failed:
            return {"temperature": self.temperature, "status": "failed", "error": self.error,
                    "parse_retries": self.parse_retries}
        return {
            "temperature": self.temperature,
            "status": "ok",
            "r1": self.r1.sorted(),
            "r2": self.r2.text,
            "r3": self.r3,
            "u1": self.u1,
            "u2": self.u2,
            "u_combined": self.u_combined,
            "parse_retries": self.parse_retries,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SubtaskTrace":
        if d.get("status") == "failed":
            return cls(temperature=d["temperature"], error=d["error"], parse_retries=d.get("parse_retries", 0))
        return cls(
            temperature=d["temperature"],
            r1=TagSet.of(d["r1"]),
            r2=Caption(d["r2"]),
            r3=d["r3"],
            u1=d["u1"],
            u2=d["u2"],
            u_combined=d["u_combined"],
            parse_retries=d.get("parse_retries", 0),
        )


def argmin_trace(traces: Sequence[SubtaskTrace], score: str = "u_combined") -> int | None:
    """Index of the successful trace with the smallest ``score``.

    Ties go to the lowest temperature. Returns None when every trace failed.
    """
    best: int | None = None
    for i, trace in enumerate(traces):
        value = getattr(trace, score)
        if trace.failed or value is None:
            continue
        if best is None:
            best = i
            continue
        current = getattr(traces[best], score)
        if value < current or (value == current and trace.temperature < traces[best].temperature):
            best = i
    return best


@dataclass(frozen=True)
class RunRecord:
    sample_id: str
    bundle: SemanticBundle
    traces: tuple[SubtaskTrace, ...]
    selected: int
    selected_by_u1: int | None = None
    selected_by_u2: int | None = None
    weights: tuple[float, float] = (0.5, 0.5)
    similarity: str = "token_greedy_f"
    prompt_system: str = ""
    prompt_user: str = ""
    # wall-clock durations; deliberately excluded from to_dict so records stay reproducible
    timings: Mapping[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "traces", tuple(self.traces))
        if not self.traces:
            raise InvalidInput("a run record needs at least one trace")
        if not 0 <= self.selected < len(self.traces) or self.traces[self.selected].failed:
            raise InvalidInput(f"selected index {self.selected} does not point at a successful trace")
        best = argmin_trace(self.traces)
        if self.traces[best].u_combined < self.traces[self.selected].u_combined:
            raise InvalidInput("selected trace is not a minimum of u_combined")

    @property
    def reference_tags(self) -> TagSet:
        return self.bundle.reference_tags

    @property
    def reference_caption(self) -> Caption:
        return self.bundle.reference_caption

    @property
    def selected_trace(self) -> SubtaskTrace:
        return self.traces[self.selected]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "bundle": self.bundle.to_dict(),
            "reference_tags": self.reference_tags.sorted(),
            "reference_caption": self.reference_caption.text,
            "prompt": {"system": self.prompt_system, "user": self.prompt_user},
            "weights": list(self.weights),
            "similarity": self.similarity,
            "traces": [t.to_dict() for t in self.traces],
            "selected": self.selected,
            "selected_by_u1": self.selected_by_u1,
            "selected_by_u2": self.selected_by_u2,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunRecord":
        return cls(
            sample_id=d["sample_id"],
            bundle=SemanticBundle.from_dict(d["bundle"]),
            traces=tuple(SubtaskTrace.from_dict(t) for t in d["traces"]),
            selected=d["selected"],
            selected_by_u1=d.get("selected_by_u1"),
            selected_by_u2=d.get("selected_by_u2"),
            weights=tuple(d.get("weights", (0.5, 0.5))),
            similarity=d.get("similarity", "token_greedy_f"),
            prompt_system=d.get("prompt", {}).get("system", ""),
            prompt_user=d.get("prompt", {}).get("user", ""),
        )


def derive_seed(*keys: Any) -> int:
    """Deterministic 63-bit seed from an arbitrary key path.

    ``derive_seed(global_seed, sample_id, role, temperature)`` gives every
    (sample, role, temperature) its own independent stream.
    """
    h = hashlib.sha256()
    for key in keys:
        if isinstance(key, float):
            key = repr(key) if math.isfinite(key) else str(key)
        h.update(str(key).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "big") >> 1
