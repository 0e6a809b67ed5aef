"""Chain-of-thought prompt construction and three-subtask response handling."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .backends.base import Attachment, ChatBackend, ChatRequest, Message, parse_tag_list
from .core import Caption, ImageRef, SemanticBundle, TagSet
from .errors import InvalidInput, ParseError

log = logging.getLogger(__name__)

FIELDS = ("le_yes", "le_but", "gs_yes", "gs_but", "d_local", "d_global")
# ablation switches -> the bundle sections they remove from the prompt
SECTION_GROUPS = {
    "le": ("le_yes", "le_but"),
    "gs": ("gs_yes", "gs_but"),
    "da": ("d_local", "d_global"),
}
DEFAULT_TEMPLATE_VERSION = "v1"

_PLACEHOLDER = re.compile(r"\{(" + "|".join(FIELDS) + r")\}")
_LABEL = re.compile(r"^[ \t>#*_-]*SUBTASK\s*([123])\s*[*_]*\s*:[*_]*[ \t]*", re.I | re.M)


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    user_template: str
    format_reminder: str
    version: str = DEFAULT_TEMPLATE_VERSION

    @classmethod
    def load(cls, version: str = DEFAULT_TEMPLATE_VERSION, directory: str | Path | None = None) -> "PromptTemplate":
        """Load ``system_<v>.txt``, ``cot_<v>.txt`` and ``format_reminder_<v>.txt``."""
        names = (f"system_{version}.txt", f"cot_{version}.txt", f"format_reminder_{version}.txt")
        if directory is None:
            root = resources.files("satiredecoder") / "templates"
            texts = [(root / n).read_text(encoding="utf-8") for n in names]
        else:
            texts = [(Path(directory) / n).read_text(encoding="utf-8") for n in names]
        system, user, reminder = (t.strip() for t in texts)
        missing = [f for f in FIELDS if "{" + f + "}" not in user]
        if missing:
            raise InvalidInput(f"template {version} lacks placeholders {missing}")
        return cls(system, user, reminder, version)


@dataclass(frozen=True)
class CotPrompt:
    system_text: str
    user_text: str
    attachments: tuple[ImageRef, ...] = ()
    omitted: frozenset[str] = frozenset()

    def with_image(self, image: ImageRef) -> "CotPrompt":
        return CotPrompt(self.system_text, self.user_text, (image,), self.omitted)


@dataclass(frozen=True)
class SubtaskResponse:
    r1: TagSet
    r2: Caption
    r3: str
    retry_count: int = field(default=0, compare=False)
    raw: str = field(default="", compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.r3.strip():
            raise InvalidInput("subtask 3 answer must be non-empty")


_default_template: PromptTemplate | None = None


def default_template() -> PromptTemplate:
    global _default_template
    if _default_template is None:
        _default_template = PromptTemplate.load()
    return _default_template


def _bundle_values(bundle: SemanticBundle) -> dict[str, str]:
    return {
        "le_yes": bundle.le_yes.render(),
        "le_but": bundle.le_but.render(),
        "gs_yes": bundle.gs_yes.text,
        "gs_but": bundle.gs_but.text,
        "d_local": bundle.d_local,
        "d_global": bundle.d_global,
    }


def build_prompt(
    bundle: SemanticBundle,
    *,
    omit: Iterable[str] = (),
    template: PromptTemplate | None = None,
) -> CotPrompt:
    """Fill the template with the bundle.

    ``omit`` takes any of ``"le"``, ``"gs"``, ``"da"`` and drops the template
    lines holding those sections (the agent ablations).
    """
    template = template or default_template()
    omit = frozenset(omit)
    unknown = omit - SECTION_GROUPS.keys()
    if unknown:
        raise InvalidInput(f"unknown ablation groups {sorted(unknown)}")
    values = _bundle_values(bundle)
    for name, value in values.items():
        if not value.strip():
            raise InvalidInput(f"bundle field {name} is empty")
    dropped = {f for g in omit for f in SECTION_GROUPS[g]}
    lines = [
        line for line in template.user_template.splitlines()
        if not any("{" + f + "}" in line for f in dropped)
    ]
    user = _PLACEHOLDER.sub(lambda m: values[m.group(1)], "\n".join(lines))
    return CotPrompt(template.system_text, user, omitted=omit)


def parse_subtask_response(raw: str) -> SubtaskResponse:
    """Extract the SUBTASK1/2/3 sections, in any order."""
    found: dict[int, tuple[int, int]] = {}
    labels = list(_LABEL.finditer(raw))
    for i, m in enumerate(labels):
        n = int(m.group(1))
        end = labels[i + 1].start() if i + 1 < len(labels) else len(raw)
        found.setdefault(n, (m.end(), end))
    sections: dict[int, str] = {}
    for n in (1, 2, 3):
        if n not in found:
            raise ParseError(f"missing section SUBTASK{n}", section=n, raw_outputs=[raw])
        start, end = found[n]
        text = raw[start:end].strip()
        if not text:
            raise ParseError(f"empty section SUBTASK{n}", section=n, raw_outputs=[raw])
        sections[n] = text
    r1 = parse_tag_list(sections[1])
    if not r1:
        raise ParseError("SUBTASK1 holds no tags", section=1, raw_outputs=[raw])
    return SubtaskResponse(r1=r1, r2=Caption(sections[2]), r3=sections[3], raw=raw)


def render_subtask_response(resp: SubtaskResponse) -> str:
    """Canonical labeled format; :func:`parse_subtask_response` inverts it."""
    return f"SUBTASK1: {', '.join(resp.r1.sorted())}\nSUBTASK2: {resp.r2.text}\nSUBTASK3: {resp.r3}"


def _request(prompt: CotPrompt, image: ImageRef, temperature: float, seed: int | None,
             max_tokens: int, reminder: str | None) -> ChatRequest:
    user = prompt.user_text if reminder is None else f"{prompt.user_text}\n\n{reminder}"
    return ChatRequest(
        messages=(
            Message("system", prompt.system_text),
            Message("user", user, (Attachment.from_image(image),)),
        ),
        temperature=temperature,
        max_tokens=max_tokens,
        seed=seed,
        role="reasoner",
    )


def run_subtasks(
    reasoner: ChatBackend,
    image: ImageRef,
    prompt: CotPrompt,
    temperature: float,
    *,
    seed: int | None = None,
    max_tokens: int = 1024,
    template: PromptTemplate | None = None,
) -> SubtaskResponse:
    """One reasoner call; on a parse failure, one retry with a format reminder."""
    reminder = (template or default_template()).format_reminder
    first = reasoner.complete(_request(prompt, image, temperature, seed, max_tokens, None))
    try:
        return parse_subtask_response(first)
    except ParseError as exc:
        log.debug("unparseable reasoner output at T=%s (%s); retrying once", temperature, exc)
    second = reasoner.complete(_request(prompt, image, temperature, seed, max_tokens, reminder))
    try:
        resp = parse_subtask_response(second)
    except ParseError as exc:
        raise ParseError(
            f"reasoner output unparseable after retry: {exc}", section=exc.section, raw_outputs=[first, second]
        ) from exc
    return SubtaskResponse(resp.r1, resp.r2, resp.r3, retry_count=1, raw=second)
