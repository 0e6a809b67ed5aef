"""Application config: JSON with comments, validated before any work starts."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .backends.base import BackendConfig
from .errors import ConfigError
from .uncertainty import SIMILARITY_MODES, SweepConfig

EMBEDDER = "embedder"
ALL_ROLES = ("tagger", "captioner", "analyzer", "reasoner", EMBEDDER)

_MOCK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"const": "mock"},
        "model_name": {"type": "string", "minLength": 1},
        "fixtures": {"type": "string"},
        "failures": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["role"],
                "properties": {
                    "role": {"type": "string"},
                    "match": {"type": ["string", "null"]},
                    "times": {"type": ["integer", "null"], "minimum": 0},
                    "error": {"enum": ["transport", "backend", "protocol"]},
                },
            },
        },
        "analyzer_template": {"type": "string"},
        "dim": {"type": "integer", "minimum": 1},
        "max_retries": {"type": "integer", "minimum": 0},
        "retry_backoff": {"type": "number", "minimum": 0},
    },
}
_HTTP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "base_url", "model_name"],
    "properties": {
        "type": {"const": "http"},
        "base_url": {"type": "string", "minLength": 1},
        "model_name": {"type": "string", "minLength": 1},
        "api_key": {"type": ["string", "null"]},
        "timeout": {"type": "number", "exclusiveMinimum": 0},
        "max_retries": {"type": "integer", "minimum": 0},
        "retry_backoff": {"type": "number", "minimum": 0},
    },
}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset_path", "output_dir"],
    "properties": {
        "dataset_path": {"type": "string", "minLength": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "cache_dir": {"type": "string", "minLength": 1},
        "backends": {
            "type": "object",
            "additionalProperties": False,
            "properties": {r: {"oneOf": [_MOCK_SCHEMA, _HTTP_SCHEMA]} for r in ALL_ROLES},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "temperatures": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                "w1": {"type": "number", "minimum": 0},
                "w2": {"type": "number", "minimum": 0},
                "similarity": {"enum": [*SIMILARITY_MODES, None]},
            },
        },
        "no_uncertainty_temperature": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
        "parallelism": {"type": "integer", "minimum": 1},
        "agent_parallelism": {"type": "integer", "minimum": 1},
        "global_seed": {"type": "integer"},
        "log_level": {"enum": ["debug", "info", "warning", "error"]},
        "cache_reasoner": {"type": "boolean"},
        "template_version": {"type": "string"},
        "template_dir": {"type": "string"},
        "split_position": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}

_ENV_REF = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")


def strip_json_comments(text: str) -> str:
    """Remove ``//`` and ``/* */`` comments that sit outside string literals."""
    out = []
    i, n = 0, len(text)
    in_string = False
    while i < n:
        c = text[i]
        if in_string:
            out.append(c)
            if c == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if c == '"':
                in_string = False
            i += 1
        elif c == '"':
            in_string = True
            out.append(c)
            i += 1
        elif text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
        elif text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise ConfigError("unterminated /* comment")
            i = end + 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class RoleBackend:
    """Config for one role: either a mock or an HTTP endpoint."""

    kind: str
    options: Mapping[str, Any] = field(default_factory=dict)
    http: BackendConfig | None = None

    @property
    def model_name(self) -> str:
        if self.http is not None:
            return self.http.model_name
        return self.options.get("model_name", "mock")

    def describe(self) -> dict[str, Any]:
        """Serializable summary without secrets."""
        if self.http is not None:
            return {"type": "http", "base_url": self.http.base_url, "model_name": self.http.model_name,
                    "timeout": self.http.timeout}
        return {"type": "mock", **{k: v for k, v in self.options.items() if k != "failures"}}


@dataclass(frozen=True)
class AppConfig:
    dataset_path: Path
    output_dir: Path
    cache_dir: Path
    backends: Mapping[str, RoleBackend]
    sweep: SweepConfig = SweepConfig()
    no_uncertainty_temperature: float = 0.6
    parallelism: int = 4
    agent_parallelism: int = 4
    global_seed: int = 0
    log_level: str = "info"
    cache_reasoner: bool = True
    template_version: str = "v1"
    template_dir: Path | None = None
    split_position: float = 0.5


def _resolve_secret(value: str | None) -> str | None:
    if value is None:
        return None
    m = _ENV_REF.match(value)
    if not m:
        return value
    if m.group(1) not in os.environ:
        raise ConfigError(f"environment variable {m.group(1)} referenced by api_key is not set")
    return os.environ[m.group(1)]


def _role_backend(doc: Mapping[str, Any] | None, base: Path) -> RoleBackend:
    if doc is None:
        return RoleBackend("mock", {})
    options = {k: v for k, v in doc.items() if k != "type"}
    if doc["type"] == "mock":
        if "fixtures" in options:
            options["fixtures"] = str((base / options["fixtures"]).resolve())
        return RoleBackend("mock", options)
    try:
        http = BackendConfig(
            base_url=doc["base_url"],
            model_name=doc["model_name"],
            api_key=_resolve_secret(doc.get("api_key")),
            timeout=doc.get("timeout", 60.0),
            max_retries=doc.get("max_retries", 2),
            retry_backoff=doc.get("retry_backoff", 1.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RoleBackend("http", {}, http)


def parse_config(doc: Any, base: Path = Path(".")) -> AppConfig:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"config field {where}: {exc.message}") from exc
    output_dir = (base / doc["output_dir"]).resolve()
    sweep_doc = doc.get("sweep", {})
    try:
        sweep = SweepConfig(
            temperatures=tuple(sweep_doc.get("temperatures", SweepConfig().temperatures)),
            w1=sweep_doc.get("w1", 0.5),
            w2=sweep_doc.get("w2", 0.5),
            similarity=sweep_doc.get("similarity"),
        )
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    backends = {r: _role_backend(doc.get("backends", {}).get(r), base) for r in ALL_ROLES}
    return AppConfig(
        dataset_path=(base / doc["dataset_path"]).resolve(),
        output_dir=output_dir,
        cache_dir=(base / doc["cache_dir"]).resolve() if "cache_dir" in doc else output_dir / "cache",
        backends=backends,
        sweep=sweep,
        no_uncertainty_temperature=doc.get("no_uncertainty_temperature", 0.6),
        parallelism=doc.get("parallelism", 4),
        agent_parallelism=doc.get("agent_parallelism", 4),
        global_seed=doc.get("global_seed", 0),
        log_level=doc.get("log_level", "info"),
        cache_reasoner=doc.get("cache_reasoner", True),
        template_version=doc.get("template_version", "v1"),
        template_dir=(base / doc["template_dir"]).resolve() if "template_dir" in doc else None,
        split_position=doc.get("split_position", 0.5),
    )


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(strip_json_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc, path.parent)
