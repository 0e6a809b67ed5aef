"""End-to-end orchestration: decouple -> prompt -> sweep, one sample at a time.

Run directory layout::

    <output_dir>/records/<sample_id>.json   one RunRecord per successful sample
    <output_dir>/run_manifest.json          statuses, failures, timings, cache stats
    <output_dir>/cache/...                  response cache (unless cache_dir is set)
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .backends.base import ChatBackend, EmbedderClient, RetryingBackend, RetryingEmbedder, RetryPolicy
from .backends.http import HttpChatBackend, HttpEmbedder
from .backends.mock import FailureRule, MockBackend, MockEmbedder, load_fixture_file
from .config import EMBEDDER, AppConfig, RoleBackend
from .core import ImageSample, RunRecord
from .cot import PromptTemplate, build_prompt
from .dataset import CachedBackend, CachedEmbedder, Manifest, ResponseCache, load_manifest
from .decouple import SplitRule, decouple, full_image
from .errors import SatireDecoderError
from .uncertainty import SweepConfig, sweep

log = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.json"
RECORDS_DIR = "records"
EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def safe_filename(sample_id: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in sample_id)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def make_embedder(role_cfg: RoleBackend) -> EmbedderClient:
    if role_cfg.http is not None:
        return HttpEmbedder(role_cfg.http)
    return MockEmbedder(dim=role_cfg.options.get("dim", 64), model_name=role_cfg.model_name)


def _make_chat(role_cfg: RoleBackend) -> ChatBackend:
    if role_cfg.http is not None:
        return HttpChatBackend(role_cfg.http)
    fixtures, failures = [], []
    if "fixtures" in role_cfg.options:
        fixtures, failures = load_fixture_file(role_cfg.options["fixtures"])
    failures += [FailureRule(**f) for f in role_cfg.options.get("failures", [])]
    kwargs = {"model_name": role_cfg.model_name}
    if "analyzer_template" in role_cfg.options:
        kwargs["analyzer_template"] = role_cfg.options["analyzer_template"]
    return MockBackend(fixtures, failures, **kwargs)


def _policy(role_cfg: RoleBackend) -> RetryPolicy:
    if role_cfg.http is not None:
        return RetryPolicy(role_cfg.http.max_retries, role_cfg.http.retry_backoff)
    return RetryPolicy(role_cfg.options.get("max_retries", 2), role_cfg.options.get("retry_backoff", 0.0))


@dataclass
class Backends:
    """The wrapped clients the pipeline talks to, plus handles for instrumentation."""

    chat: dict[str, ChatBackend]
    embedder: EmbedderClient
    raw: dict[str, Any] = field(default_factory=dict)
    retrying: dict[str, Any] = field(default_factory=dict)
    cache: ResponseCache | None = None

    def backend_calls(self) -> dict[str, int]:
        out = {role: sum(c.attempts for c in r.calls) for role, r in self.retrying.items() if role != EMBEDDER}
        out[EMBEDDER] = self.retrying[EMBEDDER].attempts if EMBEDDER in self.retrying else 0
        return out

    def retries(self) -> dict[str, int]:
        return {role: r.retries for role, r in self.retrying.items() if role != EMBEDDER}

    def close(self) -> None:
        for client in self.raw.values():
            if hasattr(client, "close"):
                client.close()


def build_backends(cfg: AppConfig, cache: ResponseCache | None, sleep=time.sleep) -> Backends:
    """Stack each role as cache -> retry -> client."""
    chat, raw, retrying = {}, {}, {}
    for role in ("tagger", "captioner", "analyzer", "reasoner"):
        role_cfg = cfg.backends[role]
        client = _make_chat(role_cfg)
        raw[role] = client
        wrapped: ChatBackend = RetryingBackend(client, _policy(role_cfg), sleep=sleep)
        retrying[role] = wrapped
        if cache is not None and (role != "reasoner" or cfg.cache_reasoner):
            wrapped = CachedBackend(wrapped, cache)
        chat[role] = wrapped
    role_cfg = cfg.backends[EMBEDDER]
    emb = make_embedder(role_cfg)
    raw[EMBEDDER] = emb
    emb_wrapped: EmbedderClient = RetryingEmbedder(emb, _policy(role_cfg), sleep=sleep)
    retrying[EMBEDDER] = emb_wrapped
    if cache is not None:
        emb_wrapped = CachedEmbedder(emb_wrapped, cache)
    return Backends(chat, emb_wrapped, raw, retrying, cache)


@dataclass
class SampleOutcome:
    sample_id: str
    record: RunRecord | None = None
    error: str | None = None
    role: str | None = None
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.record is not None


@dataclass
class RunResult:
    exit_code: int
    outcomes: list[SampleOutcome]
    manifest: dict[str, Any]
    backends: Backends | None = None


def process_sample(
    sample: ImageSample,
    backends: Backends,
    cfg: AppConfig,
    sweep_cfg: SweepConfig,
    omit: Iterable[str] = (),
    template: PromptTemplate | None = None,
) -> SampleOutcome:
    timings: dict[str, float] = {}
    try:
        t0 = time.monotonic()
        bundle = decouple(
            sample, backends.chat["tagger"], backends.chat["captioner"], backends.chat["analyzer"],
            parallelism=cfg.agent_parallelism,
        )
        timings["decouple"] = time.monotonic() - t0
        prompt = build_prompt(bundle, omit=omit, template=template)
        t1 = time.monotonic()
        record = sweep(
            sample, bundle, backends.chat["reasoner"], backends.embedder, sweep_cfg,
            prompt=prompt, image=full_image(sample), global_seed=cfg.global_seed,
            parallelism=cfg.agent_parallelism,
        )
        timings["sweep"] = time.monotonic() - t1
    except SatireDecoderError as exc:
        role = getattr(exc, "role", None)
        log.error("sample %s failed (role=%s): %s", sample.id, role, exc)
        return SampleOutcome(sample.id, error=f"{type(exc).__name__}: {exc}", role=role, timings=timings)
    return SampleOutcome(sample.id, record=record, timings=timings)


def _check_reachable(backends: Backends) -> list[str]:
    problems = []
    for role, client in backends.raw.items():
        ping = getattr(client, "ping", None)
        if ping is None:
            continue
        try:
            ping()
        except SatireDecoderError as exc:
            problems.append(f"{role}: {exc}")
    return problems


def run_pipeline(
    cfg: AppConfig,
    *,
    dry_run: bool = False,
    no_uncertainty: bool = False,
    omit: Iterable[str] = (),
    sleep=time.sleep,
) -> RunResult:
    """Execute ``run``; raises only for fatal problems (bad dataset, unwritable output)."""
    omit = sorted(set(omit))
    manifest: Manifest = load_manifest(cfg.dataset_path, SplitRule(position=cfg.split_position))
    template = PromptTemplate.load(cfg.template_version, cfg.template_dir)
    cache = ResponseCache(cfg.cache_dir)
    backends = build_backends(cfg, cache, sleep=sleep)
    sweep_cfg = SweepConfig((cfg.no_uncertainty_temperature,), cfg.sweep.w1, cfg.sweep.w2, cfg.sweep.similarity) \
        if no_uncertainty else cfg.sweep

    if dry_run:
        problems = _check_reachable(backends)
        backends.close()
        for p in problems:
            log.error("backend unreachable: %s", p)
        doc = {"dry_run": True, "samples": len(manifest.samples), "problems": problems}
        return RunResult(EXIT_FATAL if problems else EXIT_OK, [], doc, backends)

    records_dir = cfg.output_dir / RECORDS_DIR
    records_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    try:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(
                lambda s: process_sample(s, backends, cfg, sweep_cfg, omit, template), manifest.samples
            ))
    finally:
        backends.close()

    entries = []
    for out in outcomes:
        entry: dict[str, Any] = {"id": out.sample_id, "status": "ok" if out.ok else "failed"}
        if out.ok:
            rel = f"{RECORDS_DIR}/{safe_filename(out.sample_id)}.json"
            write_atomic(cfg.output_dir / rel, dump_json(out.record.to_dict()))
            entry["record"] = rel
        else:
            entry.update(error=out.error, role=out.role)
            stale = records_dir / f"{safe_filename(out.sample_id)}.json"
            if stale.exists():
                stale.unlink()
        entries.append(entry)

    failed = [e["id"] for e in entries if e["status"] == "failed"]
    doc = {
        "version": "1",
        "dataset_path": str(cfg.dataset_path),
        "samples": entries,
        "failed": failed,
        "options": {
            "no_uncertainty": no_uncertainty,
            "omit": omit,
            "temperatures": list(sweep_cfg.temperatures),
            "weights": [sweep_cfg.w1, sweep_cfg.w2],
            "global_seed": cfg.global_seed,
            "template_version": template.version,
        },
        "backends": {role: role_cfg.describe() for role, role_cfg in cfg.backends.items()},
        "cache": cache.stats(),
        "backend_calls": backends.backend_calls(),
        "retries": backends.retries(),
        "timings": {
            "total": time.monotonic() - started,
            "per_sample": {o.sample_id: o.timings for o in outcomes},
        },
    }
    write_atomic(cfg.output_dir / RUN_MANIFEST, dump_json(doc))
    code = EXIT_PARTIAL if failed else EXIT_OK
    log.info("run finished: %d ok, %d failed", len(entries) - len(failed), len(failed))
    return RunResult(code, outcomes, doc, backends)


def load_records(run_dir: str | Path) -> list[RunRecord]:
    records_dir = Path(run_dir) / RECORDS_DIR
    if not records_dir.is_dir():
        return []
    return [
        RunRecord.from_dict(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted(records_dir.glob("*.json"))
    ]


def load_run_manifest(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / RUN_MANIFEST
    if not path.is_file():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))
