"""Uncertainty scores and the temperature sweep.

For each temperature the reasoner answers the three subtasks; subtask 1 is
scored against the agents' tags (negated Jaccard), subtask 2 against the
agents' captions (negated embedding similarity). The subtask-3 answer of the
trace with the lowest combined score is the final interpretation.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import ChatBackend, EmbedderClient, EmbeddingVector, embed
from .backends.sampling import temperature_softmax  # noqa: F401  (re-exported)
from .core import Caption, ImageRef, ImageSample, RunRecord, SemanticBundle, SubtaskTrace, TagSet, argmin_trace, derive_seed
from .cot import CotPrompt, build_prompt, run_subtasks
from .decouple import full_image
from .errors import InvalidInput, SatireDecoderError, SweepError, ZeroVectorError

log = logging.getLogger(__name__)

SIMILARITY_MODES = ("sentence_cosine", "token_greedy_f")
DEFAULT_TEMPERATURES = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class SweepConfig:
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    w1: float = 0.5
    w2: float = 0.5
    # None picks token_greedy_f when the embedder has token granularity
    similarity: str | None = None

    def __post_init__(self) -> None:
        temps = tuple(float(t) for t in self.temperatures)
        object.__setattr__(self, "temperatures", temps)
        if not temps:
            raise InvalidInput("temperature grid is empty")
        if any(t <= 0 or t > 2 for t in temps):
            raise InvalidInput("temperatures must lie in (0, 2]")
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise InvalidInput("temperatures must be strictly ascending")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise InvalidInput("weights must be >= 0 with a positive sum")
        if self.similarity is not None and self.similarity not in SIMILARITY_MODES:
            raise InvalidInput(f"unknown similarity mode {self.similarity!r}")

    def resolve_similarity(self, embedder: EmbedderClient) -> str:
        if self.similarity is not None:
            return self.similarity
        return "token_greedy_f" if embedder.supports_tokens else "sentence_cosine"


def jaccard(a: TagSet, b: TagSet) -> float:
    """|a & b| / |a | b|, with 1.0 for two empty sets."""
    union = a.tags | b.tags
    if not union:
        return 1.0
    return len(a.tags & b.tags) / len(union)


def u1(reference: TagSet, r1: TagSet) -> float:
    return -jaccard(reference, r1)


def _unit_rows(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    m = np.array([v.values for v in vectors], dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVectorError("token embedding is all zeros")
    return m / norms


def greedy_f(reference: Sequence[EmbeddingVector], candidate: Sequence[EmbeddingVector]) -> float:
    """BERTScore-style F without IDF weighting or baseline rescaling.

    Precision averages, over candidate tokens, the best cosine to any
    reference token; recall does the same from the reference side.
    """
    sim = _unit_rows(candidate) @ _unit_rows(reference).T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def semantic_similarity(a: Caption | str, b: Caption | str, embedder: EmbedderClient, mode: str = "token_greedy_f") -> float:
    """Similarity of candidate ``b`` to reference ``a``."""
    a_text, b_text = str(a), str(b)
    if not a_text.strip() or not b_text.strip():
        raise InvalidInput("similarity needs two non-empty texts")
    if mode == "sentence_cosine":
        ea, eb = embed(embedder, a_text, "sentence"), embed(embedder, b_text, "sentence")
        x, y = _unit_rows([ea])[0], _unit_rows([eb])[0]
        return float(np.clip(x @ y, -1.0, 1.0))
    if mode == "token_greedy_f":
        ta = [v for _, v in embed(embedder, a_text, "tokens")]
        tb = [v for _, v in embed(embedder, b_text, "tokens")]
        return greedy_f(ta, tb)
    raise InvalidInput(f"unknown similarity mode {mode!r}")


def u2(reference: Caption, r2: Caption, embedder: EmbedderClient, mode: str = "token_greedy_f") -> float:
    return -semantic_similarity(reference, r2, embedder, mode)


def select(traces: Sequence[SubtaskTrace]) -> int:
    """Index of the minimum-u_combined trace (ties: lowest temperature)."""
    best = argmin_trace(traces)
    if best is None:
        raise SweepError("every temperature failed")
    return best


def sweep(
    sample: ImageSample,
    bundle: SemanticBundle,
    reasoner: ChatBackend,
    embedder: EmbedderClient,
    cfg: SweepConfig = SweepConfig(),
    *,
    prompt: CotPrompt | None = None,
    image: ImageRef | None = None,
    global_seed: int = 0,
    parallelism: int = 1,
) -> RunRecord:
    """Run the subtasks at every grid temperature and keep the least uncertain.

    A temperature whose run fails (after the parse retry) is kept as a failed
    trace and excluded from selection; if all fail, :class:`SweepError`.
    """
    prompt = prompt or build_prompt(bundle)
    image = image or full_image(sample)
    mode = cfg.resolve_similarity(embedder)
    reference_tags = bundle.reference_tags
    reference_caption = bundle.reference_caption

    def one(temperature: float) -> SubtaskTrace:
        seed = derive_seed(global_seed, sample.id, "reasoner", temperature)
        try:
            resp = run_subtasks(reasoner, image, prompt, temperature, seed=seed)
            score1 = u1(reference_tags, resp.r1)
            score2 = u2(reference_caption, resp.r2, embedder, mode)
        except SatireDecoderError as exc:
            log.warning("sample %s failed at T=%s: %s", sample.id, temperature, exc)
            retries = 1 if getattr(exc, "raw_outputs", None) and len(exc.raw_outputs) == 2 else 0
            return SubtaskTrace(temperature, error=f"{type(exc).__name__}: {exc}", parse_retries=retries)
        return SubtaskTrace(
            temperature=temperature,
            r1=resp.r1,
            r2=resp.r2,
            r3=resp.r3,
            u1=score1,
            u2=score2,
            u_combined=cfg.w1 * score1 + cfg.w2 * score2,
            parse_retries=resp.retry_count,
        )

    start = time.monotonic()
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        traces = list(pool.map(one, cfg.temperatures))
    elapsed = time.monotonic() - start

    best = argmin_trace(traces)
    if best is None:
        raise SweepError(
            f"all {len(traces)} temperatures failed for sample {sample.id}",
            sample_id=sample.id,
            errors=[t.error or "" for t in traces],
        )
    return RunRecord(
        sample_id=sample.id,
        bundle=bundle,
        traces=tuple(traces),
        selected=best,
        selected_by_u1=argmin_trace(traces, "u1"),
        selected_by_u2=argmin_trace(traces, "u2"),
        weights=(cfg.w1, cfg.w2),
        similarity=mode,
        prompt_system=prompt.system_text,
        prompt_user=prompt.user_text,
        timings={"sweep": elapsed},
    )
