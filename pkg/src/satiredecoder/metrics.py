"""Evaluation metrics: BLEU, ROUGE-L, METEOR-lite, embedding F and CHAIR.

All metrics compare token lists produced by :func:`tokenize`, so they are
case-insensitive and ignore punctuation.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .backends.base import EmbedderClient
from .errors import InvalidInput
from .text import split_sentences, stem, tokenize
from .uncertainty import semantic_similarity

__all__ = [
    "ChairCounts",
    "MetricReport",
    "SampleMetrics",
    "aggregate",
    "bleu",
    "chair",
    "embed_f",
    "evaluate_sample",
    "extract_object_mentions",
    "lcs_length",
    "meteor_lite",
    "rouge_l",
    "tokenize",
]

BLEU_EPSILON = 1e-9
NLG_METRICS = ("bleu", "rouge_l", "meteor", "embed_f")


def _require_reference(reference: str) -> list[str]:
    tokens = tokenize(reference)
    if not tokens:
        raise InvalidInput("reference text is empty")
    return tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU with a single reference.

    Zero n-gram precisions are replaced by 1e-9 so one missing order does
    not zero the whole score; the brevity penalty is the usual exp(1 - r/c).
    """
    if max_n < 1:
        raise InvalidInput("max_n must be >= 1")
    ref = _require_reference(reference)
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        ref_ngrams = _ngrams(ref, n)
        clipped = sum(min(count, ref_ngrams[g]) for g, count in cand_ngrams.items())
        precision = clipped / total if total else 0.0
        log_sum += math.log(precision if precision > 0 else BLEU_EPSILON)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    ref = _require_reference(reference)
    cand = tokenize(candidate)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def _align(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy left-to-right unigram alignment: exact stage, then stem stage."""
    used_ref: set[int] = set()
    pairs: dict[int, int] = {}
    for key in (lambda t: t, stem):
        ref_keys = [key(t) for t in ref]
        for i, tok in enumerate(cand):
            if i in pairs:
                continue
            k = key(tok)
            for j, rk in enumerate(ref_keys):
                if j not in used_ref and rk == k:
                    pairs[i] = j
                    used_ref.add(j)
                    break
    return sorted(pairs.items())


def _chunks(pairs: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev: tuple[int, int] | None = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate: str, reference: str) -> float:
    """METEOR with exact and stem matching only (no synonym lexicon).

    F_mean = 10PR / (R + 9P), penalty = 0.5 * (chunks / matches)**3,
    score = F_mean * (1 - penalty).
    """
    ref = _require_reference(reference)
    cand = tokenize(candidate)
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (_chunks(pairs) / m) ** 3
    return f_mean * (1 - penalty)


def embed_f(candidate: str, reference: str, embedder: EmbedderClient) -> float:
    return semantic_similarity(reference, candidate, embedder, "token_greedy_f")


def _name_forms(obj: str, synonyms: Mapping[str, Iterable[str]]) -> list[tuple[str, ...]]:
    forms = [obj, *synonyms.get(obj, ())]
    out = []
    for form in forms:
        toks = tuple(stem(t) for t in tokenize(form))
        if toks:
            out.append(toks)
    return out


def _contains_run(tokens: Sequence[str], run: Sequence[str]) -> bool:
    n = len(run)
    return any(tuple(tokens[i : i + n]) == tuple(run) for i in range(len(tokens) - n + 1))


def extract_object_mentions(
    text: str, vocabulary: Iterable[str], synonyms: Mapping[str, Iterable[str]] | None = None
) -> set[str]:
    """Canonical objects whose name or an alias occurs as a contiguous token run.

    Matching is on stemmed tokens, so plural mentions count ("dogs" -> dog).
    """
    vocabulary = set(vocabulary)
    if not vocabulary:
        raise InvalidInput("object vocabulary is empty")
    synonyms = synonyms or {}
    tokens = [stem(t) for t in tokenize(text)]
    return {obj for obj in vocabulary if any(_contains_run(tokens, f) for f in _name_forms(obj, synonyms))}


@dataclass(frozen=True)
class ChairCounts:
    hallucinated_objects: int
    total_objects: int
    hallucinated_sentences: int
    total_sentences: int

    def __post_init__(self) -> None:
        if not 0 <= self.hallucinated_objects <= self.total_objects:
            raise InvalidInput("hallucinated objects must be within [0, total]")
        if not 0 <= self.hallucinated_sentences <= self.total_sentences:
            raise InvalidInput("hallucinated sentences must be within [0, total]")

    @property
    def chair_i(self) -> float | None:
        return self.hallucinated_objects / self.total_objects if self.total_objects else None

    @property
    def chair_s(self) -> float | None:
        return self.hallucinated_sentences / self.total_sentences if self.total_sentences else None

    def __add__(self, other: "ChairCounts") -> "ChairCounts":
        return ChairCounts(
            self.hallucinated_objects + other.hallucinated_objects,
            self.total_objects + other.total_objects,
            self.hallucinated_sentences + other.hallucinated_sentences,
            self.total_sentences + other.total_sentences,
        )


def chair(
    generated: str,
    gold_objects: Iterable[str],
    mention_vocabulary: Iterable[str],
    synonyms: Mapping[str, Iterable[str]] | None = None,
) -> ChairCounts:
    """Object- and sentence-level hallucination counts.

    Each sentence (split on ``.?!``) contributes its distinct mentioned
    objects; a mention is hallucinated when its object is not gold.
    """
    gold, vocab = set(gold_objects), set(mention_vocabulary)
    if not gold <= vocab:
        raise InvalidInput(f"gold objects {sorted(gold - vocab)} missing from the mention vocabulary")
    h_o = n_o = h_s = 0
    sentences = split_sentences(generated)
    for sentence in sentences:
        mentions = extract_object_mentions(sentence, vocab, synonyms)
        hallucinated = mentions - gold
        n_o += len(mentions)
        h_o += len(hallucinated)
        h_s += bool(hallucinated)
    return ChairCounts(h_o, n_o, h_s, len(sentences))


@dataclass(frozen=True)
class SampleMetrics:
    sample_id: str
    bleu: float
    rouge_l: float
    meteor: float
    embed_f: float
    chair: ChairCounts | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in NLG_METRICS}
        d["chair_counts"] = asdict(self.chair) if self.chair else None
        d["chair_i"] = self.chair.chair_i if self.chair else None
        d["chair_s"] = self.chair.chair_s if self.chair else None
        return d


@dataclass
class MetricReport:
    per_sample: dict[str, SampleMetrics]
    corpus: dict[str, float | None]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "corpus": dict(self.corpus),
            "per_sample": {sid: m.to_dict() for sid, m in sorted(self.per_sample.items())},
            "metadata": dict(self.metadata),
        }

    def table(self) -> str:
        cols = ["bleu", "rouge_l", "meteor", "embed_f", "chair_i", "chair_s"]
        width = max([len("sample"), len("CORPUS"), *(len(s) for s in self.per_sample)])
        lines = [f"{'sample':<{width}}  " + "  ".join(f"{c:>8}" for c in cols)]
        for sid, m in sorted(self.per_sample.items()):
            row = m.to_dict()
            lines.append(f"{sid:<{width}}  " + "  ".join(_fmt(row[c]) for c in cols))
        lines.append(f"{'CORPUS':<{width}}  " + "  ".join(_fmt(self.corpus[c]) for c in cols))
        lines.append(f"AVE = {_fmt(self.corpus['ave']).strip()}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        cols = ["bleu", "rouge_l", "meteor", "embed_f", "chair_i", "chair_s"]
        writer.writerow(["sample_id", *cols])
        for sid, m in sorted(self.per_sample.items()):
            row = m.to_dict()
            writer.writerow([sid, *("" if row[c] is None else row[c] for c in cols)])
        writer.writerow(["CORPUS", *("" if self.corpus[c] is None else self.corpus[c] for c in cols)])
        return buf.getvalue()


def _fmt(v: float | None) -> str:
    return f"{'-':>8}" if v is None else f"{v:8.4f}"


def aggregate(results: Sequence[SampleMetrics]) -> MetricReport:
    """Corpus report: NLG metrics are macro means, CHAIR is micro-averaged."""
    if not results:
        raise InvalidInput("cannot aggregate an empty list of results")
    corpus: dict[str, float | None] = {k: math.fsum(getattr(r, k) for r in results) / len(results) for k in NLG_METRICS}
    corpus["ave"] = math.fsum(corpus[k] for k in NLG_METRICS) / len(NLG_METRICS)
    counts = [r.chair for r in results if r.chair is not None]
    total = sum(counts[1:], counts[0]) if counts else None
    corpus["chair_i"] = total.chair_i if total else None
    corpus["chair_s"] = total.chair_s if total else None
    return MetricReport(
        per_sample={r.sample_id: r for r in results},
        corpus=corpus,
        metadata={
            "nlg_average": "macro mean over samples",
            "chair_average": "micro (summed counts)",
            "chair_samples": len(counts),
            "samples": len(results),
        },
    )


def evaluate_sample(
    sample_id: str,
    generated: str,
    gold_description: str,
    embedder: EmbedderClient,
    *,
    gold_objects: Iterable[str] = (),
    vocabulary: Iterable[str] = (),
    synonyms: Mapping[str, Iterable[str]] | None = None,
) -> SampleMetrics:
    """All metrics for one generated interpretation.

    CHAIR is skipped (None) when the sample has no gold objects.
    """
    gold = set(gold_objects)
    counts = chair(generated, gold, gold | set(vocabulary), synonyms) if gold else None
    return SampleMetrics(
        sample_id=sample_id,
        bleu=bleu(generated, gold_description),
        rouge_l=rouge_l(generated, gold_description),
        meteor=meteor_lite(generated, gold_description),
        embed_f=embed_f(generated, gold_description, embedder),
        chair=counts,
    )
