import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satiredecoder.backends import MockEmbedder, ScriptedBackend
from satiredecoder.backends.base import ChatRequest
from satiredecoder.core import Caption, SemanticBundle, TagSet
from satiredecoder.cot import SubtaskResponse, render_subtask_response
from satiredecoder.errors import InvalidInput, SweepError
from satiredecoder.text import tokenize
from satiredecoder.uncertainty import SweepConfig, jaccard, select, semantic_similarity, sweep, u1, u2

from conftest import make_sample

T = TagSet.of
SAMPLE = make_sample(0)
BUNDLE = SemanticBundle(T(["dog"]), T(["cat"]), Caption("a dog sleeps"), Caption("a cat eats"), "dl", "dg")


def test_jaccard_examples():
    assert jaccard(T("abc"), T("bcd")) == 0.5
    assert jaccard(T("ab"), T("ab")) == 1.0
    assert jaccard(T("ab"), T("cd")) == 0.0
    assert jaccard(T([]), T([])) == 1.0
    assert u1(T("ab"), T("ab")) == -1.0
    assert u1(T("ab"), T("cd")) == 0.0
    assert u1(T("abc"), T("bcd")) == -0.5


@given(st.sets(st.sampled_from("abcdefg")), st.sets(st.sampled_from("abcdefg")), st.sampled_from("abcdefg"))
def test_jaccard_properties(a, b, x):
    A, B = T(a), T(b)
    assert jaccard(A, B) == jaccard(B, A)
    assert -1 <= u1(A, B) <= 0
    assert (u1(A, B) == -1) == (a == b)
    if x in b and x not in a:
        assert jaccard(T(a | {x}), B) >= jaccard(A, B)


# -- embedding similarity ------------------------------------------------------

def oracle_greedy_f(emb, ref, cand):
    """Enumerate every (candidate, reference) token pair with plain floats."""
    def vec(t):
        return [float(x) for x in emb.token_vector(t)]

    def cos(x, y):
        return sum(a * b for a, b in zip(x, y)) / math.sqrt(sum(a * a for a in x) * sum(b * b for b in y))

    R = [vec(t) for t in tokenize(ref)]
    C = [vec(t) for t in tokenize(cand)]
    p = sum(max(cos(c, r) for r in R) for c in C) / len(C)
    rc = sum(max(cos(r, c) for c in C) for r in R) / len(R)
    return 2 * p * rc / (p + rc)


def test_three_vs_two_tokens_matches_oracle():
    emb = MockEmbedder()
    got = semantic_similarity("a dog sleeps", "cat naps", emb, "token_greedy_f")
    assert got == pytest.approx(oracle_greedy_f(emb, "a dog sleeps", "cat naps"), abs=1e-9)
    assert u2(Caption("a dog sleeps"), Caption("cat naps"), emb) == pytest.approx(-got, abs=1e-12)


def test_self_similarity_and_exact_match_saturation():
    emb = MockEmbedder()
    for mode in ("token_greedy_f", "sentence_cosine"):
        assert semantic_similarity("a cat eats", "a cat eats", emb, mode) == pytest.approx(1.0, abs=1e-6)
    assert semantic_similarity("dog cat", "cat dog dog", emb) == pytest.approx(1.0, abs=1e-9)


def test_orthogonal_embeddings():
    emb = MockEmbedder(dim=2, table={"dog": [1, 0], "cat": [0, 1]})
    assert u2(Caption("dog"), Caption("cat"), emb) == pytest.approx(0.0, abs=1e-12)
    assert semantic_similarity("dog", "cat", emb, "sentence_cosine") == pytest.approx(0.0, abs=1e-12)


def test_unknown_mode():
    with pytest.raises(InvalidInput):
        semantic_similarity("a", "b", MockEmbedder(), "idf")


# -- sweep -------------------------------------------------------------------

class ByTemperature:
    """Reasoner whose reply depends only on the request temperature."""

    model_name = "by-temp"

    def __init__(self, replies):
        self.replies = replies
        self.requests = []

    def complete(self, request: ChatRequest) -> str:
        self.requests.append(request)
        reply = self.replies[request.temperature]
        if isinstance(reply, Exception):
            raise reply
        return reply


def reply(tags, caption, r3="interpretation"):
    return render_subtask_response(SubtaskResponse(T(tags), Caption(caption), r3))


def test_constructed_minimum_at_04():
    replies = {t: reply(["robot"], "something else entirely") for t in (0.2, 0.6, 0.8, 1.0)}
    replies[0.4] = reply(["dog", "cat"], "a dog sleeps a cat eats", "the answer")
    rec = sweep(SAMPLE, BUNDLE, ByTemperature(replies), MockEmbedder())
    assert rec.selected_trace.temperature == 0.4
    assert rec.selected_trace.u_combined == pytest.approx(-1.0, abs=1e-9)
    assert rec.selected_trace.r3 == "the answer"
    assert len(rec.traces) == 5


def test_identical_responses_tie_to_lowest():
    rec = sweep(SAMPLE, BUNDLE, ScriptedBackend([reply(["dog"], "a dog")]), MockEmbedder())
    assert rec.selected == 0 and rec.selected_trace.temperature == 0.2


def test_failed_temperatures_excluded_and_all_failed():
    replies = {t: reply(["dog", "cat"], "a dog sleeps a cat eats") for t in (0.2, 0.4, 0.6, 0.8, 1.0)}
    replies[0.2] = "nonsense"
    rec = sweep(SAMPLE, BUNDLE, ByTemperature(replies), MockEmbedder())
    assert rec.traces[0].failed and rec.traces[0].parse_retries == 1
    assert rec.selected == 1
    with pytest.raises(SweepError):
        sweep(SAMPLE, BUNDLE, ScriptedBackend(["nonsense"]), MockEmbedder())


def test_select_on_given_scores():
    from satiredecoder.core import SubtaskTrace

    scores = [-0.3, -0.7, -0.7, -0.2, -0.5]
    traces = [SubtaskTrace(t, T(["x"]), Caption("c"), "r", -0.5, -0.5, s)
              for t, s in zip((0.2, 0.4, 0.6, 0.8, 1.0), scores)]
    assert select(traces) == 1


VOCAB = ["dog", "cat", "phone", "robot", "tree", "cup"]
WORDS = ["a", "dog", "cat", "sleeps", "eats", "phone", "robot", "runs"]


def random_replies(rng, temps):
    return {
        t: reply(rng.sample(VOCAB, rng.randint(1, 4)), " ".join(rng.choices(WORDS, k=rng.randint(1, 6))))
        for t in temps
    }


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from([1, 2, 4, 0.5]))
def test_weight_scaling_keeps_selection(rng, k):
    temps = (0.2, 0.4, 0.6, 0.8, 1.0)
    replies = random_replies(rng, temps)
    emb = MockEmbedder()
    a = sweep(SAMPLE, BUNDLE, ByTemperature(replies), emb, SweepConfig(temps, 0.3, 0.7))
    b = sweep(SAMPLE, BUNDLE, ByTemperature(replies), emb, SweepConfig(temps, 0.3 * k, 0.7 * k))
    assert a.selected == b.selected


def test_permuted_grid_same_selection():
    rng = random.Random(5)
    temps = [0.2, 0.4, 0.6, 0.8, 1.0]
    replies = random_replies(rng, temps)
    base = sweep(SAMPLE, BUNDLE, ByTemperature(replies), MockEmbedder(), SweepConfig(tuple(temps)))
    shuffled = temps[:]
    rng.shuffle(shuffled)
    again = sweep(SAMPLE, BUNDLE, ByTemperature(replies), MockEmbedder(), SweepConfig(tuple(sorted(shuffled))))
    assert again.selected_trace == base.selected_trace


def test_sweep_config_validation():
    for bad in (dict(temperatures=()), dict(temperatures=(0.4, 0.2)), dict(temperatures=(0.0,)),
                dict(w1=0, w2=0), dict(w1=-1), dict(similarity="x")):
        with pytest.raises(InvalidInput):
            SweepConfig(**bad)


def test_call_bound():
    reasoner = ScriptedBackend(["nonsense"])
    with pytest.raises(SweepError):
        sweep(SAMPLE, BUNDLE, reasoner, MockEmbedder())
    assert len(reasoner.requests) == 2 * 5


def test_seeds_differ_per_temperature():
    replies = {t: reply(["dog"], "a dog") for t in (0.2, 0.4, 0.6, 0.8, 1.0)}
    r = ByTemperature(replies)
    sweep(SAMPLE, BUNDLE, r, MockEmbedder())
    assert len({q.seed for q in r.requests}) == 5
