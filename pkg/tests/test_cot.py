import pytest
from hypothesis import given, settings, strategies as st

from satiredecoder.backends import ScriptedBackend
from satiredecoder.core import Caption, ImageRef, SemanticBundle, TagSet
from satiredecoder.cot import (
    FIELDS,
    SubtaskResponse,
    build_prompt,
    parse_subtask_response,
    render_subtask_response,
    run_subtasks,
)
from satiredecoder.errors import InvalidInput, ParseError

from conftest import png_bytes

IMG = ImageRef("s0", png_bytes())
WELL_FORMED = "SUBTASK1: cat, dog\nSUBTASK2: a scene\nSUBTASK3: satire about X"


def bundle(**kw):
    base = dict(
        le_yes=TagSet.of(["dog"]), le_but=TagSet.of(["cat", "phone"]),
        gs_yes=Caption("a dog sleeps"), gs_but=Caption("a cat stares at a phone"),
        d_local="the dog is replaced by a cat", d_global="rest turns into distraction",
    )
    base.update(kw)
    return SemanticBundle(**base)


def test_prompt_deterministic_and_complete():
    a, b = build_prompt(bundle()), build_prompt(bundle())
    assert a == b
    text = a.user_text
    for value in ("dog", "cat, phone", "a dog sleeps", "a cat stares at a phone",
                  "the dog is replaced by a cat", "rest turns into distraction"):
        assert value in text
    positions = [text.index(f"Subtask {i}") for i in (1, 2, 3)]
    assert positions == sorted(positions)
    assert "in conjunction with social issues" in text
    for label in ("SUBTASK1:", "SUBTASK2:", "SUBTASK3:"):
        assert label in text


def test_none_discrepancy_verbatim():
    assert "Differences between the objects: (none)" in build_prompt(bundle(d_local="(none)")).user_text


def test_prompt_locality():
    a = build_prompt(bundle()).user_text.splitlines()
    b = build_prompt(bundle(gs_but=Caption("a cat naps"))).user_text.splitlines()
    diff = [(x, y) for x, y in zip(a, b) if x != y]
    assert len(a) == len(b) and diff == [
        ("Description of the BUT scene: a cat stares at a phone", "Description of the BUT scene: a cat naps")]


def test_empty_tags_rendered_as_none():
    assert "Objects in the YES scene: (none)" in build_prompt(bundle(le_yes=TagSet())).user_text


@pytest.mark.parametrize("group,gone", [("le", "Objects in"), ("gs", "Description of"), ("da", "Differences between")])
def test_ablation_removes_only_its_sections(group, gone):
    full = build_prompt(bundle()).user_text.splitlines()
    cut = build_prompt(bundle(), omit=[group]).user_text.splitlines()
    removed = [line for line in full if line not in cut]
    assert len(removed) == 2 and all(line.startswith(gone) for line in removed)
    assert [line for line in full if line not in removed] == cut


def test_unknown_ablation_rejected():
    with pytest.raises(InvalidInput):
        build_prompt(bundle(), omit=["xx"])


def test_parse_examples():
    r = parse_subtask_response(WELL_FORMED)
    assert (r.r1.sorted(), r.r2.text, r.r3) == (["cat", "dog"], "a scene", "satire about X")
    with pytest.raises(ParseError) as ei:
        parse_subtask_response("SUBTASK1: cat\nSUBTASK3: x")
    assert ei.value.section == 2
    shuffled = parse_subtask_response("SUBTASK3: satire about X\nSUBTASK1: cat, dog\nSUBTASK2: a scene")
    assert shuffled == r


def test_parse_empty_section():
    with pytest.raises(ParseError) as ei:
        parse_subtask_response("SUBTASK1:\nSUBTASK2: a\nSUBTASK3: b")
    assert ei.value.section == 1


safe_word = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8)
tag = st.lists(safe_word, min_size=1, max_size=3).map(" ".join)
sentence = st.lists(safe_word, min_size=1, max_size=10).map(" ".join)


@given(st.sets(tag, min_size=1, max_size=6), sentence, sentence)
def test_render_parse_round_trip(tags, caption, r3):
    resp = SubtaskResponse(TagSet.of(tags), Caption(caption), r3)
    assert parse_subtask_response(render_subtask_response(resp)) == resp


@settings(max_examples=50)
@given(st.tuples(*[sentence] * 6), st.tuples(*[sentence] * 6))
def test_build_prompt_injective(a, b):
    def mk(v):
        return SemanticBundle(TagSet.of([v[0]]), TagSet.of([v[1]]), Caption(v[2]), Caption(v[3]), v[4], v[5])

    if a != b:
        assert build_prompt(mk(a)).user_text != build_prompt(mk(b)).user_text


def test_run_subtasks_first_try():
    reasoner = ScriptedBackend([WELL_FORMED])
    r = run_subtasks(reasoner, IMG, build_prompt(bundle()), 0.4, seed=3)
    assert r.retry_count == 0 and len(reasoner.requests) == 1
    req = reasoner.requests[0]
    assert req.temperature == 0.4 and req.seed == 3 and req.attachments[0].name == "s0"


def test_run_subtasks_retry_then_success():
    reasoner = ScriptedBackend(["garbage", WELL_FORMED])
    r = run_subtasks(reasoner, IMG, build_prompt(bundle()), 0.4)
    assert r.retry_count == 1 and len(reasoner.requests) == 2
    assert reasoner.requests[1].user_text.startswith(reasoner.requests[0].user_text)
    assert len(reasoner.requests[1].user_text) > len(reasoner.requests[0].user_text)


def test_run_subtasks_two_failures():
    reasoner = ScriptedBackend(["garbage one", "garbage two", WELL_FORMED])
    with pytest.raises(ParseError) as ei:
        run_subtasks(reasoner, IMG, build_prompt(bundle()), 0.4)
    assert ei.value.raw_outputs == ["garbage one", "garbage two"]
    assert len(reasoner.requests) == 2


def test_all_fields_have_placeholders():
    assert len(FIELDS) == 6
