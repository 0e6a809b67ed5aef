import pytest
from hypothesis import given, settings, strategies as st

from satiredecoder.backends import FailureRule, MockBackend
from satiredecoder.core import ImageRef
from satiredecoder.decouple import SplitRule, decouple, image_size, join_halves, split_image
from satiredecoder.errors import AgentError, DecodeError, InvalidInput

from conftest import make_sample, png_bytes


@pytest.mark.parametrize("width,left,right", [(100, 50, 50), (101, 50, 51)])
def test_split_sizes(width, left, right):
    yes, but = split_image(ImageRef("x", png_bytes((width, 40))))
    assert image_size(yes) == (left, 40)
    assert image_size(but) == (right, 40)
    assert (yes.id, but.id) == ("x:yes", "x:but")


def test_split_rejects_text():
    with pytest.raises(DecodeError):
        split_image(ImageRef("x", b"not an image at all"))


def test_split_rule_validation():
    with pytest.raises(InvalidInput):
        SplitRule(position=1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 300), st.integers(1, 60))
def test_split_join_dimensions(w, h):
    img = ImageRef("x", png_bytes((w, h)))
    yes, but = split_image(img)
    assert abs(image_size(yes)[0] - image_size(but)[0]) <= 1
    assert image_size(join_halves(yes, but, "x")) == (w, h)


def _scripted():
    return (
        MockBackend(tags={"s0:yes": ["Dog", "dog "], "s0:but": ["cat"]}),
        MockBackend(captions={"s0:yes": "a dog sleeps", "s0:but": "a cat eats"}),
        MockBackend(analyzer_template="{mode}({a}|{b})"),
    )


def test_bundle_from_scripted_agents():
    tagger, captioner, analyzer = _scripted()
    b = decouple(make_sample(0), tagger, captioner, analyzer)
    assert b.le_yes.sorted() == ["dog"] and b.le_but.sorted() == ["cat"]
    assert (b.gs_yes.text, b.gs_but.text) == ("a dog sleeps", "a cat eats")
    assert b.d_local == "local(dog|cat)"
    assert b.d_global == "global(a dog sleeps|a cat eats)"


def test_cascade_ordering_uses_exact_stage_outputs():
    tagger, captioner, analyzer = _scripted()
    decouple(make_sample(0), tagger, captioner, analyzer)
    sides = sorted(r.user_text for r in analyzer.requests)
    assert sides == ["<A>\na dog sleeps\n</A>\n<B>\na cat eats\n</B>", "<A>\ndog\n</A>\n<B>\ncat\n</B>"]


def test_tagger_failure_on_but_half():
    tagger = MockBackend(failures=[FailureRule("tagger", match="s0:but")])
    _, captioner, analyzer = _scripted()
    with pytest.raises(AgentError) as ei:
        decouple(make_sample(0), tagger, captioner, analyzer)
    assert (ei.value.role, ei.value.half, ei.value.sample_id) == ("tagger", "but", "s0")


def test_empty_tags_render_as_none():
    tagger = MockBackend(tags={"s0:yes": [], "s0:but": []})
    _, captioner, analyzer = _scripted()
    b = decouple(make_sample(0), tagger, captioner, analyzer)
    assert len(b.le_yes) == 0 and b.d_local == "local((none)|(none))"


def test_decouple_deterministic():
    s = make_sample(3)
    a = decouple(s, MockBackend(), MockBackend(), MockBackend())
    b = decouple(s, MockBackend(), MockBackend(), MockBackend(), parallelism=1)
    assert a == b
