import pytest
from hypothesis import given
from hypothesis import strategies as st

from tilevl.grounding import (
    BoundingBox,
    BoxOrderError,
    CoordinateRangeError,
    GrammarError,
    GroundedMessage,
    GroundedSpan,
    PromptKind,
    build_prompt,
    denormalize_box,
    normalize_box,
    parse_boxes,
    parse_grounded,
    serialize_grounded,
    serialize_span,
)

DOGS_RESPONSE = (
    "Two <|ref|>dogs<|/ref|><|det|>[[100, 200, 300, 400]]<|/det|> are running on the grass."
)

safe_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=12).filter(
    lambda s: "<|" not in s and "|>" not in s
)
coord = st.integers(0, 999)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coord), draw(coord)))
    y1, y2 = sorted((draw(coord), draw(coord)))
    return BoundingBox(x1, y1, x2, y2)


spans = st.builds(
    GroundedSpan, safe_text.filter(bool), st.lists(boxes(), max_size=3).map(tuple)
)
messages = st.builds(
    GroundedMessage, st.lists(st.one_of(safe_text, spans), max_size=6).map(tuple), st.booleans()
)


def test_reference_response_parses():
    msg = parse_grounded(DOGS_RESPONSE)
    assert msg.segments == (
        "Two ",
        GroundedSpan("dogs", (BoundingBox(100, 200, 300, 400),)),
        " are running on the grass.",
    )
    assert len(msg.spans) == 1
    assert serialize_grounded(msg) == DOGS_RESPONSE


def test_plain_text():
    msg = parse_grounded("hello world")
    assert msg.segments == ("hello world",) and msg.spans == []


def test_serialize_examples():
    car = GroundedSpan("car", (BoundingBox(0, 0, 999, 999),))
    assert serialize_span(car) == "<|ref|>car<|/ref|><|det|>[[0, 0, 999, 999]]<|/det|>"
    cat = GroundedSpan("cat", ())
    assert serialize_span(cat) == "<|ref|>cat<|/ref|><|det|>[]<|/det|>"
    assert parse_grounded(serialize_span(cat)).spans == [cat]


def test_whitespace_tolerant_parse():
    msg = parse_grounded("<|grounding|><|ref|>a<|/ref|> <|det|>[[1,2,3,4],[5, 6,7 ,8]]<|/det|>")
    assert msg.grounding_prefix
    assert [b.as_tuple() for b in msg.spans[0].boxes] == [(1, 2, 3, 4), (5, 6, 7, 8)]


@pytest.mark.parametrize(
    "text, err",
    [
        ("<|det|>[[1,2,3,4]]<|/det|>", GrammarError),
        ("<|ref|>dog<|/ref|> no det here", GrammarError),
        ("<|ref|>dog<|det|>[]<|/det|>", GrammarError),
        ("<|ref|>dog<|/ref|><|det|>[[1,2,3]]<|/det|>", GrammarError),
        ("<|ref|>dog<|/ref|><|det|>[[1,2,3,4]]", GrammarError),
        ("<|ref|>dog<|/ref|><|det|>[[1,2,3,4]<|/det|>", GrammarError),
        ("<|ref|><|/ref|><|det|>[]<|/det|>", GrammarError),
        ("text <|/ref|>", GrammarError),
        ("<|ref|>dog<|/ref|><|det|>[[1,2,1000,4]]<|/det|>", CoordinateRangeError),
        ("<|ref|>dog<|/ref|><|det|>[[5,2,1,4]]<|/det|>", BoxOrderError),
    ],
)
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_grounded(text)


def test_parse_boxes_direct():
    assert parse_boxes(" [ ] ") == ()
    with pytest.raises(GrammarError):
        parse_boxes("[[1,2,3,4] [5,6,7,8]]")


def test_box_validation():
    with pytest.raises(CoordinateRangeError):
        BoundingBox(-1, 0, 0, 0)
    with pytest.raises(BoxOrderError):
        BoundingBox(0, 5, 0, 4)
    with pytest.raises(GrammarError):
        GroundedSpan("", ())


def test_message_canonicalises_text():
    assert GroundedMessage(("a", "", "b")).segments == ("ab",)


@given(messages)
def test_round_trip(msg):
    assert parse_grounded(serialize_grounded(msg)) == msg


def test_normalize_examples():
    assert normalize_box((0, 0, 640, 480), 640, 480).as_tuple() == (0, 0, 999, 999)
    assert normalize_box((500, 0, 500, 0), 1000, 10).x1 == 500
    assert normalize_box((0, 0, 2000, 5), 1000, 10).x2 == 999
    with pytest.raises(BoxOrderError):
        normalize_box((10, 0, 5, 1), 100, 100)
    with pytest.raises(ValueError):
        normalize_box((0, 0, 1, 1), 0, 10)


def test_denormalize_examples():
    assert denormalize_box(BoundingBox(0, 0, 999, 999), 640, 480) == (0.0, 0.0, 640.0, 480.0)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 5000))
def test_normalize_monotone(a, b, d):
    lo, hi = sorted((a * d, b * d))
    n = normalize_box((lo, lo, hi, hi), d, d)
    assert n.x1 <= n.x2


@given(st.floats(0, 1), st.integers(1, 5000), st.integers(1, 5000))
def test_quantization_bound(t, w, h):
    x, y = t * w, t * h
    back = denormalize_box(normalize_box((x, y, x, y), w, h), w, h)
    assert abs(back[0] - x) <= w / 999
    assert abs(back[1] - y) <= h / 999


def test_prompts():
    assert build_prompt(PromptKind.LOCATE, "car") == "Locate <|ref|>car<|/ref|> in the given image."
    assert (
        build_prompt(PromptKind.GROUNDED_CONVERSATION)
        == "<|grounding|>Can you describe the content of the image?"
    )
    assert build_prompt(PromptKind.IN_CONTEXT, "an object within the red bounding box") == (
        "<|grounding|>The first image shows an object within the red bounding box."
        "Please identify the object of the same category in the second image."
    )
    with pytest.raises(ValueError):
        build_prompt(PromptKind.LOCATE, "")
