"""Grounding token grammar: ``<|ref|>phrase<|/ref|><|det|>[[x1, y1, x2, y2], ...]<|/det|>``.

Box coordinates are integers in [0, 999], normalised against the original
image size. An absent object is written with an empty list ``[]``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .numcore import round_half_away

GROUNDING = "<|grounding|>"
REF_OPEN, REF_CLOSE = "<|ref|>", "<|/ref|>"
DET_OPEN, DET_CLOSE = "<|det|>", "<|/det|>"
SPECIAL_TOKENS = (GROUNDING, REF_OPEN, REF_CLOSE, DET_OPEN, DET_CLOSE)
COORD_MAX = 999


class GroundingError(ValueError):
    pass


class GrammarError(GroundingError):
    pass


class CoordinateRangeError(GroundingError):
    pass


class BoxOrderError(GroundingError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not 0 <= v <= COORD_MAX:
                raise CoordinateRangeError(f"coordinate {v} outside [0, {COORD_MAX}]")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise BoxOrderError(f"corners out of order: {self.as_tuple()}")

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class GroundedSpan:
    ref_text: str
    boxes: tuple = ()

    def __post_init__(self):
        if not self.ref_text:
            raise GrammarError("reference text must be non-empty")
        if any(tok in self.ref_text for tok in SPECIAL_TOKENS):
            raise GrammarError("reference text may not contain special tokens")
        object.__setattr__(self, "boxes", tuple(self.boxes))


Segment = Union[str, GroundedSpan]


@dataclass(frozen=True)
class GroundedMessage:
    """Text and grounded spans in order.

    Adjacent text segments are merged and empty ones dropped, so equal
    messages have one canonical segment list.
    """

    segments: tuple = ()
    grounding_prefix: bool = False

    def __post_init__(self):
        merged: list = []
        for seg in self.segments:
            if isinstance(seg, str):
                if any(tok in seg for tok in SPECIAL_TOKENS):
                    raise GrammarError(f"plain text contains a special token: {seg!r}")
                if not seg:
                    continue
                if merged and isinstance(merged[-1], str):
                    merged[-1] += seg
                    continue
            elif not isinstance(seg, GroundedSpan):
                raise TypeError(f"unexpected segment {seg!r}")
            merged.append(seg)
        object.__setattr__(self, "segments", tuple(merged))

    @property
    def spans(self) -> list[GroundedSpan]:
        return [s for s in self.segments if isinstance(s, GroundedSpan)]


# ---------------------------------------------------------------------------
# coordinates


def normalize_box(box, img_w: int, img_h: int) -> BoundingBox:
    """Pixel (x1, y1, x2, y2) to integer coordinates in [0, 999]."""
    if img_w < 1 or img_h < 1:
        raise ValueError("image size must be positive")
    dims = (img_w, img_h, img_w, img_h)
    vals = [
        int(min(max(round_half_away(p / d * COORD_MAX), 0), COORD_MAX))
        for p, d in zip(box, dims)
    ]
    return BoundingBox(*vals)


def denormalize_box(box: BoundingBox, img_w: int, img_h: int) -> tuple:
    dims = (img_w, img_h, img_w, img_h)
    return tuple(v / COORD_MAX * d for v, d in zip(box.as_tuple(), dims))


# ---------------------------------------------------------------------------
# parse / serialize

_SPECIAL = re.compile("|".join(re.escape(t) for t in SPECIAL_TOKENS))
_INT = r"\s*(\d+)\s*"
_BOX = re.compile(r"\s*\[" + ",".join([_INT] * 4) + r"\]\s*")
_EMPTY = re.compile(r"\s*\[\s*\]\s*")


def _parse_int(s: str) -> int:
    v = int(s)
    if v > COORD_MAX:
        raise CoordinateRangeError(f"coordinate {v} outside [0, {COORD_MAX}]")
    return v


def parse_boxes(body: str) -> tuple:
    """Parse the inside of a det block: ``[]`` or ``[[a, b, c, d], ...]``."""
    if _EMPTY.fullmatch(body):
        return ()
    s = body.strip()
    if len(s) < 2 or s[0] != "[" or s[-1] != "]":
        raise GrammarError(f"box list must be bracketed: {body!r}")
    inner = s[1:-1]
    boxes = []
    pos = 0
    while True:
        m = _BOX.match(inner, pos)
        if m is None:
            raise GrammarError(f"malformed box at {inner[pos:pos + 24]!r}")
        boxes.append(BoundingBox(*(_parse_int(g) for g in m.groups())))
        pos = m.end()
        if pos == len(inner):
            return tuple(boxes)
        if inner[pos] != ",":
            raise GrammarError(f"expected ',' between boxes, found {inner[pos]!r}")
        pos += 1


def parse_grounded(text: str) -> GroundedMessage:
    prefix = text.startswith(GROUNDING)
    if prefix:
        text = text[len(GROUNDING):]
    segments: list = []
    pos = 0
    while True:
        m = _SPECIAL.search(text, pos)
        if m is None:
            segments.append(text[pos:])
            break
        segments.append(text[pos:m.start()])
        tok = m.group()
        if tok != REF_OPEN:
            raise GrammarError(f"unexpected {tok} at offset {m.start()}")
        close = _SPECIAL.search(text, m.end())
        if close is None or close.group() != REF_CLOSE:
            raise GrammarError(f"{REF_OPEN} at offset {m.start()} is not closed by {REF_CLOSE}")
        ref = text[m.end():close.start()]
        if not ref:
            raise GrammarError("empty reference text")
        det = _SPECIAL.search(text, close.end())
        if det is None or det.group() != DET_OPEN or text[close.end():det.start()].strip():
            raise GrammarError(f"reference {ref!r} must be followed by {DET_OPEN}")
        det_close = _SPECIAL.search(text, det.end())
        if det_close is None or det_close.group() != DET_CLOSE:
            raise GrammarError(f"{DET_OPEN} at offset {det.start()} is not closed by {DET_CLOSE}")
        segments.append(GroundedSpan(ref, parse_boxes(text[det.end():det_close.start()])))
        pos = det_close.end()
    return GroundedMessage(tuple(segments), prefix)


def serialize_boxes(boxes) -> str:
    if not boxes:
        return "[]"
    return "[" + ", ".join("[" + ", ".join(str(v) for v in b.as_tuple()) + "]" for b in boxes) + "]"


def serialize_span(span: GroundedSpan) -> str:
    return f"{REF_OPEN}{span.ref_text}{REF_CLOSE}{DET_OPEN}{serialize_boxes(span.boxes)}{DET_CLOSE}"


def serialize_grounded(msg: GroundedMessage) -> str:
    out = [GROUNDING] if msg.grounding_prefix else []
    for seg in msg.segments:
        out.append(seg if isinstance(seg, str) else serialize_span(seg))
    return "".join(out)


# ---------------------------------------------------------------------------
# prompt templates


class PromptKind(enum.Enum):
    LOCATE = "locate"
    GROUNDED_CONVERSATION = "grounded_conversation"
    IN_CONTEXT = "in_context"


def build_prompt(kind: PromptKind, query: str = "") -> str:
    kind = PromptKind(kind)
    if kind is PromptKind.GROUNDED_CONVERSATION:
        return f"{GROUNDING}Can you describe the content of the image?"
    if not query:
        raise ValueError(f"{kind.value} prompt needs a non-empty query")
    if kind is PromptKind.LOCATE:
        return f"Locate {REF_OPEN}{query}{REF_CLOSE} in the given image."
    # the template has no space after the first sentence's period
    return (
        f"{GROUNDING}The first image shows {query}."
        "Please identify the object of the same category in the second image."
    )
