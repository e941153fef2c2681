"""Sentence segmentation over annotation-stripped text.

Splits after ``.``/``!``/``?`` runs followed by whitespace and an
uppercase letter, digit, or opening quote, with a short abbreviation
stoplist.  Returns byte spans into the UTF-8 encoding of the text so
they compose with parse-event spans.  Segmentation errors only soften
downstream correction quality; they never crash anything.
"""

from __future__ import annotations

import re

from .grammar import Span

ABBREVIATIONS = frozenset(
    {
        "e.g", "i.e", "etc", "vs", "cf", "al", "fig", "no", "ca",
        "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "inc",
    }
)

_BOUNDARY = re.compile(r"([.!?]+)(\s+)(?=[\"'(\[]?[A-Z0-9])")
_LAST_WORD = re.compile(r"[\w.]+$")


def _char_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        before = text[: match.start(1)]
        last = _LAST_WORD.search(before)
        if last and last.group(0).rstrip(".").lower() in ABBREVIATIONS:
            continue
        end = match.end(1)
        while start < end and text[start].isspace():
            start += 1
        if start < end:
            spans.append((start, end))
        start = match.end(0)
    tail_start = start
    while tail_start < len(text) and text[tail_start].isspace():
        tail_start += 1
    tail_end = len(text)
    while tail_end > tail_start and text[tail_end - 1].isspace():
        tail_end -= 1
    if tail_end > tail_start:
        spans.append((tail_start, tail_end))
    return spans


def segment_sentences(text: str) -> list[Span]:
    """Byte spans of the sentences of ``text``."""
    offsets = [0]
    for ch in text:
        offsets.append(offsets[-1] + len(ch.encode("utf-8")))
    return [Span(offsets[s], offsets[e]) for s, e in _char_spans(text)]


def sentence_index_at(sentences: list[Span], position: int) -> int:
    """Index of the sentence containing byte ``position`` (nearest wins)."""
    for i, span in enumerate(sentences):
        if span.start <= position < span.end:
            return i
    for i, span in enumerate(sentences):
        if position < span.start:
            return i
    return max(len(sentences) - 1, 0)
