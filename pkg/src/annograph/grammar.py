"""Streaming parser for inline entity/relationship annotations.

The markup embeds two annotation shapes in otherwise plain text:

    [label ($N7)]                          entity mention, id 7
    [label ($H, $N1, $N2; $L, $N1, $N3)]   relationship with one pair per
                                           semicolon-separated group

The payload is always the final balanced parenthesized group before the
closing bracket, so labels may themselves contain balanced parentheses,
e.g. ``[people (users) ($N5)]``.  ``$N`` / ``$H`` / ``$L`` parse
case-insensitively; a case mismatch or a stray ``$`` at the end of a label
(``[working on $($L, $N1, $N7)]``) still parses and is flagged with a soft
:class:`Malformed` marker event.

A paragraph break is a run of two or more newlines.  All spans are byte
ranges (UTF-8): ``raw_span`` indexes the annotated input stream,
``clean_span`` the annotation-stripped text.  Every input byte belongs to
exactly one event's raw span; zero-width Malformed markers carry
diagnostics without owning bytes.

The parser is incremental: ``feed()`` may be called with arbitrary chunk
boundaries and emits plain text eagerly, holding back only an unresolved
``[`` (up to LOOKAHEAD_LIMIT bytes or a paragraph break) and trailing
newline runs.  Because plain runs can split at chunk boundaries, use
``coalesce_plain()`` before comparing event lists from different
chunkings; all non-plain events are chunking-invariant.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

# An unresolved "[" may buffer this many bytes before being flushed as
# plain text; bounds memory and display latency for streaming consumers.
LOOKAHEAD_LIMIT = 1024


class Span(NamedTuple):
    start: int
    end: int

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def shifted(self, delta: int) -> "Span":
        return Span(self.start + delta, self.end + delta)


class Saliency(enum.Enum):
    HIGH = "H"
    LOW = "L"


class RelationPair(NamedTuple):
    saliency: Saliency
    source: int
    target: int


def _bytelen(text: str) -> int:
    return len(text.encode("utf-8"))


@dataclass(frozen=True)
class PlainText:
    text: str
    raw_span: Span
    clean_span: Span


@dataclass(frozen=True)
class EntityMention:
    entity_id: int
    label: str
    raw_span: Span
    clean_span: Span


@dataclass(frozen=True)
class RelationMention:
    label: str
    pairs: tuple[RelationPair, ...]
    raw_span: Span
    clean_span: Span


@dataclass(frozen=True)
class ParagraphBreak:
    """Separator between paragraphs; ``index`` is the paragraph it opens."""

    index: int
    text: str
    raw_span: Span
    clean_span: Span


@dataclass(frozen=True)
class Malformed:
    """Zero-width diagnostic marker; never owns input bytes.

    Soft reasons (annotation still parsed): stray_dollar_in_label,
    case_mismatch.  Hard reasons (preceding bytes fell back to plain
    text): unclosed, nested_bracket, lookahead_exceeded, bad_payload.
    """

    raw: str
    reason: str
    raw_span: Span
    clean_span: Span


ParseEvent = PlainText | EntityMention | RelationMention | ParagraphBreak | Malformed

SOFT_REASONS = frozenset({"stray_dollar_in_label", "case_mismatch"})
HARD_REASONS = frozenset(
    {"unclosed", "nested_bracket", "lookahead_exceeded", "bad_payload"}
)


def is_mention(event: ParseEvent) -> bool:
    return isinstance(event, (EntityMention, RelationMention))


def rebased(event: ParseEvent, raw_delta: int, clean_delta: int) -> ParseEvent:
    """Copy of ``event`` with both spans shifted (e.g. to paragraph-local)."""
    return _replace_spans(
        event, event.raw_span.shifted(raw_delta), event.clean_span.shifted(clean_delta)
    )


def _replace_spans(event: ParseEvent, raw_span: Span, clean_span: Span) -> ParseEvent:
    kwargs = {f: getattr(event, f) for f in event.__dataclass_fields__}
    kwargs["raw_span"] = raw_span
    kwargs["clean_span"] = clean_span
    return type(event)(**kwargs)


# --- annotation payload grammar -------------------------------------------

_ENTITY_PAYLOAD = re.compile(r"^\s*\$([Nn])([0-9]+)\s*$")
_PAIR = re.compile(
    r"^\s*\$([HhLl])\s*,\s*\$([Nn])([0-9]+)\s*,\s*\$([Nn])([0-9]+)\s*$"
)


def _parse_payload(payload: str):
    """Return ("entity", id, soft) | ("relation", pairs, soft) | None."""
    m = _ENTITY_PAYLOAD.match(payload)
    if m:
        entity_id = int(m.group(2))
        if entity_id < 1:
            return None
        soft = ["case_mismatch"] if m.group(1) == "n" else []
        return ("entity", entity_id, soft)
    pairs = []
    soft: list[str] = []
    for segment in payload.split(";"):
        m = _PAIR.match(segment)
        if not m:
            return None
        saliency = Saliency.HIGH if m.group(1) in "Hh" else Saliency.LOW
        source, target = int(m.group(3)), int(m.group(5))
        if source < 1 or target < 1:
            return None
        if not (m.group(1).isupper() and m.group(2) == "N" and m.group(4) == "N"):
            if "case_mismatch" not in soft:
                soft.append("case_mismatch")
        pairs.append(RelationPair(saliency, source, target))
    if not pairs:
        return None
    return ("relation", tuple(pairs), soft)


def _split_label_payload(content: str):
    """Split bracket content into (label_part, payload_text) or None.

    The payload is the final balanced parenthesized group; anything
    after it other than whitespace disqualifies the bracket.
    """
    stripped = content.rstrip()
    if not stripped.endswith(")"):
        return None
    depth = 0
    for i in range(len(stripped) - 1, -1, -1):
        ch = stripped[i]
        if ch == ")":
            depth += 1
        elif ch == "(":
            depth -= 1
            if depth == 0:
                return stripped[:i], stripped[i + 1 : -1]
    return None


def _clean_label(label_part: str):
    """Right-trim whitespace and stray '$' runs; report if '$' was shed."""
    label = label_part.rstrip()
    stray = label.endswith("$")
    label = label.rstrip("$").rstrip()
    return label, stray


def _parse_bracket(content: str):
    """Classify bracket content.

    Returns ("entity", id, label, soft) or ("relation", pairs, label, soft)
    for a recognized annotation, "plain" for bracketed prose without a
    trailing paren group, or "bad" when a paren group exists but is not a
    valid payload.
    """
    split = _split_label_payload(content)
    if split is None:
        return ("plain",)
    label_part, payload = split
    parsed = _parse_payload(payload)
    if parsed is None:
        return ("bad",)
    label, stray = _clean_label(label_part)
    soft = list(parsed[-1])
    if stray:
        soft.append("stray_dollar_in_label")
    if parsed[0] == "entity":
        return ("entity", parsed[1], label, soft)
    return ("relation", parsed[1], label, soft)


# --- the incremental parser ------------------------------------------------


@dataclass
class StreamParser:
    """Incremental parser; one feed/finish caller at a time per instance.

    ``buffer`` only ever holds a suffix beginning at an unresolved "[" or
    a trailing newline run.  Byte offsets grow monotonically.
    """

    buffer: str = ""
    raw_offset: int = 0
    clean_offset: int = 0
    paragraph_index: int = 0
    finished: bool = field(default=False, repr=False)

    def feed(self, chunk: str) -> list[ParseEvent]:
        if self.finished:
            raise ValueError("parser already finished")
        self.buffer += chunk
        return self._scan(final=False)

    def finish(self) -> list[ParseEvent]:
        if self.finished:
            return []
        events = self._scan(final=True)
        self.finished = True
        return events

    # internal ---------------------------------------------------------

    def _scan(self, final: bool) -> list[ParseEvent]:
        events: list[ParseEvent] = []
        buf = self.buffer
        pos = 0
        n = len(buf)
        while pos < n:
            ch = buf[pos]
            if ch == "[":
                advance = self._resolve_bracket(buf, pos, final, events)
                if advance is None:
                    break
                pos = advance
            elif ch == "\n":
                end = pos
                while end < n and buf[end] == "\n":
                    end += 1
                if end == n and not final:
                    break  # run may still grow
                self._emit_newline_run(buf[pos:end], events)
                pos = end
            else:
                stop = pos
                while stop < n and buf[stop] not in "[\n":
                    stop += 1
                self._emit_plain(buf[pos:stop], events)
                pos = stop
        self.buffer = buf[pos:]
        return events

    def _resolve_bracket(self, buf, pos, final, events):
        """Handle an unresolved "[" at ``pos``; return new position or
        None to hold the suffix in the buffer.

        Every decision below depends only on byte distances within the
        text, never on where chunk boundaries fell, so a stream parsed
        in any partition resolves identically to the batch parse.
        """
        close = buf.find("]", pos + 1)
        reopen = buf.find("[", pos + 1)
        if close != -1 and (reopen == -1 or close < reopen):
            raw = buf[pos : close + 1]
            if _bytelen(raw) <= LOOKAHEAD_LIMIT:
                run = self._newline_break(buf, pos, close, final)
                if run is not None:
                    return self._flush_at_break(buf, pos, run, events)
                self._emit_annotation(raw, buf[pos + 1 : close], events)
                return close + 1
        elif reopen != -1 and _bytelen(buf[pos:reopen]) < LOOKAHEAD_LIMIT:
            # A nested "[" makes the outer bracket unparseable.
            run = self._newline_break(buf, pos, reopen, final)
            if run is not None:
                return self._flush_at_break(buf, pos, run, events)
            self._emit_plain(buf[pos:reopen], events)
            self._emit_malformed(buf[pos:reopen], "nested_bracket", events)
            return reopen
        # No resolution within the lookahead window.
        window_end = self._window_char_end(buf, pos)
        run = self._newline_break(buf, pos, window_end, final)
        if run is not None:
            return self._flush_at_break(buf, pos, run, events)
        if close == -1 and reopen == -1 and _bytelen(buf[pos:]) < LOOKAHEAD_LIMIT:
            return self._final_bracket_flush(buf, pos, events) if final else None
        flush_end = window_end
        shaved = False
        while flush_end > pos + 1 and buf[flush_end - 1] == "\n":
            flush_end -= 1
            shaved = True
        flushed = buf[pos:flush_end]
        self._emit_plain(flushed, events)
        self._emit_malformed(
            flushed, "unclosed" if shaved else "lookahead_exceeded", events
        )
        return flush_end

    def _newline_break(self, buf, start, limit, final):
        """First completed >=2 newline run starting in buf[start:limit)."""
        i = buf.find("\n\n", start, limit)
        if i == -1:
            return None
        n = len(buf)
        end = i
        while end < n and buf[end] == "\n":
            end += 1
        if end < n or final:
            return (i, end)
        return None  # run touches buffer end and may still grow

    def _flush_at_break(self, buf, pos, run, events):
        run_start, run_end = run
        if run_start > pos:
            self._emit_plain(buf[pos:run_start], events)
        self._emit_malformed(buf[pos:run_start], "unclosed", events)
        self._emit_newline_run(buf[run_start:run_end], events)
        return run_end

    def _window_char_end(self, buf, pos):
        """Largest char index whose prefix from ``pos`` fits the byte window."""
        total = 0
        end = pos
        for i in range(pos, len(buf)):
            step = _bytelen(buf[i])
            if total + step > LOOKAHEAD_LIMIT:
                break
            total += step
            end = i + 1
        return end

    def _final_bracket_flush(self, buf, pos, events):
        n = len(buf)
        tail = n
        while tail > pos and buf[tail - 1] == "\n":
            tail -= 1
        run = buf[tail:]
        if tail > pos:
            self._emit_plain(buf[pos:tail], events)
        self._emit_malformed(buf[pos:tail], "unclosed", events)
        if run:
            self._emit_newline_run(run, events)
        return n

    def _emit_newline_run(self, run: str, events):
        if len(run) >= 2:
            blen = len(run)  # newlines are single-byte
            self.paragraph_index += 1
            events.append(
                ParagraphBreak(
                    index=self.paragraph_index,
                    text=run,
                    raw_span=Span(self.raw_offset, self.raw_offset + blen),
                    clean_span=Span(self.clean_offset, self.clean_offset + blen),
                )
            )
            self.raw_offset += blen
            self.clean_offset += blen
        elif run:
            self._emit_plain(run, events)

    def _emit_plain(self, text: str, events):
        if not text:
            return
        blen = _bytelen(text)
        event = PlainText(
            text=text,
            raw_span=Span(self.raw_offset, self.raw_offset + blen),
            clean_span=Span(self.clean_offset, self.clean_offset + blen),
        )
        self.raw_offset += blen
        self.clean_offset += blen
        prev = events[-1] if events else None
        if isinstance(prev, PlainText) and prev.raw_span.end == event.raw_span.start:
            events[-1] = PlainText(
                text=prev.text + text,
                raw_span=Span(prev.raw_span.start, event.raw_span.end),
                clean_span=Span(prev.clean_span.start, event.clean_span.end),
            )
        else:
            events.append(event)

    def _emit_malformed(self, raw: str, reason: str, events):
        events.append(
            Malformed(
                raw=raw,
                reason=reason,
                raw_span=Span(self.raw_offset, self.raw_offset),
                clean_span=Span(self.clean_offset, self.clean_offset),
            )
        )

    def _emit_annotation(self, raw: str, content: str, events):
        parsed = _parse_bracket(content)
        if parsed[0] == "plain":
            self._emit_plain(raw, events)
            return
        if parsed[0] == "bad":
            self._emit_plain(raw, events)
            self._emit_malformed(raw, "bad_payload", events)
            return
        kind, payload, label, soft = parsed
        raw_len = _bytelen(raw)
        clean_len = _bytelen(label)
        raw_span = Span(self.raw_offset, self.raw_offset + raw_len)
        clean_span = Span(self.clean_offset, self.clean_offset + clean_len)
        if kind == "entity":
            events.append(EntityMention(payload, label, raw_span, clean_span))
        else:
            events.append(RelationMention(label, payload, raw_span, clean_span))
        self.raw_offset += raw_len
        self.clean_offset += clean_len
        for reason in soft:
            self._emit_malformed(raw, reason, events)


# --- whole-text conveniences ------------------------------------------------


def coalesce_plain(events: Iterable[ParseEvent]) -> list[ParseEvent]:
    """Merge adjacent PlainText events (plain runs may split at chunk
    boundaries); the canonical form for comparing event streams."""
    out: list[ParseEvent] = []
    for event in events:
        prev = out[-1] if out else None
        if (
            isinstance(event, PlainText)
            and isinstance(prev, PlainText)
            and prev.raw_span.end == event.raw_span.start
        ):
            out[-1] = PlainText(
                text=prev.text + event.text,
                raw_span=Span(prev.raw_span.start, event.raw_span.end),
                clean_span=Span(prev.clean_span.start, event.clean_span.end),
            )
        else:
            out.append(event)
    return out


def parse_all(text: str) -> list[ParseEvent]:
    """Batch parse: feed the whole text, finish, coalesce plain runs."""
    parser = StreamParser()
    events = parser.feed(text)
    events.extend(parser.finish())
    return coalesce_plain(events)


def events_to_clean_text(events: Iterable[ParseEvent]) -> str:
    """Reconstruct the annotation-stripped text from an event stream."""
    parts = []
    for event in events:
        if isinstance(event, PlainText):
            parts.append(event.text)
        elif isinstance(event, (EntityMention, RelationMention)):
            parts.append(event.label)
        elif isinstance(event, ParagraphBreak):
            parts.append(event.text)
    return "".join(parts)


def events_to_raw_text(events: Iterable[ParseEvent]) -> str:
    """Reconstruct the original annotated text from an event stream."""
    parts = []
    for event in events:
        if isinstance(event, PlainText):
            parts.append(event.text)
        elif isinstance(event, (EntityMention, RelationMention)):
            parts.append(render_annotation(event))
        elif isinstance(event, ParagraphBreak):
            parts.append(event.text)
    return "".join(parts)


def strip_annotations(text: str):
    """Return (clean_text, [(clean_span, mention_event), ...])."""
    events = parse_all(text)
    clean = events_to_clean_text(events)
    spans = [(e.clean_span, e) for e in events if is_mention(e)]
    return clean, spans


def render_annotation(event: EntityMention | RelationMention, label: str | None = None) -> str:
    """Canonical annotated form of a mention: "[label ($N1)]" or
    "[label ($H, $N1, $N2; ...)]"."""
    label = event.label if label is None else label
    if isinstance(event, EntityMention):
        return f"[{label} ($N{event.entity_id})]"
    pairs = "; ".join(render_pair(p) for p in event.pairs)
    return f"[{label} ({pairs})]"


def render_pair(pair: RelationPair) -> str:
    return f"${pair.saliency.value}, $N{pair.source}, $N{pair.target}"


def serialize(clean: str, spans) -> str:
    """Reinsert annotations into clean text (inverse of strip_annotations).

    ``spans`` is an ordered list of (clean_span, mention_event) with
    non-overlapping byte ranges inside ``clean``; raises ValueError on a
    violated contract.
    """
    data = clean.encode("utf-8")
    out: list[bytes] = []
    cursor = 0
    for span, event in spans:
        if span.start < cursor or span.end > len(data) or span.start > span.end:
            raise ValueError(f"span {span} out of order or out of range")
        label = data[span.start : span.end].decode("utf-8")
        if label != event.label:
            raise ValueError(
                f"span text {label!r} does not match event label {event.label!r}"
            )
        out.append(data[cursor : span.start])
        out.append(render_annotation(event, label).encode("utf-8"))
        cursor = span.end
    out.append(data[cursor:])
    return b"".join(out).decode("utf-8")


def canonicalize(text: str) -> str:
    """Re-serialize annotations in canonical spacing."""
    return serialize(*strip_annotations(text))


# --- JSON wire form ---------------------------------------------------------

_EVENT_TYPES = {
    PlainText: "plain",
    EntityMention: "entity",
    RelationMention: "relation",
    ParagraphBreak: "paragraph_break",
    Malformed: "malformed",
}


def event_to_json(event: ParseEvent) -> dict:
    doc: dict = {"type": _EVENT_TYPES[type(event)]}
    if isinstance(event, PlainText):
        doc["text"] = event.text
    elif isinstance(event, EntityMention):
        doc["id"] = event.entity_id
        doc["label"] = event.label
    elif isinstance(event, RelationMention):
        doc["label"] = event.label
        doc["pairs"] = [
            {"saliency": p.saliency.value, "source": p.source, "target": p.target}
            for p in event.pairs
        ]
    elif isinstance(event, ParagraphBreak):
        doc["index"] = event.index
        doc["text"] = event.text
    elif isinstance(event, Malformed):
        doc["raw"] = event.raw
        doc["reason"] = event.reason
    doc["raw_span"] = list(event.raw_span)
    doc["clean_span"] = list(event.clean_span)
    return doc


def event_from_json(doc: dict) -> ParseEvent:
    raw_span = Span(*doc["raw_span"])
    clean_span = Span(*doc["clean_span"])
    kind = doc["type"]
    if kind == "plain":
        return PlainText(doc["text"], raw_span, clean_span)
    if kind == "entity":
        return EntityMention(doc["id"], doc["label"], raw_span, clean_span)
    if kind == "relation":
        pairs = tuple(
            RelationPair(Saliency(p["saliency"]), p["source"], p["target"])
            for p in doc["pairs"]
        )
        return RelationMention(doc["label"], pairs, raw_span, clean_span)
    if kind == "paragraph_break":
        return ParagraphBreak(doc["index"], doc["text"], raw_span, clean_span)
    if kind == "malformed":
        return Malformed(doc["raw"], doc["reason"], raw_span, clean_span)
    raise ValueError(f"unknown event type {kind!r}")
