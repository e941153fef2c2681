"""Session pipeline: question -> streamed annotated response -> live graph.

A session owns one question and its graph-directed follow-ups.  The ask
pump is a generator: it feeds transport chunks through the stream parser,
applies events to the graph, and yields every wire event it appends to
the session log.  On each paragraph completion it detects annotation
errors, issues at most one self-correction round per paragraph (one
request per faulty sentence, applied in sentence order), and requests the
paragraph's summary and outline.  Tasks are spawned at paragraph
boundaries, which are semantic points of the text, so the wire log
(tokens aside) is byte-identical however the transport chunks the same
response.

All session state mutations run under one lock: transport pumps and HTTP
gestures interleave between events, never inside one.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterator

from .diagnostics import Diagnostic, DiagnosticKind, detect
from .grammar import (
    EntityMention,
    Malformed,
    ParagraphBreak,
    ParseEvent,
    PlainText,
    RelationMention,
    RelationPair,
    Span,
    StreamParser,
    coalesce_plain,
    event_to_json,
    events_to_clean_text,
    parse_all,
    rebased,
    render_annotation,
)
from .graph import GraphAssembler, InvalidOperation, NotFoundError, SessionGraph
from .transport import TransportError
from .prompts import (
    ChatMessage,
    PromptKind,
    build_correction,
    build_expand,
    build_initial,
    build_node_followup,
    build_outline,
    build_summary,
)
from .sentences import segment_sentences, sentence_index_at
from .transport import Transport

HARD_MALFORMED = frozenset({"unclosed", "nested_bracket", "bad_payload"})

STREAMING = "streaming"
COMPLETE = "complete"
CORRECTING = "correcting"
CORRECTED = "corrected"


class SessionError(Exception):
    pass


@dataclass
class ParagraphRecord:
    index: int
    raw_text: str = ""
    clean_text: str = ""
    status: str = STREAMING
    sentences: list[Span] = field(default_factory=list)  # clean, local
    summary_text: str | None = None
    summary_events: list[ParseEvent] | None = None
    outline: str | None = None
    correction_rounds: int = 0

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "raw_text": self.raw_text,
            "clean_text": self.clean_text,
            "status": self.status,
            "summary": self.summary_text,
            "outline": self.outline,
        }


@dataclass(frozen=True)
class WireEvent:
    seq: int
    type: str
    payload: dict
    request_id: str | None = None

    def to_json(self) -> dict:
        doc = {"seq": self.seq, "type": self.type, "payload": self.payload}
        if self.request_id is not None:
            doc["request_id"] = self.request_id
        return doc


@dataclass
class _Task:
    kind: str  # correction | summary | outline
    paragraph: int
    sentence: int = -1
    orphan_ids: tuple[int, ...] = ()
    deadend_annotations: tuple[str, ...] = ()


# --- span arithmetic helpers ----------------------------------------------


def clean_to_raw_span(events: list[ParseEvent], span: Span) -> Span:
    """Map a clean-span to the covering raw-span, snapping outward so an
    annotation is never split."""
    return Span(
        _clean_pos_to_raw(events, span.start, at_end=False),
        _clean_pos_to_raw(events, span.end, at_end=True),
    )


def _clean_pos_to_raw(events: list[ParseEvent], pos: int, at_end: bool) -> int:
    last_raw = 0
    for event in events:
        if isinstance(event, Malformed):
            continue
        c, r = event.clean_span, event.raw_span
        last_raw = r.end
        if pos < c.start:
            return r.start
        if c.start <= pos <= c.end:
            if isinstance(event, (EntityMention, RelationMention)):
                if pos == c.start:
                    return r.start
                if pos == c.end:
                    return r.end
                return r.end if at_end else r.start
            return r.start + (pos - c.start)
    return last_raw


def _splice_bytes(text: str, span: Span, replacement: str) -> str:
    data = text.encode("utf-8")
    return (
        data[: span.start] + replacement.encode("utf-8") + data[span.end :]
    ).decode("utf-8")


def _slice_bytes(text: str, span: Span) -> str:
    return text.encode("utf-8")[span.start : span.end].decode("utf-8")


def _bytelen(text: str) -> int:
    return len(text.encode("utf-8"))


def _labels_relate(label: str, node) -> bool:
    def norm(s: str) -> str:
        return " ".join(s.lower().split())

    candidates = {norm(node.label)} | {norm(m.text) for m in node.mentions}
    wanted = norm(label)
    if not wanted:
        return False
    return any(
        wanted == c or (c and (wanted in c or c in wanted)) for c in candidates
    )


class Session:
    """One question, its annotated response, graph, and event log."""

    def __init__(self, transport: Transport, session_id: str = "session"):
        self.id = session_id
        self.transport = transport
        self.question: str | None = None
        self.paragraphs: list[ParagraphRecord] = []
        self.graph = SessionGraph()
        self.log: list[WireEvent] = []
        self.max_entity_id = 0
        self.pending_tasks: list[_Task] = []
        self.done = False
        self.lock = threading.RLock()
        self.log_changed = threading.Condition(self.lock)
        self._history: list[ChatMessage] = []
        self._parser = StreamParser()
        self._assembler = GraphAssembler(self.graph)
        self._raw_bytes = bytearray()
        self._paragraph_raw_start = 0  # global byte offset of current paragraph

    # -- log plumbing -------------------------------------------------------

    def _emit(self, type_: str, payload: dict, request_id: str | None = None) -> WireEvent:
        with self.log_changed:
            event = WireEvent(len(self.log) + 1, type_, payload, request_id)
            self.log.append(event)
            self.log_changed.notify_all()
        return event

    def events_since(self, after_seq: int) -> list[WireEvent]:
        with self.lock:
            return self.log[after_seq:]

    def wait_events(self, after_seq: int, timeout: float = 0.5) -> list[WireEvent]:
        with self.log_changed:
            if len(self.log) <= after_seq:
                self.log_changed.wait(timeout)
            return self.log[after_seq:]

    # -- derived views -------------------------------------------------------

    def response_so_far(self) -> str:
        return "\n\n".join(p.raw_text for p in self.paragraphs if p.raw_text)

    def _task_history(self) -> list[ChatMessage]:
        response = self.response_so_far()
        history = list(self._history)
        if response:
            history.append(ChatMessage("assistant", response))
        return history

    def paragraph(self, index: int) -> ParagraphRecord:
        if index < 0 or index >= len(self.paragraphs):
            raise NotFoundError(f"no paragraph {index}")
        return self.paragraphs[index]

    # -- the main ask pump ----------------------------------------------------

    def ask(self, question: str) -> Iterator[WireEvent]:
        if not question or not question.strip():
            raise SessionError("question must be non-empty")
        with self.lock:
            if self.question is not None:
                raise SessionError("session already has a question")
            self.question = question
            self._history = build_initial(question)
            self.paragraphs.append(ParagraphRecord(0))
        yield self._emit("paragraph-status", {"paragraph": 0, "status": STREAMING})
        try:
            handle = self.transport.start_stream(self._history)
            for chunk in handle:
                if chunk.text:
                    yield self._emit("token", {"text": chunk.text, "stream": "main"})
                    with self.lock:
                        self._raw_bytes.extend(chunk.text.encode("utf-8"))
                        events = self._parser.feed(chunk.text)
                    yield from self._ingest_main(events)
                if chunk.terminal:
                    break
        except (TransportError, FileNotFoundError) as exc:
            yield self._emit("error", {"operation": "ask", "reason": str(exc)})
        with self.lock:
            events = self._parser.finish()
        yield from self._ingest_main(events)
        yield from self._finish_paragraph(len(self.paragraphs) - 1)
        with self.lock:
            self.done = True
        yield self._emit("paragraph-status", {"paragraph": -1, "status": "session-idle"})

    def _ingest_main(self, events: list[ParseEvent]) -> Iterator[WireEvent]:
        for event in events:
            with self.lock:
                record = self.paragraphs[-1]
                owner = record.index
                if isinstance(event, ParagraphBreak):
                    finishing = record.index
                    owner = event.index
                else:
                    finishing = None
                    self._track_ids(event)
                    if not isinstance(event, Malformed):
                        record.clean_text += _event_clean_text(event)
                        record.raw_text = self._raw_slice(
                            self._paragraph_raw_start, event.raw_span.end
                        )
                diffs = self._assembler.apply(event)
            yield self._emit(
                "parse-event", {"event": event_to_json(event), "paragraph": owner}
            )
            for diff in diffs:
                yield self._emit("graph-diff", diff.to_json())
            if finishing is not None:
                yield from self._finish_paragraph(finishing)
                with self.lock:
                    self._paragraph_raw_start = event.raw_span.end
                    self.paragraphs.append(ParagraphRecord(len(self.paragraphs)))
                yield self._emit(
                    "paragraph-status",
                    {"paragraph": len(self.paragraphs) - 1, "status": STREAMING},
                )

    def _raw_slice(self, start: int, end: int) -> str:
        return bytes(self._raw_bytes[start:end]).decode("utf-8")

    def _track_ids(self, event: ParseEvent) -> None:
        if isinstance(event, EntityMention):
            self.max_entity_id = max(self.max_entity_id, event.entity_id)
        elif isinstance(event, RelationMention):
            for pair in event.pairs:
                self.max_entity_id = max(self.max_entity_id, pair.source, pair.target)

    # -- paragraph completion and tasks ---------------------------------------

    def _finish_paragraph(self, index: int) -> Iterator[WireEvent]:
        with self.lock:
            record = self.paragraphs[index]
            if record.status != STREAMING:
                return
            record.status = COMPLETE
            record.sentences = segment_sentences(record.clean_text)
            diagnostics: list[Diagnostic] = []
            if record.clean_text.strip():
                diagnostics = [
                    d for d in detect(self._all_events()) if d.paragraph == index
                ]
                correctable = [
                    d
                    for d in diagnostics
                    if d.kind
                    in (DiagnosticKind.ORPHAN_NODE, DiagnosticKind.DEAD_END_RELATIONSHIP)
                ]
                if correctable and record.correction_rounds == 0:
                    record.correction_rounds = 1
                    by_sentence: dict[int, list[Diagnostic]] = {}
                    for d in correctable:
                        by_sentence.setdefault(d.sentence, []).append(d)
                    for sentence in sorted(by_sentence):
                        group = by_sentence[sentence]
                        orphan_ids = tuple(
                            sorted(
                                {
                                    i
                                    for d in group
                                    if d.kind is DiagnosticKind.ORPHAN_NODE
                                    for i in d.subject_ids
                                }
                            )
                        )
                        deadends = tuple(
                            dict.fromkeys(
                                self._deadend_annotation(index, d)
                                for d in group
                                if d.kind is DiagnosticKind.DEAD_END_RELATIONSHIP
                            )
                        )
                        self.pending_tasks.append(
                            _Task("correction", index, sentence, orphan_ids, deadends)
                        )
                self.pending_tasks.append(_Task("summary", index))
                self.pending_tasks.append(_Task("outline", index))
        yield self._emit("paragraph-status", {"paragraph": index, "status": COMPLETE})
        for diagnostic in diagnostics:
            yield self._emit("diagnostic", diagnostic.to_json())
        yield from self._pump_tasks()

    def _all_events(self) -> list[ParseEvent]:
        """Event stream over all paragraphs with synthetic separators, so
        detect()'s paragraph indexing matches the records even when a
        paragraph is empty."""
        events: list[ParseEvent] = []
        raw_off = 0
        clean_off = 0
        for i, record in enumerate(self.paragraphs):
            if i > 0:
                events.append(
                    ParagraphBreak(
                        i, "\n\n", Span(raw_off, raw_off + 2), Span(clean_off, clean_off + 2)
                    )
                )
                raw_off += 2
                clean_off += 2
            for event in parse_all(record.raw_text):
                events.append(rebased(event, raw_off, clean_off))
            raw_off += _bytelen(record.raw_text)
            clean_off += _bytelen(record.clean_text)
        return events

    def _deadend_annotation(self, paragraph: int, diagnostic: Diagnostic) -> str:
        """The offending relationship annotation, in canonical form, for
        the correction prompt."""
        record = self.paragraphs[paragraph]
        events = parse_all(record.raw_text)
        for event in events:
            if (
                isinstance(event, RelationMention)
                and event.clean_span == diagnostic.clean_span
            ):
                return render_annotation(event)
        return diagnostic.relation_label or ""

    def _pump_tasks(self) -> Iterator[WireEvent]:
        sentence_delta: dict[int, int] = {}
        while True:
            with self.lock:
                if not self.pending_tasks:
                    return
                task = self.pending_tasks.pop(0)
            if task.kind == "correction":
                delta = sentence_delta.get(task.paragraph, 0)
                yield from self._run_correction(task, task.sentence + delta, sentence_delta)
            elif task.kind == "summary":
                yield from self._run_summary(task.paragraph)
            else:
                yield from self._run_outline(task.paragraph)

    def _drain_stream(self, messages, stream_name: str):
        """Stream a task request to completion, yielding token events."""
        handle = self.transport.start_stream(messages)
        parts: list[str] = []

        def gen():
            for chunk in handle:
                if chunk.text:
                    parts.append(chunk.text)
                    yield self._emit("token", {"text": chunk.text, "stream": stream_name})

        return gen(), parts

    def _run_correction(
        self, task: _Task, sentence_index: int, sentence_delta: dict[int, int]
    ) -> Iterator[WireEvent]:
        record = self.paragraphs[task.paragraph]
        with self.lock:
            if sentence_index >= len(record.sentences):
                return
            record.status = CORRECTING
            sentence_raw = self._sentence_raw_text(task.paragraph, sentence_index)
            messages = build_correction(
                self._task_history(),
                sentence_raw,
                list(task.orphan_ids),
                list(task.deadend_annotations),
            )
        yield self._emit(
            "paragraph-status", {"paragraph": task.paragraph, "status": CORRECTING}
        )
        tokens, parts = self._drain_stream(
            messages, f"correction:{task.paragraph}:{sentence_index}"
        )
        yield from tokens
        reply = "".join(parts).strip()
        before = len(record.sentences)
        yield from self.apply_correction(task.paragraph, sentence_index, reply)
        after = len(record.sentences)
        sentence_delta[task.paragraph] = (
            sentence_delta.get(task.paragraph, 0) + after - before
        )

    def _run_summary(self, index: int) -> Iterator[WireEvent]:
        record = self.paragraphs[index]
        tokens, parts = self._drain_stream(
            build_summary(record.raw_text), f"summary:{index}"
        )
        yield from tokens
        reply = "".join(parts).strip()
        with self.lock:
            record.summary_text = reply
            record.summary_events = parse_all(reply)
            payload = {
                "paragraph": index,
                "text": reply,
                "events": [event_to_json(e) for e in record.summary_events],
            }
        yield self._emit("summary-ready", payload)

    def _run_outline(self, index: int) -> Iterator[WireEvent]:
        record = self.paragraphs[index]
        tokens, parts = self._drain_stream(
            build_outline(record.raw_text), f"outline:{index}"
        )
        yield from tokens
        reply = "".join(parts).strip()
        with self.lock:
            record.outline = reply
        yield self._emit("outline-ready", {"paragraph": index, "markdown": reply})

    # -- sentence correction ----------------------------------------------------

    def _sentence_raw_text(self, paragraph: int, sentence_index: int) -> str:
        record = self.paragraphs[paragraph]
        events = parse_all(record.raw_text)
        raw_span = clean_to_raw_span(events, record.sentences[sentence_index])
        return _slice_bytes(record.raw_text, raw_span)

    def apply_correction(
        self, paragraph: int, sentence_index: int, replacement: str
    ) -> Iterator[WireEvent]:
        """Replace one sentence of a paragraph with a re-annotated version;
        retracts the old sentence's graph contributions and applies the
        replacement's, remapping colliding entity ids to fresh ones."""
        record = self.paragraph(paragraph)
        with self.lock:
            if record.status != CORRECTING:
                raise SessionError(
                    f"paragraph {paragraph} is {record.status}, not correcting"
                )
            if sentence_index < 0 or sentence_index >= len(record.sentences):
                raise SessionError(f"no sentence {sentence_index}")
            replacement = replacement.strip()
            new_events = parse_all(replacement)
            mentions = [e for e in new_events if isinstance(e, EntityMention)]
            hard = [
                e
                for e in new_events
                if isinstance(e, Malformed) and e.reason in HARD_MALFORMED
            ]
            rejected = None
            if not mentions or hard:
                record.status = COMPLETE
                rejected = "no annotations" if not mentions else hard[0].reason
        if rejected is not None:
            yield self._emit(
                "error",
                {
                    "operation": "correction",
                    "paragraph": paragraph,
                    "sentence": sentence_index,
                    "reason": f"correction rejected: {rejected}",
                },
            )
            yield self._emit(
                "paragraph-status", {"paragraph": paragraph, "status": COMPLETE}
            )
            return

        identical = False
        with self.lock:
            old_events = parse_all(record.raw_text)
            clean_span = record.sentences[sentence_index]
            raw_span = clean_to_raw_span(old_events, clean_span)
            old_raw_sentence = _slice_bytes(record.raw_text, raw_span)
            if replacement == old_raw_sentence:
                record.status = CORRECTED
                identical = True
        if identical:
            yield self._emit(
                "correction-applied",
                {
                    "paragraph": paragraph,
                    "sentence": sentence_index,
                    "replacement": replacement,
                    "raw_text": record.raw_text,
                    "clean_text": record.clean_text,
                    "diffs": [],
                },
            )
            yield self._emit(
                "paragraph-status", {"paragraph": paragraph, "status": CORRECTED}
            )
            return

        with self.lock:
            diffs = []
            # retract edges whose annotation lies in the old sentence
            doomed_edges = [
                e.edge_id
                for e in self.graph.edges.values()
                if e.paragraph == paragraph
                and clean_span.start <= e.clean_span.start < clean_span.end
            ]
            if doomed_edges:
                endpoints = set()
                for edge_id in doomed_edges:
                    edge = self.graph.edges[edge_id]
                    endpoints.update((edge.source, edge.target))
                diffs += self.graph.remove_edges(sorted(doomed_edges))
                # placeholders that just lost their only references vanish
                for node_id in sorted(endpoints):
                    node = self.graph.nodes.get(node_id)
                    if (
                        node is not None
                        and node.placeholder
                        and not self.graph.edges_of(node_id)
                    ):
                        trim_diffs, _ = self.graph.trim(node_id)
                        diffs += trim_diffs
            # retract mentions inside the old sentence
            by_node: dict[int, list[Span]] = {}
            for node in list(self.graph.nodes.values()):
                for m in node.mentions:
                    if (
                        m.paragraph == paragraph
                        and clean_span.start <= m.clean_span.start < clean_span.end
                    ):
                        by_node.setdefault(node.node_id, []).append(m.clean_span)
            for node_id in sorted(by_node):
                diffs += self.graph.retract_mentions(
                    node_id, by_node[node_id], paragraph
                )

            # splice the new sentence into the paragraph text
            new_clean_sentence = events_to_clean_text(new_events)
            raw_delta = _bytelen(replacement) - (raw_span.end - raw_span.start)
            clean_delta = _bytelen(new_clean_sentence) - (
                clean_span.end - clean_span.start
            )
            record.raw_text = _splice_bytes(record.raw_text, raw_span, replacement)
            record.clean_text = _splice_bytes(
                record.clean_text, clean_span, new_clean_sentence
            )
            record.sentences = segment_sentences(record.clean_text)
            if raw_delta or clean_delta:
                diffs += self.graph.shift_spans(
                    paragraph, clean_span.end, clean_delta, raw_span.end, raw_delta
                )

            # apply the replacement's events at the sentence position
            adopted, remap_diagnostics = self._adopt_events(new_events)
            for event in adopted:
                if isinstance(event, (EntityMention, RelationMention)):
                    local = rebased(event, raw_span.start, clean_span.start)
                    diffs += self.graph.apply_event(local, paragraph)
                self._track_ids(event)
            record.status = CORRECTED

        for diff in diffs:
            diff.payload["animated"] = True
            yield self._emit("graph-diff", diff.to_json())
        for diagnostic in remap_diagnostics:
            yield self._emit("diagnostic", diagnostic.to_json())
        yield self._emit(
            "correction-applied",
            {
                "paragraph": paragraph,
                "sentence": sentence_index,
                "replacement": replacement,
                "raw_text": record.raw_text,
                "clean_text": record.clean_text,
                "diffs": [d.seq for d in diffs],
            },
        )
        yield self._emit(
            "paragraph-status", {"paragraph": paragraph, "status": CORRECTED}
        )

    def _adopt_events(
        self, events: list[ParseEvent]
    ) -> tuple[list[ParseEvent], list[Diagnostic]]:
        """Id-collision policy for replies that continue the session: ids
        above the session max are new; a colliding id is kept when it
        resolves a placeholder or its label matches the existing node
        (co-reference), otherwise it is remapped to a fresh id."""
        remap: dict[int, int] = {}
        diagnostics: list[Diagnostic] = []
        fresh = self.max_entity_id
        for event in events:
            if not isinstance(event, EntityMention):
                continue
            entity_id = event.entity_id
            if entity_id in remap or entity_id > self.max_entity_id:
                continue
            node = self.graph.nodes.get(entity_id)
            if node is None or node.placeholder:
                continue
            if _labels_relate(event.label, node):
                continue
            fresh += 1
            remap[entity_id] = fresh
            diagnostics.append(
                Diagnostic(
                    DiagnosticKind.INCORRECT_COREFERENCE,
                    0,
                    0,
                    (entity_id, fresh),
                    None,
                    event.clean_span,
                    detail=(
                        f"reply reused id {entity_id} ({node.label!r}) for "
                        f"{event.label!r}; remapped to {fresh}"
                    ),
                )
            )
        if not remap:
            return events, diagnostics
        adopted: list[ParseEvent] = []
        for event in events:
            if isinstance(event, EntityMention) and event.entity_id in remap:
                adopted.append(
                    EntityMention(
                        remap[event.entity_id],
                        event.label,
                        event.raw_span,
                        event.clean_span,
                    )
                )
            elif isinstance(event, RelationMention):
                pairs = tuple(
                    RelationPair(
                        p.saliency,
                        remap.get(p.source, p.source),
                        remap.get(p.target, p.target),
                    )
                    for p in event.pairs
                )
                adopted.append(
                    RelationMention(event.label, pairs, event.raw_span, event.clean_span)
                )
            else:
                adopted.append(event)
        return adopted, diagnostics

    # -- graph gestures -----------------------------------------------------------

    def collapse(self, node_id: int, request_id: str | None = None) -> list[WireEvent]:
        with self.lock:
            diffs = self.graph.collapse(node_id)
        return [self._emit("graph-diff", d.to_json(), request_id) for d in diffs]

    def expand_node(self, node_id: int, request_id: str | None = None) -> list[WireEvent]:
        with self.lock:
            diffs = self.graph.expand(node_id)
        return [self._emit("graph-diff", d.to_json(), request_id) for d in diffs]

    def trim(self, node_id: int, request_id: str | None = None) -> list[WireEvent]:
        with self.lock:
            diffs, rewrites = self.graph.trim(node_id)
            affected = self._apply_rewrites_to_paragraphs(rewrites)
        out = [self._emit("graph-diff", d.to_json(), request_id) for d in diffs]
        out.append(
            self._emit(
                "correction-applied",
                {
                    "source": "trim",
                    "node": node_id,
                    "rewrites": [r.to_json() for r in rewrites],
                    "paragraphs": {
                        str(p): self.paragraphs[p].raw_text for p in affected
                    },
                },
                request_id,
            )
        )
        return out

    def merge(
        self, from_id: int, into_id: int, request_id: str | None = None
    ) -> list[WireEvent]:
        with self.lock:
            diffs, rewrites = self.graph.merge_nodes(from_id, into_id)
            affected = self._apply_rewrites_to_paragraphs(rewrites)
        out = [self._emit("graph-diff", d.to_json(), request_id) for d in diffs]
        out.append(
            self._emit(
                "correction-applied",
                {
                    "source": "merge",
                    "from": from_id,
                    "into": into_id,
                    "rewrites": [r.to_json() for r in rewrites],
                    "paragraphs": {
                        str(p): self.paragraphs[p].raw_text for p in affected
                    },
                },
                request_id,
            )
        )
        return out

    def _apply_rewrites_to_paragraphs(self, rewrites) -> list[int]:
        from .graph import apply_rewrites

        affected = sorted({r.paragraph for r in rewrites})
        for p in affected:
            record = self.paragraphs[p]
            record.raw_text = apply_rewrites(
                record.raw_text, [r for r in rewrites if r.paragraph == p]
            )
        return affected

    # -- follow-ups ------------------------------------------------------------------

    def node_followup(
        self, node_id: int, kind: str, request_id: str | None = None
    ) -> Iterator[WireEvent]:
        """Explain/Examples for a node; the reply is appended to the end of
        the paragraph holding the node's first mention."""
        with self.lock:
            node = self.graph.nodes.get(node_id)
            if node is None:
                raise NotFoundError(f"no node {node_id}")
            if node.placeholder or not node.mentions:
                raise InvalidOperation("follow-up target must have a mention")
            mention = min(
                node.mentions, key=lambda m: (m.paragraph, m.clean_span.start)
            )
            paragraph = mention.paragraph
            record = self.paragraphs[paragraph]
            events = parse_all(record.raw_text)
            sentence = record.sentences[
                sentence_index_at(record.sentences, mention.clean_span.start)
            ]
            raw_sentence = _slice_bytes(
                record.raw_text, clean_to_raw_span(events, sentence)
            )
            prompt_kind = (
                PromptKind.NODE_EXPLAIN if kind == "explain" else PromptKind.NODE_EXAMPLES
            )
            messages = build_node_followup(
                prompt_kind,
                self._task_history(),
                raw_sentence,
                mention.text,
                self.max_entity_id + 1,
            )
        yield from self._append_stream(
            paragraph, messages, f"{kind}:{node_id}", request_id
        )

    def expand(
        self, kind: str, index: int | None = None, request_id: str | None = None
    ) -> Iterator[WireEvent]:
        """tell-me-more appends to one paragraph; add-paragraph opens a new
        paragraph record fed through the normal completion pipeline."""
        if kind == "tell-me-more":
            record = self.paragraph(index)
            if record.status == STREAMING:
                raise SessionError("paragraph still streaming")
            messages = build_expand(
                PromptKind.TELL_ME_MORE, self._task_history(), record.raw_text
            )
            yield from self._append_stream(
                index, messages, f"more:{index}", request_id
            )
        elif kind == "add-paragraph":
            messages = build_expand(PromptKind.ADD_PARAGRAPH, self._task_history())
            yield from self._new_paragraph_stream(messages, request_id)
        else:
            raise SessionError(f"unknown expansion kind {kind!r}")

    def _append_stream(
        self, paragraph: int, messages, stream_name: str, request_id: str | None
    ) -> Iterator[WireEvent]:
        record = self.paragraph(paragraph)
        with self.lock:
            record.status = STREAMING
        yield self._emit(
            "paragraph-status",
            {"paragraph": paragraph, "status": STREAMING},
            request_id,
        )
        tokens, parts = self._drain_stream(messages, stream_name)
        yield from tokens
        reply = "".join(parts).strip()
        if reply:
            with self.lock:
                separator = " " if record.raw_text else ""
                raw_base = _bytelen(record.raw_text + separator)
                clean_base = _bytelen(record.clean_text + separator)
                reply_events = [
                    _demote_break(e) for e in coalesce_plain(parse_all(reply))
                ]
                adopted, remap_diagnostics = self._adopt_events(reply_events)
                record.raw_text += separator + reply
                record.clean_text += separator + events_to_clean_text(adopted)
                record.sentences = segment_sentences(record.clean_text)
                diffs = []
                for event in adopted:
                    self._track_ids(event)
                    if isinstance(event, (EntityMention, RelationMention)):
                        local = rebased(event, raw_base, clean_base)
                        diffs += self.graph.apply_event(local, paragraph)
            if separator:
                sep_raw = Span(raw_base - 1, raw_base)
                yield self._emit(
                    "parse-event",
                    {
                        "event": event_to_json(
                            PlainText(separator, sep_raw, Span(clean_base - 1, clean_base))
                        ),
                        "paragraph": paragraph,
                    },
                    request_id,
                )
            for event in adopted:
                yield self._emit(
                    "parse-event",
                    {
                        "event": event_to_json(rebased(event, raw_base, clean_base)),
                        "paragraph": paragraph,
                    },
                    request_id,
                )
            for diff in diffs:
                yield self._emit("graph-diff", diff.to_json(), request_id)
            for diagnostic in remap_diagnostics:
                yield self._emit("diagnostic", diagnostic.to_json(), request_id)
        yield from self._finish_paragraph(paragraph)

    def _new_paragraph_stream(self, messages, request_id: str | None) -> Iterator[WireEvent]:
        with self.lock:
            index = len(self.paragraphs)
            self.paragraphs.append(ParagraphRecord(index))
        yield self._emit(
            "paragraph-status", {"paragraph": index, "status": STREAMING}, request_id
        )
        tokens, parts = self._drain_stream(messages, f"add-paragraph:{index}")
        yield from tokens
        reply = "".join(parts).strip()
        with self.lock:
            chunks = [c.strip() for c in reply.split("\n\n") if c.strip()]
        for offset, chunk in enumerate(chunks):
            if offset > 0:
                with self.lock:
                    index = len(self.paragraphs)
                    self.paragraphs.append(ParagraphRecord(index))
                yield self._emit(
                    "paragraph-status",
                    {"paragraph": index, "status": STREAMING},
                    request_id,
                )
            with self.lock:
                record = self.paragraphs[index]
                record.raw_text = chunk
                events = parse_all(chunk)
                adopted, remap_diagnostics = self._adopt_events(events)
                record.clean_text = events_to_clean_text(adopted)
                record.sentences = segment_sentences(record.clean_text)
                diffs = []
                for event in adopted:
                    self._track_ids(event)
                    if isinstance(event, (EntityMention, RelationMention)):
                        diffs += self.graph.apply_event(event, index)
            for event in adopted:
                yield self._emit(
                    "parse-event",
                    {"event": event_to_json(event), "paragraph": index},
                    request_id,
                )
            for diff in diffs:
                yield self._emit("graph-diff", diff.to_json(), request_id)
            for diagnostic in remap_diagnostics:
                yield self._emit("diagnostic", diagnostic.to_json(), request_id)
            yield from self._finish_paragraph(index)

    # -- snapshots ----------------------------------------------------------------

    def graph_snapshot(
        self, view: str = "merged", saliency: str = "all", shown=None
    ) -> dict:
        with self.lock:
            return self.graph.visible_subgraph(
                saliency=saliency, view=view, paragraphs=shown
            )

    def export(self, fmt: str = "json") -> str:
        with self.lock:
            return self.graph.export(fmt)

    def to_json(self) -> dict:
        with self.lock:
            return {
                "id": self.id,
                "question": self.question,
                "paragraphs": [p.to_json() for p in self.paragraphs],
                "max_entity_id": self.max_entity_id,
                "done": self.done,
                "log_length": len(self.log),
            }


def _event_clean_text(event: ParseEvent) -> str:
    if isinstance(event, PlainText):
        return event.text
    if isinstance(event, (EntityMention, RelationMention)):
        return event.label
    return ""


def _demote_break(event: ParseEvent) -> ParseEvent:
    """Follow-up replies stay inside one paragraph: paragraph breaks in
    them become plain whitespace."""
    if isinstance(event, ParagraphBreak):
        return PlainText(event.text, event.raw_span, event.clean_span)
    return event


def golden_log(events: list[WireEvent]) -> list[dict]:
    """The chunking-independent projection of a session log: everything
    except token and parse-event entries, re-numbered densely.  Two runs
    of the same fixtures must agree on this byte-exactly."""
    out = []
    for event in events:
        if event.type in ("token", "parse-event"):
            continue
        doc = event.to_json()
        doc["seq"] = len(out) + 1
        out.append(doc)
    return out
