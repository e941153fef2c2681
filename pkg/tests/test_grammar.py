import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annograph.grammar import (
    LOOKAHEAD_LIMIT,
    EntityMention,
    Malformed,
    ParagraphBreak,
    PlainText,
    RelationMention,
    RelationPair,
    Saliency,
    Span,
    StreamParser,
    canonicalize,
    coalesce_plain,
    event_from_json,
    event_to_json,
    events_to_clean_text,
    events_to_raw_text,
    parse_all,
    serialize,
    strip_annotations,
)
from annograph.corpus import generate_fixture

from conftest import random_chunking


def mentions(events):
    return [e for e in events if isinstance(e, EntityMention)]


def relations(events):
    return [e for e in events if isinstance(e, RelationMention)]


def all_pairs(events):
    return [p for r in relations(events) for p in r.pairs]


def feed_in_chunks(chunks):
    parser = StreamParser()
    events = []
    for chunk in chunks:
        events.extend(parser.feed(chunk))
    events.extend(parser.finish())
    return coalesce_plain(events)


# --- fixture counts read off the canonical example paragraphs ---------------


def test_paragraph_a_counts(paragraph_a):
    events = parse_all(paragraph_a)
    ms = mentions(events)
    assert len(ms) == 21
    assert len({m.entity_id for m in ms}) == 16
    assert len(relations(events)) == 9
    pairs = all_pairs(events)
    assert len(pairs) == 15
    assert sum(1 for p in pairs if p.saliency is Saliency.HIGH) == 6
    assert sum(1 for p in pairs if p.saliency is Saliency.LOW) == 9
    assert not [e for e in events if isinstance(e, Malformed)]


def test_paragraph_b_counts(paragraph_b):
    events = parse_all(paragraph_b)
    ms = mentions(events)
    assert len({m.entity_id for m in ms}) == 11
    assert len(ms) == 13
    pairs = all_pairs(events)
    assert len(pairs) == 13
    # the "working on $(...)" irregularity still yields its pair
    working_on = [r for r in relations(events) if r.label == "working on"]
    assert len(working_on) == 1
    assert working_on[0].pairs == (RelationPair(Saliency.LOW, 1, 7),)
    soft = [e for e in events if isinstance(e, Malformed)]
    assert [m.reason for m in soft] == ["stray_dollar_in_label"]


def test_paragraph_c_counts(paragraph_c):
    events = parse_all(paragraph_c)
    assert len({m.entity_id for m in mentions(events)}) == 9
    pairs = all_pairs(events)
    assert len(pairs) == 9
    lows = [
        (r.label, p)
        for r in relations(events)
        for p in r.pairs
        if p.saliency is Saliency.LOW
    ]
    assert lows == [("making", RelationPair(Saliency.LOW, 5, 7))]


def test_feed_basic_sequence():
    parser = StreamParser()
    events = parser.feed("[Birds ($N1)] [can ($H, $N1, $N2)] [fly ($N2)]")
    events.extend(parser.finish())
    shapes = [
        (type(e).__name__, getattr(e, "label", None) or getattr(e, "text", None))
        for e in events
    ]
    assert shapes == [
        ("EntityMention", "Birds"),
        ("PlainText", " "),
        ("RelationMention", "can"),
        ("PlainText", " "),
        ("EntityMention", "fly"),
    ]
    assert events[0].entity_id == 1
    assert events[2].pairs == (RelationPair(Saliency.HIGH, 1, 2),)


def test_plain_passthrough():
    assert parse_all("hello world") == [
        PlainText("hello world", Span(0, 11), Span(0, 11))
    ]


def test_empty_input():
    assert parse_all("") == []


# --- finish semantics --------------------------------------------------------


def test_finish_flushes_dangling_bracket():
    parser = StreamParser()
    assert parser.feed("[dangling (") == []
    events = parser.finish()
    assert isinstance(events[0], PlainText) and events[0].text == "[dangling ("
    assert isinstance(events[1], Malformed) and events[1].reason == "unclosed"


def test_finish_empty_buffer():
    parser = StreamParser()
    parser.feed("done. ")
    assert parser.finish() == []


def test_finish_pending_newlines_make_break():
    parser = StreamParser()
    parser.feed("\n\n")
    events = parser.finish()
    assert len(events) == 1
    assert isinstance(events[0], ParagraphBreak)
    assert events[0].index == 1 and events[0].text == "\n\n"


def test_finish_is_idempotent():
    parser = StreamParser()
    parser.feed("x")
    parser.finish()
    assert parser.finish() == []
    with pytest.raises(ValueError):
        parser.feed("more")


# --- incremental == batch ----------------------------------------------------


def test_byte_at_a_time_equals_batch(paragraph_a, paragraph_b, paragraph_c):
    for text in (paragraph_a, paragraph_b, paragraph_c):
        assert feed_in_chunks(list(text)) == parse_all(text)


def test_random_chunkings_equal_batch(paragraph_a, paragraph_b, paragraph_c):
    rng = random.Random(7)
    texts = [paragraph_a, paragraph_b, paragraph_c]
    texts += [generate_fixture(rng).text for _ in range(6)]
    for text in texts:
        batch = parse_all(text)
        for _ in range(20):
            assert feed_in_chunks(random_chunking(rng, text)) == batch


def test_chunking_with_malformed_material():
    nasty = (
        "plain [ok ($N1)] stray ] and [nested [inner ($N2)] text\n"
        "\n\nnext [unclosed ( forever\n\nand [bad (x,y)] end [fine ($H, $N1, $N2)]"
    )
    rng = random.Random(3)
    batch = parse_all(nasty)
    for _ in range(50):
        assert feed_in_chunks(random_chunking(rng, nasty)) == batch


def test_lookahead_limit_flush_is_chunking_independent():
    long_bracket = "[" + "x" * (LOOKAHEAD_LIMIT + 200) + "]"
    batch = parse_all(long_bracket)
    kinds = [type(e).__name__ for e in batch]
    assert "Malformed" in kinds  # forced flush happened
    assert not relations(batch) and not mentions(batch)
    rng = random.Random(11)
    for _ in range(10):
        assert feed_in_chunks(random_chunking(rng, long_bracket)) == batch


def test_annotation_at_lookahead_limit_parses():
    label = "y" * (LOOKAHEAD_LIMIT - len("[ ($N1)]"))
    text = f"[{label} ($N1)]"
    assert len(text.encode()) == LOOKAHEAD_LIMIT
    events = parse_all(text)
    assert len(mentions(events)) == 1
    assert feed_in_chunks(list(text)) == events


# --- spans and clean text ----------------------------------------------------


def test_every_byte_attributed_exactly_once(paragraph_a, paragraph_b):
    for text in (paragraph_a, paragraph_b, "a [x ($N1)] b\n\nc"):
        events = parse_all(text)
        cursor = 0
        for event in events:
            if isinstance(event, Malformed):
                assert event.raw_span.start == event.raw_span.end
                continue
            assert event.raw_span.start == cursor
            cursor = event.raw_span.end
        assert cursor == len(text.encode("utf-8"))


def test_clean_text_reconstruction(paragraph_a, paragraph_b, paragraph_c):
    for text in (paragraph_a, paragraph_b, paragraph_c):
        events = parse_all(text)
        clean, _ = strip_annotations(text)
        assert events_to_clean_text(events) == clean
        for event in events:
            if isinstance(event, (EntityMention, RelationMention)):
                start, end = event.clean_span
                assert clean.encode("utf-8")[start:end].decode("utf-8") == event.label


def test_strip_paragraph_c_prefix():
    text = (
        "[Birds ($N1)] [can ($H, $N1, $N2)] [fly ($N2)] [due to ($H, $N2, $N3)] "
        "[a combination of physiological adaptations ($N3)]."
    )
    clean, spans = strip_annotations(text)
    assert clean == "Birds can fly due to a combination of physiological adaptations."
    assert len(spans) == 5
    assert serialize(clean, spans) == text


def test_strip_plain_text_unchanged():
    clean, spans = strip_annotations("no annotations here")
    assert clean == "no annotations here"
    assert spans == []


def test_non_ascii_byte_spans():
    text = "café [naïve plan ($N1)] fin"
    events = parse_all(text)
    clean, spans = strip_annotations(text)
    assert clean == "café naïve plan fin"
    mention = mentions(events)[0]
    raw = text.encode("utf-8")
    assert raw[mention.raw_span.start : mention.raw_span.end].decode() == (
        "[naïve plan ($N1)]"
    )
    assert serialize(clean, spans) == text
    assert feed_in_chunks(list(text)) == events


# --- payload recognition and malformed tolerance -----------------------------


def test_label_may_contain_balanced_parens():
    events = parse_all("[people (users) ($N5)]")
    (m,) = mentions(events)
    assert m.label == "people (users)" and m.entity_id == 5


def test_paper_typo_stray_dollar():
    events = parse_all("[working on $($L, $N1, $N7)]")
    (r,) = relations(events)
    assert r.label == "working on"
    assert r.pairs == (RelationPair(Saliency.LOW, 1, 7),)
    assert [e.reason for e in events if isinstance(e, Malformed)] == [
        "stray_dollar_in_label"
    ]


def test_case_insensitive_markers_soft_flagged():
    events = parse_all("[x ($n3)] [y ($h, $n3, $N4)]")
    assert mentions(events)[0].entity_id == 3
    (r,) = relations(events)
    assert r.pairs == (RelationPair(Saliency.HIGH, 3, 4),)
    reasons = [e.reason for e in events if isinstance(e, Malformed)]
    assert reasons == ["case_mismatch", "case_mismatch"]


def test_bracketed_prose_is_plain():
    for text in ("see [sic] here", "totals [1] cite", "[]"):
        events = parse_all(text)
        assert all(isinstance(e, PlainText) for e in events)
        assert events_to_clean_text(events) == text


def test_bad_payload_degrades_to_plain_with_marker():
    events = parse_all("[thing ($N1, $N2)]")
    assert isinstance(events[0], PlainText)
    assert events[0].text == "[thing ($N1, $N2)]"
    assert isinstance(events[1], Malformed) and events[1].reason == "bad_payload"


def test_entity_id_zero_rejected():
    events = parse_all("[zero ($N0)]")
    assert not mentions(events)
    assert any(
        isinstance(e, Malformed) and e.reason == "bad_payload" for e in events
    )


def test_nested_bracket_flushes_outer():
    events = parse_all("[outer [inner ($N1)] tail")
    assert isinstance(events[0], PlainText) and events[0].text == "[outer "
    assert isinstance(events[1], Malformed) and events[1].reason == "nested_bracket"
    assert mentions(events)[0].label == "inner"


def test_unclosed_bracket_flushed_at_paragraph_break():
    events = parse_all("[oops ($N1\n\nnext [ok ($N2)]")
    assert isinstance(events[0], PlainText) and events[0].text == "[oops ($N1"
    assert isinstance(events[1], Malformed) and events[1].reason == "unclosed"
    assert isinstance(events[2], ParagraphBreak)
    assert mentions(events)[0].entity_id == 2


def test_stray_dollar_outside_annotation_is_plain():
    events = parse_all("cost $5 and $N9 alone")
    assert all(isinstance(e, PlainText) for e in events)


# --- paragraph breaks --------------------------------------------------------


def test_single_newline_is_plain():
    events = parse_all("a\nb")
    assert events == [PlainText("a\nb", Span(0, 3), Span(0, 3))]


def test_newline_runs_make_one_break_each():
    events = parse_all("a\n\nb\n\n\n\nc")
    breaks = [e for e in events if isinstance(e, ParagraphBreak)]
    assert [b.index for b in breaks] == [1, 2]
    assert [b.text for b in breaks] == ["\n\n", "\n\n\n\n"]
    parser = StreamParser()
    parser.feed("a\n\nb\n\n\n\nc")
    parser.finish()
    assert parser.paragraph_index == 2


# --- serialize ---------------------------------------------------------------


def test_serialize_empty_spans_identity():
    assert serialize("plain words", []) == "plain words"


def test_serialize_contract_violations():
    clean, spans = strip_annotations("[a ($N1)] [b ($N2)]")
    with pytest.raises(ValueError):
        serialize(clean, list(reversed(spans)))
    (span, event), _ = spans
    with pytest.raises(ValueError):
        serialize(clean[:2], [(Span(0, span.end + 99), event)])


def test_round_trip_canonical_fixtures(paragraph_a, paragraph_c):
    rng = random.Random(5)
    texts = [paragraph_a, paragraph_c]
    texts += [generate_fixture(rng).text for _ in range(10)]
    for text in texts:
        clean, spans = strip_annotations(text)
        assert serialize(clean, spans) == text
        assert canonicalize(text) == text


def test_canonicalize_normalizes_spacing():
    assert canonicalize("[x ($h,$n1 , $N2)]") == "[x ($H, $N1, $N2)]"


# --- event JSON --------------------------------------------------------------


def test_event_json_round_trip(paragraph_a, paragraph_b):
    for text in (paragraph_a, paragraph_b, "a\n\n[x ($N1)] [oops"):
        events = parse_all(text)
        assert [event_from_json(event_to_json(e)) for e in events] == events


# --- property tests ----------------------------------------------------------

_labels = st.text(
    alphabet="abcdefgh XYZ'-", min_size=1, max_size=12
).filter(
    lambda s: s == s.strip()
    and not s.endswith("$")
    and "  " not in s
)


@st.composite
def _event_specs(draw):
    kind = draw(st.sampled_from(["entity", "relation", "plain"]))
    if kind == "plain":
        text = draw(
            st.text(alphabet="mnop qr.,;!", min_size=1, max_size=10)
        )
        return ("plain", text)
    label = draw(_labels)
    if kind == "entity":
        return ("entity", label, draw(st.integers(1, 30)))
    pairs = draw(
        st.lists(
            st.tuples(
                st.sampled_from([Saliency.HIGH, Saliency.LOW]),
                st.integers(1, 30),
                st.integers(1, 30),
            ),
            min_size=1,
            max_size=4,
        )
    )
    return ("relation", label, pairs)


def _render_spec(spec) -> str:
    if spec[0] == "plain":
        return spec[1]
    if spec[0] == "entity":
        return f"[{spec[1]} ($N{spec[2]})]"
    pairs = "; ".join(f"${s.value}, $N{a}, $N{b}" for s, a, b in spec[2])
    return f"[{spec[1]} ({pairs})]"


@given(st.lists(_event_specs(), max_size=12), st.randoms(use_true_random=False))
@settings(max_examples=120, deadline=None)
def test_parse_of_rendered_events_round_trips(specs, rnd):
    text = " ".join(_render_spec(s) for s in specs)
    events = parse_all(text)
    # rendered canonical text round-trips through strip+serialize
    clean, spans = strip_annotations(text)
    assert serialize(clean, spans) == text
    # random chunkings agree with batch
    chunks = random_chunking(rnd, text) if text else []
    assert feed_in_chunks(chunks) == events
    # mention labels and ids survive
    got = [(m.label, m.entity_id) for m in mentions(events)]
    want = [(s[1], s[2]) for s in specs if s[0] == "entity"]
    assert got == want


@given(st.text(alphabet="[]()$NHL,; \nabz123", max_size=64), st.randoms(use_true_random=False))
@settings(max_examples=150, deadline=None)
def test_arbitrary_soup_never_crashes_and_chunks_agree(text, rnd):
    batch = parse_all(text)
    assert feed_in_chunks(random_chunking(rnd, text)) == batch
    # every input byte is attributed to exactly one owning event
    cursor = 0
    for event in batch:
        if isinstance(event, Malformed):
            assert event.raw_span.start == event.raw_span.end
            continue
        assert event.raw_span.start == cursor
        cursor = event.raw_span.end
    assert cursor == len(text.encode("utf-8"))
