import json
import random

import pytest

from annograph.diagnostics import DiagnosticKind, detect
from annograph.grammar import parse_all
from annograph.graph import replay_diffs, GraphDiff
from annograph.orchestrator import Session, SessionError, golden_log
from annograph.transport import Transport, TransportConfig, TransportMode, write_fixture

from conftest import random_chunking

CLEAN_P0 = (
    "[Tectonic plates ($N1)] [shift along ($H, $N1, $N2)] [fault lines ($N2)]. "
    "[The shift ($N1)] [generates ($H, $N1, $N3)] [seismic waves ($N3)]."
)
CLEAN_P1 = (
    "[The Richter scale ($N4)] [measures ($H, $N4, $N5)] [earthquake magnitude ($N5)]."
)
CLEAN_RESPONSE = CLEAN_P0 + "\n\n" + CLEAN_P1

FAULTY_P0 = (
    "[Tectonic plates ($N1)] [shift along ($H, $N1, $N2)] [fault lines ($N2)]. "
    "[Seismic waves ($N3)] [spread ($H, $N3, $N9)] rapidly."
)
CORRECTION_REPLY = (
    "[Seismic waves ($N3)] [spread through ($H, $N3, $N4)] [the crust ($N4)] rapidly."
)

SUMMARY_0 = "[Tectonic plates ($N1)] [generate ($H, $N1, $N3)] [seismic waves ($N3)]."
SUMMARY_1 = "[The Richter scale ($N4)] [measures ($H, $N4, $N5)] [earthquake magnitude ($N5)]."
OUTLINE_0 = "# Plates\n1. shift along fault lines"
OUTLINE_1 = "# Measurement\n1. Richter scale"


def chunked(rng, text):
    return [(float(i), c) for i, c in enumerate(random_chunking(rng, text))]


def clean_fixtures(tmp_path, rng=None, name="clean"):
    """Fixture dir for the two-paragraph clean session."""
    rng = rng or random.Random(0)
    base = tmp_path / name
    write_fixture(base / "000.ndjson", chunked(rng, CLEAN_RESPONSE))
    write_fixture(base / "001.ndjson", chunked(rng, SUMMARY_0))  # summary p0
    write_fixture(base / "002.ndjson", chunked(rng, OUTLINE_0))  # outline p0
    write_fixture(base / "003.ndjson", chunked(rng, SUMMARY_1))  # summary p1
    write_fixture(base / "004.ndjson", chunked(rng, OUTLINE_1))  # outline p1
    return base


def faulty_fixtures(tmp_path, rng=None, name="faulty"):
    """Fixture dir for the dead-end + self-correction session."""
    rng = rng or random.Random(1)
    base = tmp_path / name
    write_fixture(base / "000.ndjson", chunked(rng, FAULTY_P0))
    write_fixture(base / "001.ndjson", chunked(rng, CORRECTION_REPLY))
    write_fixture(base / "002.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "003.ndjson", chunked(rng, OUTLINE_0))
    return base


def run_session(fixture_dir, question="What is an earthquake?"):
    transport = Transport(
        TransportConfig(mode=TransportMode.REPLAY, fixture_path=fixture_dir)
    )
    session = Session(transport)
    events = list(session.ask(question))
    return session, events


# --- basic pipeline -----------------------------------------------------------


def test_clean_session_completes_paragraphs(tmp_path):
    session, events = run_session(clean_fixtures(tmp_path))
    assert [p.status for p in session.paragraphs] == ["complete", "complete"]
    assert session.paragraphs[0].raw_text == CLEAN_P0
    assert session.paragraphs[1].raw_text == CLEAN_P1
    assert session.paragraphs[0].clean_text.startswith("Tectonic plates shift along")
    assert session.paragraphs[0].summary_text == SUMMARY_0
    assert session.paragraphs[0].outline == OUTLINE_0
    assert session.paragraphs[1].summary_text == SUMMARY_1
    types = [e.type for e in events]
    assert "summary-ready" in types and "outline-ready" in types
    assert "diagnostic" not in types  # clean paragraphs spawn no correction
    assert session.done


def test_empty_question_rejected(tmp_path):
    session, _ = None, None
    transport = Transport(
        TransportConfig(mode=TransportMode.REPLAY, fixture_path=clean_fixtures(tmp_path))
    )
    session = Session(transport)
    with pytest.raises(SessionError):
        next(session.ask("   "))


def test_second_question_rejected(tmp_path):
    session, _ = run_session(clean_fixtures(tmp_path))
    with pytest.raises(SessionError):
        next(session.ask("another?"))


def test_first_node_added_precedes_final_token(tmp_path):
    _, events = run_session(clean_fixtures(tmp_path))
    first_node = next(
        e.seq
        for e in events
        if e.type == "graph-diff" and e.payload["kind"] == "node_added"
    )
    last_main_token = max(
        e.seq
        for e in events
        if e.type == "token" and e.payload["stream"] == "main"
    )
    assert first_node < last_main_token


def test_graph_matches_batch_parse_of_response(tmp_path):
    session, _ = run_session(clean_fixtures(tmp_path))
    from annograph.graph import build_graph

    expected = build_graph(parse_all(CLEAN_RESPONSE))
    assert session.graph.structure_key() == expected.structure_key()
    assert session.max_entity_id == 5


# --- correction loop ------------------------------------------------------------


def test_correction_loop_status_transitions_and_elimination(tmp_path):
    session, events = run_session(faulty_fixtures(tmp_path))
    record = session.paragraphs[0]
    assert record.status == "corrected"
    statuses = [
        e.payload["status"]
        for e in events
        if e.type == "paragraph-status" and e.payload["paragraph"] == 0
    ]
    assert statuses == ["streaming", "complete", "correcting", "corrected"]
    # the dead-end diagnostic was reported, then eliminated by the correction
    reported = [e for e in events if e.type == "diagnostic"]
    assert any(
        e.payload["kind"] == "dead_end_relationship" for e in reported
    )
    assert detect(parse_all(record.raw_text)) == []
    assert record.raw_text.endswith(CORRECTION_REPLY)
    # the placeholder for the dead-end id is gone from the graph
    assert 9 not in session.graph.nodes
    assert session.graph.nodes[4].label == "the crust"


def test_correction_request_names_offending_relation(tmp_path):
    base = faulty_fixtures(tmp_path)
    transport = Transport(
        TransportConfig(mode=TransportMode.REPLAY, fixture_path=base)
    )
    session = Session(transport)
    requests = []
    original = transport.start_stream

    def spy(messages):
        requests.append(list(messages))
        return original(messages)

    transport.start_stream = spy
    list(session.ask("What is an earthquake?"))
    correction_request = requests[1]
    body = correction_request[-1].content
    assert "[spread ($H, $N3, $N9)]" in body
    assert "were trying to connect entities with ids" in body
    assert "were mentioned but not connected" not in body
    # the history embeds the full prior exchange
    assert correction_request[0].content == requests[0][0].content
    assert correction_request[-2].role == "assistant"
    assert FAULTY_P0 in correction_request[-2].content


def test_correction_golden_log_stable_across_runs_and_chunkings(tmp_path):
    logs = []
    for seed in (11, striking := 29, 47):
        base = faulty_fixtures(tmp_path, random.Random(seed), name=f"faulty{seed}")
        _, events = run_session(base)
        logs.append(json.dumps(golden_log(events), sort_keys=True))
    assert logs[0] == logs[1] == logs[2]


def test_rejected_correction_reverts_status(tmp_path):
    rng = random.Random(3)
    base = tmp_path / "reject"
    write_fixture(base / "000.ndjson", chunked(rng, FAULTY_P0))
    write_fixture(base / "001.ndjson", [(0.0, "Sorry, no annotations here.")])
    write_fixture(base / "002.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "003.ndjson", chunked(rng, OUTLINE_0))
    session, events = run_session(base)
    record = session.paragraphs[0]
    assert record.status == "complete"
    errors = [e for e in events if e.type == "error"]
    assert errors and "correction rejected" in errors[0].payload["reason"]
    # the faulty text is retained, diagnostic still detectable
    kinds = [d.kind for d in detect(parse_all(record.raw_text))]
    assert DiagnosticKind.DEAD_END_RELATIONSHIP in kinds


def test_identical_replacement_yields_empty_diff_list(tmp_path):
    rng = random.Random(4)
    base = tmp_path / "identical"
    write_fixture(base / "000.ndjson", chunked(rng, FAULTY_P0))
    sentence = (
        "[Seismic waves ($N3)] [spread ($H, $N3, $N9)] rapidly."
    )
    write_fixture(base / "001.ndjson", [(0.0, sentence)])
    write_fixture(base / "002.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "003.ndjson", chunked(rng, OUTLINE_0))
    session, events = run_session(base)
    applied = [e for e in events if e.type == "correction-applied"]
    assert applied and applied[0].payload["diffs"] == []
    assert session.paragraphs[0].status == "corrected"


def test_one_round_bound_even_when_faults_remain(tmp_path):
    rng = random.Random(5)
    base = tmp_path / "oneround"
    write_fixture(base / "000.ndjson", chunked(rng, FAULTY_P0))
    # the "fix" still contains a dead-end; no second round may be issued
    write_fixture(
        base / "001.ndjson",
        [(0.0, "[Seismic waves ($N3)] [spread ($H, $N3, $N77)] far.")],
    )
    write_fixture(base / "002.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "003.ndjson", chunked(rng, OUTLINE_0))
    session, events = run_session(base)
    correction_tokens = {
        e.payload["stream"]
        for e in events
        if e.type == "token" and e.payload["stream"].startswith("correction")
    }
    assert len(correction_tokens) == 1
    assert session.paragraphs[0].correction_rounds == 1


# --- determinism and replay -------------------------------------------------------


def test_diff_log_replay_reproduces_graph(tmp_path):
    session, events = run_session(faulty_fixtures(tmp_path))
    diffs = [
        GraphDiff.from_json(e.payload)
        for e in events
        if e.type == "graph-diff"
    ]
    # payloads may carry the animation hint; replay ignores unknown keys
    replayed = replay_diffs(diffs)
    assert replayed.to_json() == session.graph.to_json()


def test_non_blocking_user_operations_while_tasks_pending(tmp_path):
    base = clean_fixtures(tmp_path)
    transport = Transport(
        TransportConfig(mode=TransportMode.REPLAY, fixture_path=base)
    )
    session = Session(transport)
    pump = session.ask("What is an earthquake?")
    trimmed = False
    for event in pump:
        if (
            not trimmed
            and event.type == "paragraph-status"
            and event.payload == {"paragraph": 0, "status": "complete"}
        ):
            assert session.pending_tasks  # correction/summary/outline queued
            session.collapse(1)  # user operation succeeds immediately
            session.expand_node(1)
            trimmed = True
    assert trimmed
    assert session.paragraphs[0].summary_text == SUMMARY_0


# --- follow-ups ----------------------------------------------------------------


EXPLAIN_REPLY = (
    "[Fault lines ($N2)] [are ($H, $N2, $N6)] [fractures in rock ($N6)]."
)


def test_node_followup_appends_and_branches(tmp_path):
    base = clean_fixtures(tmp_path)
    rng = random.Random(6)
    write_fixture(base / "005.ndjson", chunked(rng, EXPLAIN_REPLY))
    write_fixture(base / "006.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "007.ndjson", chunked(rng, OUTLINE_0))
    session, _ = run_session(base)
    max_before = session.max_entity_id
    events = list(session.node_followup(2, "explain", request_id="r1"))
    assert session.paragraphs[0].raw_text == CLEAN_P0 + " " + EXPLAIN_REPLY
    # new branch grows from the selected node
    assert any(
        e.key == ("are", "H", 2, 6) for e in session.graph.edges.values()
    )
    assert session.graph.nodes[6].label == "fractures in rock"
    assert session.max_entity_id == 6 > max_before
    assert all(
        e.request_id == "r1" for e in events if e.type == "graph-diff"
    )


def test_followup_reusing_id_adds_mention_not_node(tmp_path):
    base = clean_fixtures(tmp_path)
    rng = random.Random(7)
    reply = "[Fault lines ($N2)] [stay ($H, $N2, $N1)] [plates ($N1)]."
    write_fixture(base / "005.ndjson", chunked(rng, reply))
    write_fixture(base / "006.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "007.ndjson", chunked(rng, OUTLINE_0))
    session, _ = run_session(base)
    nodes_before = len(session.graph.nodes)
    mentions_before = len(session.graph.nodes[2].mentions)
    list(session.node_followup(2, "explain"))
    assert len(session.graph.nodes) == nodes_before
    assert len(session.graph.nodes[2].mentions) == mentions_before + 1


def test_followup_id_collision_remapped_with_diagnostic(tmp_path):
    base = clean_fixtures(tmp_path)
    rng = random.Random(8)
    # reuses id 4 ("The Richter scale") for an unrelated concept
    reply = "[Fault lines ($N2)] [host ($H, $N2, $N4)] [magma veins ($N4)]."
    write_fixture(base / "005.ndjson", chunked(rng, reply))
    write_fixture(base / "006.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "007.ndjson", chunked(rng, OUTLINE_0))
    session, _ = run_session(base)
    events = list(session.node_followup(2, "explain"))
    remaps = [
        e
        for e in events
        if e.type == "diagnostic"
        and e.payload["kind"] == "incorrect_coreference"
    ]
    assert len(remaps) == 1
    assert session.graph.nodes[6].label == "magma veins"
    assert session.graph.nodes[4].label == "The Richter scale"
    assert ("host", "H", 2, 6) in {e.key for e in session.graph.edges.values()}


def test_followup_on_placeholder_rejected(tmp_path):
    session, _ = run_session(
        faulty_fixtures(tmp_path, random.Random(9), name="faulty-ph")
    )
    from annograph.graph import InvalidOperation, NotFoundError

    with pytest.raises(NotFoundError):
        next(session.node_followup(404, "explain"))


def test_add_paragraph_grows_session(tmp_path):
    base = clean_fixtures(tmp_path)
    rng = random.Random(10)
    new_para = "[Aftershocks ($N6)] [follow ($H, $N6, $N1)] [tectonic plates ($N1)]."
    write_fixture(base / "005.ndjson", chunked(rng, new_para))
    write_fixture(base / "006.ndjson", chunked(rng, SUMMARY_0))
    write_fixture(base / "007.ndjson", chunked(rng, OUTLINE_0))
    session, _ = run_session(base)
    assert len(session.paragraphs) == 2
    list(session.expand("add-paragraph"))
    assert len(session.paragraphs) == 3
    record = session.paragraphs[2]
    assert record.status == "complete"
    assert record.raw_text == new_para
    assert record.summary_text == SUMMARY_0
    view = session.graph_snapshot(view="split", shown=2)
    assert {n["id"] for n in view["nodes"]} == {1, 6}


def test_tell_me_more_flows_through_diagnostics_path(tmp_path):
    base = clean_fixtures(tmp_path)
    rng = random.Random(12)
    # the continuation introduces a fresh dead-end, which must trigger the
    # same correction pipeline the initial stream uses
    more = "[Magnitude ($N6)] [links to ($H, $N6, $N42)] energy."
    write_fixture(base / "005.ndjson", chunked(rng, more))
    write_fixture(
        base / "006.ndjson",
        [(0.0, "[Magnitude ($N6)] [links to ($H, $N6, $N5)] [earthquake magnitude ($N5)].")],
    )
    write_fixture(base / "007.ndjson", chunked(rng, SUMMARY_1))
    write_fixture(base / "008.ndjson", chunked(rng, OUTLINE_1))
    session, _ = run_session(base)
    events = list(session.expand("tell-me-more", 1))
    record = session.paragraphs[1]
    assert record.status == "corrected"
    assert detect(parse_all(record.raw_text)) == []
    statuses = [
        e.payload["status"]
        for e in events
        if e.type == "paragraph-status" and e.payload["paragraph"] == 1
    ]
    assert statuses == ["streaming", "complete", "correcting", "corrected"]


def test_transport_failure_surfaces_as_error_event(tmp_path):
    base = tmp_path / "missing"
    base.mkdir()
    transport = Transport(
        TransportConfig(mode=TransportMode.REPLAY, fixture_path=base)
    )
    session = Session(transport)
    events = list(session.ask("What is an earthquake?"))
    assert any(e.type == "error" for e in events)
    assert session.done
    # session remains queryable
    assert session.graph_snapshot()["nodes"] == []


def test_event_log_ordering_invariant(tmp_path):
    """For any node, its node_added diff precedes every edge_added that
    touches it (prospective references create the placeholder first)."""
    session, events = run_session(faulty_fixtures(tmp_path, random.Random(77), name="order"))
    seen_nodes = set()
    for event in events:
        if event.type != "graph-diff":
            continue
        kind = event.payload["kind"]
        payload = event.payload["payload"]
        if kind == "node_added":
            seen_nodes.add(payload["id"])
        elif kind == "edge_added":
            assert payload["source"] in seen_nodes
            assert payload["target"] in seen_nodes
    seqs = [e.seq for e in events]
    assert seqs == sorted(seqs)
