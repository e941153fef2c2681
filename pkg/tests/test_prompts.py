import json
from pathlib import Path

import pytest

from annograph.prompts import (
    ChatMessage,
    PromptKind,
    build_correction,
    build_expand,
    build_initial,
    build_node_followup,
    build_outline,
    build_summary,
    load_template,
    template_for,
)

GOLDEN = Path(__file__).parent / "golden"

HISTORY = [
    ChatMessage("system", "sys"),
    ChatMessage("user", "What is an earthquake?"),
    ChatMessage("assistant", "[Earthquakes ($N1)] [happen ($H, $N1, $N2)] [often ($N2)]."),
]


def as_json(messages):
    return [m.to_json() for m in messages]


def check_golden(name, messages):
    path = GOLDEN / name
    got = json.dumps(as_json(messages), indent=2, ensure_ascii=False) + "\n"
    assert path.exists(), f"golden file {name} missing"
    assert got == path.read_text(), f"{name} drifted from golden"


# --- initial -----------------------------------------------------------------


def test_initial_structure_and_constancy():
    messages = build_initial("What is an earthquake?")
    assert [m.role for m in messages] == ["system", "user"]
    assert "Do not annotate conjunctive adverbs" in messages[0].content
    assert messages[1].content == "What is an earthquake?"
    again = build_initial("What is an earthquake?")
    assert messages == again


def test_initial_system_embeds_canonical_examples(paragraph_a, paragraph_b, paragraph_c):
    system = build_initial("q")[0].content
    assert f"Example paragraph A: {paragraph_a}" in system
    assert f"Example paragraph B: {paragraph_b}" in system
    assert f"Example paragraph C: {paragraph_c}" in system


def test_initial_rejects_empty_question():
    with pytest.raises(ValueError):
        build_initial("")
    with pytest.raises(ValueError):
        build_initial("   ")


def test_initial_golden():
    check_golden("initial.json", build_initial("What is an earthquake?"))


# --- correction -----------------------------------------------------------------


def test_correction_orphan_sentence_rendering():
    messages = build_correction(HISTORY, "The sentence.", [11, 12], [])
    body = messages[-1].content
    assert (
        "The entities $N11, $N12 were mentioned but not connected by any relationships."
        in body
    )
    assert "trying to connect entities with ids" not in body
    assert messages[:-1] == HISTORY
    assert messages[-1].role == "system"


def test_correction_deadend_only_omits_orphan_paragraph():
    messages = build_correction(
        HISTORY, "The sentence.", [], ["[emphasized ($H, $N9, $N13)]"]
    )
    body = messages[-1].content
    assert "were mentioned but not connected" not in body
    assert (
        "One or more relationships annotated by relationship annotations "
        "[emphasized ($H, $N9, $N13)] were trying to connect entities with ids "
        "that are not mentioned in the response." in body
    )


def test_correction_both_classes_present():
    messages = build_correction(
        HISTORY, "S.", [3], ["[r ($H, $N1, $N9)]", "[s ($L, $N2, $N9)]"]
    )
    body = messages[-1].content
    assert "The entities $N3 were mentioned" in body
    assert "[r ($H, $N1, $N9)], [s ($L, $N2, $N9)]" in body
    assert body.index("were mentioned") < body.index("trying to connect")
    assert "Please only include the re-annotated sentence in your response." in body


def test_correction_requires_a_diagnostic():
    with pytest.raises(ValueError):
        build_correction(HISTORY, "S.", [], [])


def test_correction_goldens_three_mixes():
    check_golden(
        "correction_orphans.json",
        build_correction(HISTORY, "The faulty sentence.", [11, 12], []),
    )
    check_golden(
        "correction_deadends.json",
        build_correction(
            HISTORY, "The faulty sentence.", [], ["[emphasized ($H, $N9, $N13)]"]
        ),
    )
    check_golden(
        "correction_both.json",
        build_correction(
            HISTORY, "The faulty sentence.", [11], ["[emphasized ($H, $N9, $N13)]"]
        ),
    )


# --- summary / outline ------------------------------------------------------------


def test_summary_and_outline_share_user_slot(paragraph_b):
    summary = build_summary(paragraph_b)
    outline = build_outline(paragraph_b)
    assert summary[1] == outline[1]
    assert summary[0] != outline[0]
    assert summary[1].content == paragraph_b
    assert "one-sentence summary" in summary[0].content
    assert "markdown format" in outline[0].content


def test_summary_rejects_incomplete_paragraph():
    with pytest.raises(ValueError):
        build_summary(" ")
    with pytest.raises(ValueError):
        build_outline("")


def test_summary_outline_goldens(paragraph_b):
    check_golden("summary.json", build_summary(paragraph_b))
    check_golden("outline.json", build_outline(paragraph_b))


# --- node follow-ups -----------------------------------------------------------------


DIVIDED_SENTENCE = (
    "[AI systems ($N1)] can be [divided into ($H, $N1, $N9; $H, $N1, $N10)] "
    "[narrow AI ($N9)] and [general AI ($N10)]."
)


def test_explain_contains_general_ai_exemplar():
    messages = build_node_followup(
        PromptKind.NODE_EXPLAIN, HISTORY, DIVIDED_SENTENCE, "general AI", 103
    )
    body = messages[-1].content
    assert messages[-1].role == "user"
    assert "[General AI ($N10)] refers to" in body
    assert DIVIDED_SENTENCE in body
    assert 'reached id "$N102", then the new annotation id should start at "$N103"' in body


def test_examples_contains_fruits_exemplar():
    messages = build_node_followup(
        PromptKind.NODE_EXAMPLES, HISTORY, "[Fruits ($N1)] are good.", "Fruits", 7
    )
    body = messages[-1].content
    assert "[apples ($N3)], [oranges ($N4)]" in body
    assert 'reached id "$N6", then the new annotation id should start at "$N7"' in body


def test_node_followup_label_must_occur_in_sentence():
    with pytest.raises(ValueError):
        build_node_followup(
            PromptKind.NODE_EXPLAIN, HISTORY, "no such label here", "general AI", 5
        )


def test_node_followup_goldens():
    check_golden(
        "node_explain.json",
        build_node_followup(
            PromptKind.NODE_EXPLAIN, HISTORY, DIVIDED_SENTENCE, "general AI", 103
        ),
    )
    check_golden(
        "node_examples.json",
        build_node_followup(
            PromptKind.NODE_EXAMPLES, HISTORY, DIVIDED_SENTENCE, "narrow AI", 103
        ),
    )


# --- expansion ------------------------------------------------------------------------


def test_tell_me_more_embeds_paragraph(paragraph_c):
    messages = build_expand(PromptKind.TELL_ME_MORE, HISTORY, paragraph_c)
    assert paragraph_c in messages[-1].content
    assert messages[:-1] == HISTORY


def test_add_paragraph_has_no_slot():
    messages = build_expand(PromptKind.ADD_PARAGRAPH, HISTORY)
    assert "{paragraph}" not in messages[-1].content
    assert "one paragraph after the end" in messages[-1].content


def test_tell_me_more_requires_paragraph():
    with pytest.raises(ValueError):
        build_expand(PromptKind.TELL_ME_MORE, HISTORY, None)
    with pytest.raises(ValueError):
        build_expand(PromptKind.TELL_ME_MORE, HISTORY, "")


def test_expand_goldens(paragraph_c):
    check_golden(
        "tell_me_more.json", build_expand(PromptKind.TELL_ME_MORE, HISTORY, paragraph_c)
    )
    check_golden("add_paragraph.json", build_expand(PromptKind.ADD_PARAGRAPH, HISTORY))


# --- misc ------------------------------------------------------------------------------


def test_history_passed_through_verbatim():
    for messages in (
        build_correction(HISTORY, "S.", [1], []),
        build_node_followup(PromptKind.NODE_EXPLAIN, HISTORY, "x [a ($N1)]", "a", 2),
        build_expand(PromptKind.ADD_PARAGRAPH, HISTORY),
    ):
        assert messages[: len(HISTORY)] == HISTORY


def test_template_for_every_kind_nonempty():
    for kind in PromptKind:
        assert template_for(kind).strip()


def test_chat_message_validation():
    with pytest.raises(ValueError):
        ChatMessage("robot", "hi")
    with pytest.raises(ValueError):
        ChatMessage("user", "")


def test_templates_parse_cleanly():
    from annograph.diagnostics import detect
    from annograph.grammar import parse_all

    summary_example = load_template("summary_system.txt").split(
        "You may summarize it as:\n"
    )[1]
    assert detect(parse_all(summary_example)) == []
