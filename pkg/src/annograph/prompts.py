"""Chat prompt builders for the eight request kinds.

Templates live as text assets under ``templates/`` so prompt iteration
never touches code; builders only fill slots (the faulty sentence,
diagnostic id lists, node labels, the id-continuation numbers) and
thread the prior conversation through unchanged.  For fixed inputs the
output is byte-identical: no timestamps, no randomness.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_json(cls, doc: dict) -> "ChatMessage":
        return cls(doc["role"], doc["content"])


class PromptKind(enum.Enum):
    INITIAL = "initial"
    SELF_CORRECTION = "self_correction"
    SUMMARY = "summary"
    OUTLINE = "outline"
    NODE_EXPLAIN = "node_explain"
    NODE_EXAMPLES = "node_examples"
    TELL_ME_MORE = "tell_me_more"
    ADD_PARAGRAPH = "add_paragraph"


def load_template(name: str) -> str:
    return (
        resources.files("annograph.templates").joinpath(name).read_text("utf-8")
    )


def template_for(kind: PromptKind) -> str:
    """The template text shown by ``prompts show``; the self-correction
    skeleton is shown with its conditional paragraphs in place."""
    if kind is PromptKind.SELF_CORRECTION:
        return "\n\n".join(
            load_template(n)
            for n in (
                "correction_intro.txt",
                "correction_orphans.txt",
                "correction_deadends.txt",
                "correction_outro.txt",
            )
        )
    names = {
        PromptKind.INITIAL: "initial_system.txt",
        PromptKind.SUMMARY: "summary_system.txt",
        PromptKind.OUTLINE: "outline_system.txt",
        PromptKind.NODE_EXPLAIN: "node_explain_user.txt",
        PromptKind.NODE_EXAMPLES: "node_examples_user.txt",
        PromptKind.TELL_ME_MORE: "tell_me_more_user.txt",
        PromptKind.ADD_PARAGRAPH: "add_paragraph_user.txt",
    }
    return load_template(names[kind])


def build_initial(question: str) -> list[ChatMessage]:
    if not question.strip():
        raise ValueError("question must be non-empty")
    return [
        ChatMessage("system", load_template("initial_system.txt")),
        ChatMessage("user", question),
    ]


def build_correction(
    history: list[ChatMessage],
    sentence: str,
    orphan_ids: list[int],
    deadend_relations: list[str],
) -> list[ChatMessage]:
    """History plus the correction request; the orphan and dead-end
    paragraphs are each included only when that class of diagnostic is
    present."""
    if not orphan_ids and not deadend_relations:
        raise ValueError("nothing to correct: no orphan ids, no dead-end relations")
    parts = [load_template("correction_intro.txt").format(sentence=sentence)]
    if orphan_ids:
        rendered = ", ".join(f"$N{i}" for i in orphan_ids)
        parts.append(
            load_template("correction_orphans.txt").format(orphan_ids=rendered)
        )
    if deadend_relations:
        rendered = ", ".join(deadend_relations)
        parts.append(
            load_template("correction_deadends.txt").format(
                deadend_relations=rendered
            )
        )
    parts.append(load_template("correction_outro.txt"))
    return list(history) + [ChatMessage("system", "\n\n".join(parts))]


def build_summary(paragraph: str) -> list[ChatMessage]:
    if not paragraph.strip():
        raise ValueError("paragraph must be non-empty")
    return [
        ChatMessage("system", load_template("summary_system.txt")),
        ChatMessage("user", paragraph),
    ]


def build_outline(paragraph: str) -> list[ChatMessage]:
    if not paragraph.strip():
        raise ValueError("paragraph must be non-empty")
    return [
        ChatMessage("system", load_template("outline_system.txt")),
        ChatMessage("user", paragraph),
    ]


def build_node_followup(
    kind: PromptKind,
    history: list[ChatMessage],
    sentence: str,
    node_label: str,
    next_id: int,
) -> list[ChatMessage]:
    """Explain/Examples request for a node; ``next_id`` continues the
    session's entity numbering (max id + 1)."""
    if kind not in (PromptKind.NODE_EXPLAIN, PromptKind.NODE_EXAMPLES):
        raise ValueError(f"not a node follow-up kind: {kind}")
    if node_label not in sentence:
        raise ValueError(f"label {node_label!r} does not occur in the sentence")
    if next_id < 2:
        raise ValueError("next_id must follow at least one existing id")
    name = (
        "node_explain_user.txt"
        if kind is PromptKind.NODE_EXPLAIN
        else "node_examples_user.txt"
    )
    content = load_template(name).format(
        sentence=sentence,
        label=node_label,
        last_id=next_id - 1,
        next_id=next_id,
    )
    return list(history) + [ChatMessage("user", content)]


def build_expand(
    kind: PromptKind,
    history: list[ChatMessage],
    paragraph: str | None = None,
) -> list[ChatMessage]:
    """Tell-me-more (needs the target paragraph) or add-a-paragraph."""
    if kind is PromptKind.TELL_ME_MORE:
        if not paragraph or not paragraph.strip():
            raise ValueError("tell-me-more requires the paragraph to extend")
        content = load_template("tell_me_more_user.txt").format(paragraph=paragraph)
    elif kind is PromptKind.ADD_PARAGRAPH:
        content = load_template("add_paragraph_user.txt")
    else:
        raise ValueError(f"not an expansion kind: {kind}")
    return list(history) + [ChatMessage("user", content)]
