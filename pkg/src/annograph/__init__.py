"""annograph: live concept diagrams from inline-annotated LLM streams."""

from .grammar import (
    EntityMention,
    Malformed,
    ParagraphBreak,
    ParseEvent,
    PlainText,
    RelationMention,
    RelationPair,
    Saliency,
    Span,
    StreamParser,
    canonicalize,
    coalesce_plain,
    parse_all,
    serialize,
    strip_annotations,
)

__all__ = [
    "EntityMention",
    "Malformed",
    "ParagraphBreak",
    "ParseEvent",
    "PlainText",
    "RelationMention",
    "RelationPair",
    "Saliency",
    "Span",
    "StreamParser",
    "canonicalize",
    "coalesce_plain",
    "parse_all",
    "serialize",
    "strip_annotations",
]

__version__ = "0.1.0"
