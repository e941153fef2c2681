"""Annotation-quality diagnostics and evaluation arithmetic.

Two layers:

* ``detect`` finds errors that are machine-detectable from the response
  alone: orphan nodes (mentioned entities participating in no
  relationship pair anywhere in the given scope), dead-end relationships
  (pairs referencing an id never mentioned in the scope), syntax-level
  parse trouble, repeated-token artifacts, and self-loop pairs.

* ``score_against_gold`` codes a predicted annotation against a
  human-authored gold annotation of the same clean text.  Matching is a
  mechanical stand-in for human semantic judgment: an entity mention
  matches when the clean spans overlap (after whitespace normalization)
  and the normalized labels are equal or one contains the other, which
  tolerates granularity differences.  A relationship pair matches on its
  mapped endpoints; saliency and the relation wording are not part of
  the match.  Saliency disagreements are never counted as errors.

Orphanhood is evaluated over whatever scope of events is passed in:
entity ids are response-global, so an entity connected only in another
paragraph of the provided scope is not an orphan.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .grammar import (
    EntityMention,
    Malformed,
    ParagraphBreak,
    ParseEvent,
    RelationMention,
    Span,
    events_to_clean_text,
    rebased,
)
from .sentences import segment_sentences, sentence_index_at


class DiagnosticKind(enum.Enum):
    # detectable from the response alone
    ORPHAN_NODE = "orphan_node"
    DEAD_END_RELATIONSHIP = "dead_end_relationship"
    MALFORMED_SYNTAX = "malformed_syntax"
    REPEATED_TOKEN_ARTIFACT = "repeated_token_artifact"
    SELF_LOOP_PAIR = "self_loop_pair"
    # coded only against a gold reference
    MISSING_ENTITY_PHRASE = "missing_entity_phrase"
    INCORRECT_ENTITY = "incorrect_entity"
    INCOMPLETE_ENTITY = "incomplete_entity"
    INCORRECT_COREFERENCE = "incorrect_coreference"
    MISSING_RELATIONSHIP = "missing_relationship"
    INCOMPLETE_RELATIONSHIP = "incomplete_relationship"
    REVERSED_RELATIONSHIP = "reversed_relationship"
    MISATTRIBUTED_RELATIONSHIP = "misattributed_relationship"


DETECTABLE_KINDS = frozenset(
    {
        DiagnosticKind.ORPHAN_NODE,
        DiagnosticKind.DEAD_END_RELATIONSHIP,
        DiagnosticKind.MALFORMED_SYNTAX,
        DiagnosticKind.REPEATED_TOKEN_ARTIFACT,
        DiagnosticKind.SELF_LOOP_PAIR,
    }
)


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    paragraph: int
    sentence: int
    subject_ids: tuple[int, ...]
    relation_label: str | None
    clean_span: Span  # paragraph-local
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "paragraph": self.paragraph,
            "sentence": self.sentence,
            "subject_ids": list(self.subject_ids),
            "relation_label": self.relation_label,
            "clean_span": list(self.clean_span),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class PrfScore:
    precision: float
    recall: float
    f_score: float

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
        }


def compute_prf(total: int, extracted: int, correct: int) -> PrfScore:
    """Precision/recall/F from gold-total, extracted, and correct counts."""
    if min(total, extracted, correct) < 0:
        raise ValueError("counts must be non-negative")
    if correct > extracted:
        raise ValueError(f"correct ({correct}) exceeds extracted ({extracted})")
    if correct > total:
        raise ValueError(f"correct ({correct}) exceeds total ({total})")
    precision = correct / extracted if extracted else 0.0
    recall = correct / total if total else 0.0
    f_score = (
        2 * precision * recall / (precision + recall) if precision + recall else 0.0
    )
    return PrfScore(precision, recall, f_score)


# --- scoped extraction -------------------------------------------------------


@dataclass
class _Scoped:
    """Events re-based to paragraph-local coordinates, plus clean texts."""

    mentions: list[tuple[int, EntityMention]] = field(default_factory=list)
    relations: list[tuple[int, RelationMention]] = field(default_factory=list)
    malformed: list[tuple[int, Malformed]] = field(default_factory=list)
    clean_texts: dict[int, str] = field(default_factory=dict)


def _scope(events: list[ParseEvent]) -> _Scoped:
    scoped = _Scoped()
    paragraph = 0
    raw_base = 0
    clean_base = 0
    texts: dict[int, list[str]] = defaultdict(list)
    for event in events:
        if isinstance(event, ParagraphBreak):
            paragraph = event.index
            raw_base = event.raw_span.end
            clean_base = event.clean_span.end
            continue
        local = rebased(event, -raw_base, -clean_base)
        if isinstance(local, EntityMention):
            scoped.mentions.append((paragraph, local))
            texts[paragraph].append(local.label)
        elif isinstance(local, RelationMention):
            scoped.relations.append((paragraph, local))
            texts[paragraph].append(local.label)
        elif isinstance(local, Malformed):
            scoped.malformed.append((paragraph, local))
        else:
            texts[paragraph].append(local.text)
    scoped.clean_texts = {p: "".join(parts) for p, parts in texts.items()}
    return scoped


def detect(events: list[ParseEvent]) -> list[Diagnostic]:
    """Machine-detectable diagnostics over the given scope of events.

    Pass a full response to evaluate orphanhood response-globally, or a
    single paragraph's events to evaluate it in isolation.
    """
    scoped = _scope(events)
    sentences = {
        p: segment_sentences(text) for p, text in scoped.clean_texts.items()
    }

    def locate(paragraph: int, span: Span) -> int:
        return sentence_index_at(sentences.get(paragraph, []), span.start)

    diagnostics: list[Diagnostic] = []
    mentioned: set[int] = {m.entity_id for _, m in scoped.mentions}
    referenced: set[int] = set()

    for paragraph, event in scoped.malformed:
        diagnostics.append(
            Diagnostic(
                DiagnosticKind.MALFORMED_SYNTAX,
                paragraph,
                locate(paragraph, event.clean_span),
                (),
                None,
                event.clean_span,
                detail=event.reason,
            )
        )

    for paragraph, event in scoped.mentions + scoped.relations:
        label = event.label
        if not label:
            continue
        prefix = scoped.clean_texts[paragraph].encode("utf-8")[
            : event.clean_span.start
        ].decode("utf-8", errors="ignore").rstrip()
        if prefix.lower().endswith(label.lower()):
            boundary = len(prefix) - len(label)
            if boundary == 0 or not prefix[boundary - 1].isalnum():
                subject = (
                    (event.entity_id,) if isinstance(event, EntityMention) else ()
                )
                diagnostics.append(
                    Diagnostic(
                        DiagnosticKind.REPEATED_TOKEN_ARTIFACT,
                        paragraph,
                        locate(paragraph, event.clean_span),
                        subject,
                        label if isinstance(event, RelationMention) else None,
                        event.clean_span,
                        detail=f"token {label!r} repeated before its annotation",
                    )
                )

    for paragraph, event in scoped.relations:
        for pair in event.pairs:
            referenced.update((pair.source, pair.target))
            if pair.source == pair.target:
                diagnostics.append(
                    Diagnostic(
                        DiagnosticKind.SELF_LOOP_PAIR,
                        paragraph,
                        locate(paragraph, event.clean_span),
                        (pair.source,),
                        event.label,
                        event.clean_span,
                        detail="relationship pair connects an entity to itself",
                    )
                )
            missing = tuple(
                sorted({e for e in (pair.source, pair.target) if e not in mentioned})
            )
            if missing:
                diagnostics.append(
                    Diagnostic(
                        DiagnosticKind.DEAD_END_RELATIONSHIP,
                        paragraph,
                        locate(paragraph, event.clean_span),
                        missing,
                        event.label,
                        event.clean_span,
                        detail="pair references ids never mentioned in scope",
                    )
                )

    first_mention: dict[int, tuple[int, EntityMention]] = {}
    for paragraph, mention in scoped.mentions:
        first_mention.setdefault(mention.entity_id, (paragraph, mention))
    for entity_id in sorted(mentioned - referenced):
        paragraph, mention = first_mention[entity_id]
        diagnostics.append(
            Diagnostic(
                DiagnosticKind.ORPHAN_NODE,
                paragraph,
                locate(paragraph, mention.clean_span),
                (entity_id,),
                None,
                mention.clean_span,
                detail="entity participates in no relationship pair",
            )
        )

    diagnostics.sort(
        key=lambda d: (d.paragraph, d.clean_span.start, d.kind.value, d.subject_ids)
    )
    return diagnostics


# --- gold-reference scoring ---------------------------------------------------

_WHITESPACE = frozenset(b" \t\n\r")


def _normalize_with_map(text: str) -> tuple[bytes, list[int]]:
    """Whitespace-fold the UTF-8 bytes; returns (normalized, offset map)
    where map[i] is the normalized offset of original byte offset i."""
    data = text.encode("utf-8")
    out = bytearray()
    mapping = []
    pending_space = False
    for byte in data:
        if byte in _WHITESPACE:
            mapping.append(len(out))
            pending_space = bool(out)
            continue
        if pending_space:
            out.append(0x20)
            pending_space = False
        mapping.append(len(out))
        out.append(byte)
    mapping.append(len(out))
    return bytes(out), mapping


def _norm_label(label: str) -> str:
    return " ".join(label.lower().split())


def _labels_match(a: str, b: str) -> bool:
    a, b = _norm_label(a), _norm_label(b)
    if not a or not b:
        return a == b
    return a == b or a in b or b in a


@dataclass
class EvalReport:
    """Per-kind error counts plus the count columns and PRF scores."""

    word_count: int
    entity_total: int
    entity_extracted: int
    entity_correct: int
    relationship_total: int
    relationship_extracted: int
    relationship_correct: int
    counts: dict[DiagnosticKind, int]
    entity_prf: PrfScore
    relationship_prf: PrfScore

    @property
    def orphan_rate(self) -> float:
        orphans = self.counts.get(DiagnosticKind.ORPHAN_NODE, 0)
        return orphans / self.entity_extracted if self.entity_extracted else 0.0

    @property
    def dead_end_rate_of_total(self) -> float:
        dead = self.counts.get(DiagnosticKind.DEAD_END_RELATIONSHIP, 0)
        return dead / self.relationship_total if self.relationship_total else 0.0

    @property
    def dead_end_rate_of_extracted(self) -> float:
        dead = self.counts.get(DiagnosticKind.DEAD_END_RELATIONSHIP, 0)
        return (
            dead / self.relationship_extracted if self.relationship_extracted else 0.0
        )

    def to_json(self) -> dict:
        return {
            "word_count": self.word_count,
            "entities": {
                "total": self.entity_total,
                "extracted": self.entity_extracted,
                "correct": self.entity_correct,
                "erroneous": self.entity_extracted - self.entity_correct,
                **self.entity_prf.to_json(),
            },
            "relationships": {
                "total": self.relationship_total,
                "extracted": self.relationship_extracted,
                "correct": self.relationship_correct,
                "erroneous": self.relationship_extracted - self.relationship_correct,
                **self.relationship_prf.to_json(),
            },
            "error_counts": {k.value: v for k, v in sorted(
                self.counts.items(), key=lambda kv: kv[0].value
            ) if v},
            "detectable_rates": {
                "orphan_rate_of_extracted_entities": self.orphan_rate,
                # the headline table divides dead-ends by total relationships
                # while the taxonomy divides by extracted; both are reported
                "dead_end_rate_of_total_relationships": self.dead_end_rate_of_total,
                "dead_end_rate_of_extracted_relationships": self.dead_end_rate_of_extracted,
            },
        }


_ENTITY_ERROR_ROWS = [
    DiagnosticKind.MISSING_ENTITY_PHRASE,
    DiagnosticKind.INCORRECT_ENTITY,
    DiagnosticKind.INCOMPLETE_ENTITY,
    DiagnosticKind.INCORRECT_COREFERENCE,
]
_RELATIONSHIP_ERROR_ROWS = [
    DiagnosticKind.MISSING_RELATIONSHIP,
    DiagnosticKind.DEAD_END_RELATIONSHIP,
    DiagnosticKind.REVERSED_RELATIONSHIP,
    DiagnosticKind.INCOMPLETE_RELATIONSHIP,
    DiagnosticKind.MISATTRIBUTED_RELATIONSHIP,
]

_ROW_TITLES = {
    DiagnosticKind.MISSING_ENTITY_PHRASE: "Missing Entity Phrase",
    DiagnosticKind.INCORRECT_ENTITY: "Incorrect Entity",
    DiagnosticKind.INCOMPLETE_ENTITY: "Incomplete Entity",
    DiagnosticKind.INCORRECT_COREFERENCE: "Incorrect Co-reference",
    DiagnosticKind.MISSING_RELATIONSHIP: "Missing Relationship",
    DiagnosticKind.DEAD_END_RELATIONSHIP: "Dead-end Relationship",
    DiagnosticKind.REVERSED_RELATIONSHIP: "Reversed Relationship",
    DiagnosticKind.INCOMPLETE_RELATIONSHIP: "Incomplete Relationship",
    DiagnosticKind.MISATTRIBUTED_RELATIONSHIP: "Misattributed Relationship",
}


def render_report(report: EvalReport) -> str:
    """Human-readable table mirroring the evaluation row layout."""
    lines = []
    push = lines.append
    push(f"{'Word Count':38} {report.word_count}")
    push("")
    push("Node Annotation")
    push(f"  {'Total Entity Phrases':36} {report.entity_total}")
    push(f"  {'Total Extracted Entity Phrases':36} {report.entity_extracted}")
    push(f"  {'Correct Extracted Entity Phrases':36} {report.entity_correct}")
    erroneous = report.entity_extracted - report.entity_correct
    push(f"  {'Erroneous Extracted Entity Phrases':36} {erroneous}")
    push(f"  {'Precision':36} {report.entity_prf.precision:.2%}")
    push(f"  {'Recall':36} {report.entity_prf.recall:.2%}")
    push(f"  {'F-score':36} {report.entity_prf.f_score:.2%}")
    for kind in _ENTITY_ERROR_ROWS:
        count = report.counts.get(kind, 0)
        rate = count / report.entity_total if report.entity_total else 0.0
        push(f"  {_ROW_TITLES[kind]:36} {count:<6} {rate:.2%}")
    push("")
    push("Relationship Annotation")
    push(f"  {'Total Relationships':36} {report.relationship_total}")
    push(f"  {'Total Extracted Relationships':36} {report.relationship_extracted}")
    push(f"  {'Correct Extracted Relationships':36} {report.relationship_correct}")
    erroneous = report.relationship_extracted - report.relationship_correct
    push(f"  {'Erroneous Extracted Relationships':36} {erroneous}")
    push(f"  {'Precision':36} {report.relationship_prf.precision:.2%}")
    push(f"  {'Recall':36} {report.relationship_prf.recall:.2%}")
    push(f"  {'F-score':36} {report.relationship_prf.f_score:.2%}")
    for kind in _RELATIONSHIP_ERROR_ROWS:
        count = report.counts.get(kind, 0)
        rate = count / report.relationship_total if report.relationship_total else 0.0
        push(f"  {_ROW_TITLES[kind]:36} {count:<6} {rate:.2%}")
    push("")
    push("Detectable Errors")
    orphans = report.counts.get(DiagnosticKind.ORPHAN_NODE, 0)
    push(f"  {'Orphan Nodes':36} {orphans:<6} {report.orphan_rate:.2%}")
    dead = report.counts.get(DiagnosticKind.DEAD_END_RELATIONSHIP, 0)
    push(
        f"  {'Dead-end Relationships':36} {dead:<6} "
        f"{report.dead_end_rate_of_total:.2%} of total, "
        f"{report.dead_end_rate_of_extracted:.2%} of extracted"
    )
    return "\n".join(lines) + "\n"


def score_against_gold(
    predicted: list[ParseEvent], gold: list[ParseEvent]
) -> EvalReport:
    """Code a predicted annotation against a gold annotation of the same
    clean text; returns per-kind counts and both PRF scores."""
    pred_clean = events_to_clean_text(predicted)
    gold_clean = events_to_clean_text(gold)
    pred_norm, pred_map = _normalize_with_map(pred_clean)
    gold_norm, gold_map = _normalize_with_map(gold_clean)
    if pred_norm != gold_norm:
        raise ValueError(
            "predicted and gold refer to different clean text "
            "(after whitespace normalization)"
        )

    def norm_span(span: Span, mapping: list[int]) -> Span:
        return Span(mapping[span.start], mapping[span.end])

    pred_mentions = [
        (norm_span(e.clean_span, pred_map), e)
        for e in predicted
        if isinstance(e, EntityMention)
    ]
    gold_mentions = [
        (norm_span(e.clean_span, gold_map), e)
        for e in gold
        if isinstance(e, EntityMention)
    ]

    counts: Counter = Counter()
    gold_taken = [False] * len(gold_mentions)
    mention_matches: list[tuple[int, int]] = []
    for pi, (pspan, pevent) in enumerate(pred_mentions):
        for gi, (gspan, gevent) in enumerate(gold_mentions):
            if gold_taken[gi]:
                continue
            if pspan.overlaps(gspan) and _labels_match(pevent.label, gevent.label):
                gold_taken[gi] = True
                mention_matches.append((pi, gi))
                break

    matched_pred = {pi for pi, _ in mention_matches}
    for pi, (pspan, pevent) in enumerate(pred_mentions):
        if pi in matched_pred:
            continue
        if any(pspan.overlaps(gspan) for gspan, _ in gold_mentions):
            counts[DiagnosticKind.INCOMPLETE_ENTITY] += 1
        else:
            counts[DiagnosticKind.INCORRECT_ENTITY] += 1
    counts[DiagnosticKind.MISSING_ENTITY_PHRASE] += gold_taken.count(False)

    # co-reference consistency: one gold entity should map to one pred id
    gold_to_pred_ids: dict[int, set[int]] = defaultdict(set)
    pred_to_gold_votes: dict[int, Counter] = defaultdict(Counter)
    for pi, gi in mention_matches:
        pevent = pred_mentions[pi][1]
        gevent = gold_mentions[gi][1]
        gold_to_pred_ids[gevent.entity_id].add(pevent.entity_id)
        pred_to_gold_votes[pevent.entity_id][gevent.entity_id] += 1
    for gold_id, pred_ids in gold_to_pred_ids.items():
        if len(pred_ids) > 1:
            counts[DiagnosticKind.INCORRECT_COREFERENCE] += len(pred_ids) - 1

    id_map: dict[int, int] = {}
    for pred_id, votes in pred_to_gold_votes.items():
        top = max(votes.values())
        id_map[pred_id] = min(g for g, v in votes.items() if v == top)

    gold_labels = {
        e.entity_id: e.label for e in gold if isinstance(e, EntityMention)
    }

    pred_pairs = [
        (e, p) for e in predicted if isinstance(e, RelationMention) for p in e.pairs
    ]
    gold_pairs = [
        (e, p) for e in gold if isinstance(e, RelationMention) for p in e.pairs
    ]

    gold_pair_taken = [False] * len(gold_pairs)
    forward: list[tuple[int, int]] = []
    for pi, (pevent, ppair) in enumerate(pred_pairs):
        mapped = (id_map.get(ppair.source), id_map.get(ppair.target))
        if None in mapped:
            continue
        for gi, (gevent, gpair) in enumerate(gold_pairs):
            if gold_pair_taken[gi]:
                continue
            if (gpair.source, gpair.target) == mapped:
                gold_pair_taken[gi] = True
                forward.append((pi, gi))
                if _is_strict_sublabel(pevent.label, gevent.label):
                    counts[DiagnosticKind.INCOMPLETE_RELATIONSHIP] += 1
                break
    matched_pred_pairs = {pi for pi, _ in forward}

    for pi, (pevent, ppair) in enumerate(pred_pairs):
        if pi in matched_pred_pairs:
            continue
        mapped = (id_map.get(ppair.source), id_map.get(ppair.target))
        if None in mapped:
            continue
        reversed_key = (mapped[1], mapped[0])
        for gi, (gevent, gpair) in enumerate(gold_pairs):
            if gold_pair_taken[gi]:
                continue
            if (gpair.source, gpair.target) == reversed_key:
                gold_pair_taken[gi] = True
                matched_pred_pairs.add(pi)
                counts[DiagnosticKind.REVERSED_RELATIONSHIP] += 1
                break

    counts[DiagnosticKind.MISSING_RELATIONSHIP] += gold_pair_taken.count(False)

    detectable = Counter(d.kind for d in detect(predicted))
    for kind, n in detectable.items():
        counts[kind] += n
    dead_pred_pairs = {
        pi
        for pi, (pevent, ppair) in enumerate(pred_pairs)
        if {ppair.source, ppair.target}
        - {e.entity_id for e in predicted if isinstance(e, EntityMention)}
    }
    for pi in range(len(pred_pairs)):
        if pi in matched_pred_pairs or pi in dead_pred_pairs:
            continue
        counts[DiagnosticKind.MISATTRIBUTED_RELATIONSHIP] += 1

    entity_prf = compute_prf(
        len(gold_mentions), len(pred_mentions), len(mention_matches)
    )
    relationship_prf = compute_prf(len(gold_pairs), len(pred_pairs), len(forward))
    return EvalReport(
        word_count=len(pred_clean.split()),
        entity_total=len(gold_mentions),
        entity_extracted=len(pred_mentions),
        entity_correct=len(mention_matches),
        relationship_total=len(gold_pairs),
        relationship_extracted=len(pred_pairs),
        relationship_correct=len(forward),
        counts={k: v for k, v in counts.items() if v},
        entity_prf=entity_prf,
        relationship_prf=relationship_prf,
    )


def _is_strict_sublabel(pred_label: str, gold_label: str) -> bool:
    a, b = _norm_label(pred_label), _norm_label(gold_label)
    return bool(a) and a != b and a in b
