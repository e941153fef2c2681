"""Random annotated-fixture generation and planted-fault mutation.

Fixtures are canonical-form responses (1-4 paragraphs, response-global
entity ids, every entity in at least one relationship pair) so that a
freshly generated fixture is diagnostic-free and round-trips through
serialize/parse byte-exactly.

Mutations plant specific, individually-accounted faults.  The ledger is
maintained by plain dict/counter arithmetic on what each mutation did,
never by running the detector or the scorer, so it is an independent
oracle for both.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

from .grammar import (
    EntityMention,
    RelationMention,
    Saliency,
    is_mention,
    parse_all,
    render_annotation,
)

# Distinct pools so entity labels never collide with connective filler,
# which keeps mention matching and repeated-token detection unambiguous.
_NOUNS = [
    "glacier", "archive", "turbine", "catalyst", "harbor", "lattice",
    "pigment", "orchard", "voltage", "compass", "sediment", "plasma",
    "monsoon", "ledger", "quarry", "enzyme", "pendulum", "estuary",
    "circuit", "fresco", "aquifer", "dynamo", "mosaic", "reactor",
    "canopy", "isotope", "meridian", "tundra", "basilica", "nebula",
]
_ADJECTIVES = [
    "coastal", "molten", "ancient", "resonant", "brittle", "luminous",
    "dense", "arid", "volatile", "stratified", "temperate", "magnetic",
]
_VERBS = [
    "drives", "erodes", "supports", "regulates", "feeds", "anchors",
    "amplifies", "stabilizes", "overlaps", "shapes", "binds", "cools",
]
_FILLERS = ["notably", "meanwhile", "in practice", "over time", "broadly"]


@dataclass
class Fixture:
    """A generated response plus its structural bookkeeping."""

    text: str
    mention_counts: Counter = field(default_factory=Counter)
    pairs: Counter = field(default_factory=Counter)  # (saliency, src, tgt, label)


def _entity_label(rng: random.Random, used: set[str]) -> str:
    while True:
        words = [rng.choice(_NOUNS)]
        if rng.random() < 0.5:
            words.insert(0, rng.choice(_ADJECTIVES))
        if rng.random() < 0.2:
            words.append(rng.choice(_NOUNS))
        label = " ".join(words)
        if label not in used:
            used.add(label)
            return label


def _entity(label: str, entity_id: int) -> str:
    return f"[{label} ($N{entity_id})]"


def _relation(label: str, pairs) -> str:
    body = "; ".join(f"${s.value}, $N{a}, $N{b}" for s, a, b in pairs)
    return f"[{label} ({body})]"


def generate_fixture(
    rng: random.Random,
    paragraphs: int | None = None,
    entities_per_paragraph: tuple[int, int] = (3, 7),
) -> Fixture:
    """One canonical multi-paragraph response with no detectable faults."""
    n_paragraphs = paragraphs or rng.randint(1, 4)
    used_labels: set[str] = set()
    labels: dict[int, str] = {}
    next_id = 1
    out_paragraphs = []
    fixture = Fixture(text="")
    for _ in range(n_paragraphs):
        n_entities = rng.randint(*entities_per_paragraph)
        ids = list(range(next_id, next_id + n_entities))
        next_id += n_entities
        for i in ids:
            labels[i] = _entity_label(rng, used_labels)
        parts = [_entity(labels[ids[0]], ids[0])]
        fixture.mention_counts[ids[0]] += 1
        k = 1
        while k < len(ids):
            src = rng.choice(ids[:k])
            fanout = min(rng.choice([1, 1, 1, 2, 3]), len(ids) - k)
            targets = ids[k : k + fanout]
            k += fanout
            saliency = Saliency.HIGH if rng.random() < 0.5 else Saliency.LOW
            verb = rng.choice(_VERBS)
            pairs = [(saliency, src, t) for t in targets]
            parts.append(_relation(verb, pairs))
            for s, a, b in pairs:
                fixture.pairs[(s.value, a, b, verb)] += 1
            for j, t in enumerate(targets):
                parts.append(_entity(labels[t], t))
                fixture.mention_counts[t] += 1
                if j < len(targets) - 1:
                    parts.append(",")
            if rng.random() < 0.3:
                parts.append(rng.choice(_FILLERS))
            if rng.random() < 0.25 and k < len(ids):
                parts.append(".")
        # occasional co-reference: re-mention an earlier id with its label
        if rng.random() < 0.4 and len(ids) > 1:
            again = rng.choice(ids[:-1])
            parts.append(".")
            parts.append(_entity(labels[again], again))
            fixture.mention_counts[again] += 1
            extra = rng.choice(_VERBS)
            other = rng.choice([i for i in ids if i != again])
            parts.append(_relation(extra, [(Saliency.LOW, again, other)]))
            fixture.pairs[("L", again, other, extra)] += 1
            parts.append(_entity(labels[other], other))
            fixture.mention_counts[other] += 1
        text = ""
        for part in parts:
            if part in {",", "."}:
                text += part
            elif text:
                text += " " + part
            else:
                text = part
        out_paragraphs.append(text + ".")
    fixture.text = "\n\n".join(out_paragraphs)
    return fixture


def generate_corpus(rng: random.Random, count: int, **kwargs) -> list[Fixture]:
    return [generate_fixture(rng, **kwargs) for _ in range(count)]


# --- planted faults for the detector --------------------------------------


@dataclass
class FaultLedger:
    """Expected detector output after the planted mutations."""

    orphan_ids: set[int] = field(default_factory=set)
    deadend_pairs: Counter = field(default_factory=Counter)  # (sal, src, tgt, missing)
    mutation_count: int = 0

    @classmethod
    def expected(cls, mention_counts: Counter, pairs: Counter, mutations: int):
        ledger = cls(mutation_count=mutations)
        referenced: Counter = Counter()
        for (s, a, b, _label), n in pairs.items():
            if n <= 0:
                continue
            referenced[a] += n
            referenced[b] += n
            missing = tuple(
                sorted({e for e in (a, b) if mention_counts[e] <= 0})
            )
            if missing:
                ledger.deadend_pairs[(s, a, b, missing)] += n
        for entity_id, n in mention_counts.items():
            if n > 0 and referenced[entity_id] == 0:
                ledger.orphan_ids.add(entity_id)
        return ledger


def _mention_occurrences(text: str):
    return [
        e for e in parse_all(text) if isinstance(e, EntityMention)
    ]


def _relation_occurrences(text: str):
    return [e for e in parse_all(text) if isinstance(e, RelationMention)]


def _splice(text: str, raw_span, replacement: str) -> str:
    data = text.encode("utf-8")
    return (data[: raw_span.start] + replacement.encode("utf-8") + data[raw_span.end :]).decode(
        "utf-8"
    )


def plant_faults(
    fixture: Fixture, rng: random.Random, mutations: int
) -> tuple[str, FaultLedger]:
    """Apply ``mutations`` random fault-planting edits; return the mutated
    text and the ledger of exactly-expected detector findings."""
    text = fixture.text
    mention_counts = Counter(fixture.mention_counts)
    pairs = Counter(fixture.pairs)
    next_id = max(mention_counts) + 1
    applied = 0
    for _ in range(mutations):
        choice = rng.choice(
            ["drop_mention", "drop_relation", "add_orphan", "add_deadend"]
        )
        if choice == "drop_mention":
            mentions = _mention_occurrences(text)
            if not mentions:
                continue
            target = rng.choice(mentions)
            text = _splice(text, target.raw_span, target.label)
            mention_counts[target.entity_id] -= 1
        elif choice == "drop_relation":
            relations = _relation_occurrences(text)
            if not relations:
                continue
            target = rng.choice(relations)
            text = _splice(text, target.raw_span, target.label)
            for p in target.pairs:
                pairs[(p.saliency.value, p.source, p.target, target.label)] -= 1
        elif choice == "add_orphan":
            label = f"stray {rng.choice(_NOUNS)} {next_id}"
            text = text.rstrip(".") + f" and {_entity(label, next_id)}."
            mention_counts[next_id] += 1
            next_id += 1
        else:  # add_deadend
            verb = rng.choice(_VERBS)
            sources = [i for i, n in mention_counts.items() if n > 0]
            if not sources:
                continue
            src = rng.choice(sources)
            annotation = _relation(verb, [(Saliency.HIGH, src, next_id)])
            text = text.rstrip(".") + f" {annotation}."
            pairs[("H", src, next_id, verb)] += 1
            next_id += 1
        applied += 1
    return text, FaultLedger.expected(mention_counts, pairs, applied)


# --- mutations scored against a gold reference -----------------------------


@dataclass
class EvalMutation:
    """One gold-vs-predicted corruption with its expected error counts."""

    name: str
    expected: Counter = field(default_factory=Counter)


def mutate_for_eval(
    fixture: Fixture, rng: random.Random, mutations: int
) -> tuple[str, Counter]:
    """Corrupt a copy of ``fixture.text`` (the prediction) while keeping
    the clean text identical to the gold; returns (predicted_text,
    expected per-error-kind Counter).

    Each mutation's expected counts are only valid if mutations do not
    compound on the same annotation, so entity ids and pair endpoints
    touched once are excluded from later picks.
    """
    text = fixture.text
    expected: Counter = Counter()
    next_id = max(fixture.mention_counts) + 1
    touched_ids: set[int] = set()
    # every endpoint pair that exists anywhere, in both orientations,
    # so a mutation never fabricates a duplicate of a real pair
    blocked_pairs: set[tuple[int, int]] = set()
    for s, a, b, _label in fixture.pairs:
        blocked_pairs.add((a, b))
    touched_pairs: set[tuple[int, int]] = set()

    def pair_free(r: RelationMention) -> bool:
        p = r.pairs[0]
        return (
            len(r.pairs) == 1
            and (p.source, p.target) not in touched_pairs
            and p.source != p.target
        )

    for _ in range(mutations):
        choice = rng.choice(
            ["unwrap_entity", "split_entity", "reverse_pair",
             "unwrap_relation", "retarget_pair", "flip_saliency",
             "break_coreference"]
        )
        mentions = _mention_occurrences(text)
        relations = _relation_occurrences(text)
        counts = Counter(m.entity_id for m in mentions)
        if choice == "unwrap_entity":
            options = [
                m for m in mentions
                if counts[m.entity_id] >= 2 and m.entity_id not in touched_ids
            ]
            if not options:
                continue
            target = rng.choice(options)
            text = _splice(text, target.raw_span, target.label)
            touched_ids.add(target.entity_id)
            expected["missing_entity_phrase"] += 1
        elif choice == "split_entity":
            options = [
                m for m in mentions
                if len(m.label.split()) >= 2 and m.entity_id not in touched_ids
            ]
            if not options:
                continue
            target = rng.choice(options)
            words = target.label.split()
            cut = rng.randint(1, len(words) - 1)
            head, tail = " ".join(words[:cut]), " ".join(words[cut:])
            replacement = (
                f"{_entity(head, target.entity_id)} {_entity(tail, target.entity_id)}"
            )
            text = _splice(text, target.raw_span, replacement)
            touched_ids.add(target.entity_id)
            expected["incomplete_entity"] += 1
        elif choice == "reverse_pair":
            options = [
                r for r in relations
                if pair_free(r)
                and (r.pairs[0].target, r.pairs[0].source) not in blocked_pairs
            ]
            if not options:
                continue
            target = rng.choice(options)
            p = target.pairs[0]
            replacement = _relation(target.label, [(p.saliency, p.target, p.source)])
            text = _splice(text, target.raw_span, replacement)
            touched_pairs.update({(p.source, p.target), (p.target, p.source)})
            # the reversed pair consumes the gold pair, so the gold pair
            # is not additionally missing
            expected["reversed_relationship"] += 1
        elif choice == "unwrap_relation":
            options = [
                r for r in relations
                if all((p.source, p.target) not in touched_pairs for p in r.pairs)
            ]
            if not options:
                continue
            target = rng.choice(options)
            text = _splice(text, target.raw_span, target.label)
            for p in target.pairs:
                touched_pairs.add((p.source, p.target))
            expected["missing_relationship"] += len(target.pairs)
        elif choice == "retarget_pair":
            options = [r for r in relations if pair_free(r)]
            mentioned = sorted(counts)
            if not options or len(mentioned) < 3:
                continue
            target = rng.choice(options)
            p = target.pairs[0]
            candidates = [
                i for i in mentioned
                if i not in (p.source, p.target)
                and (p.source, i) not in blocked_pairs
                and (p.source, i) not in touched_pairs
                and (i, p.source) not in blocked_pairs
            ]
            if not candidates:
                continue
            new_target = rng.choice(candidates)
            replacement = _relation(
                target.label, [(p.saliency, p.source, new_target)]
            )
            text = _splice(text, target.raw_span, replacement)
            touched_pairs.update(
                {(p.source, p.target), (p.source, new_target), (new_target, p.source)}
            )
            expected["misattributed_relationship"] += 1
            expected["missing_relationship"] += 1
        elif choice == "flip_saliency":
            options = [r for r in relations if pair_free(r)]
            if not options:
                continue
            target = rng.choice(options)
            p = target.pairs[0]
            flipped = Saliency.LOW if p.saliency is Saliency.HIGH else Saliency.HIGH
            replacement = _relation(target.label, [(flipped, p.source, p.target)])
            text = _splice(text, target.raw_span, replacement)
            touched_pairs.add((p.source, p.target))
            # saliency is ignored by the matcher: no expected error
        else:  # break_coreference
            options = [
                m for m in mentions
                if counts[m.entity_id] >= 2 and m.entity_id not in touched_ids
            ]
            if not options:
                continue
            target = rng.choice(options)
            text = _splice(text, target.raw_span, _entity(target.label, next_id))
            touched_ids.update({target.entity_id, next_id})
            expected["incorrect_coreference"] += 1
            next_id += 1
    # detectable fallout (orphans freed by pair removals, fresh-id mentions)
    # is interaction-dependent, so it is counted once from the final text
    # by plain set arithmetic rather than per mutation
    mentioned = {m.entity_id for m in _mention_occurrences(text)}
    referenced_pairs = [
        p for r in _relation_occurrences(text) for p in r.pairs
    ]
    referenced = {e for p in referenced_pairs for e in (p.source, p.target)}
    orphans = len(mentioned - referenced)
    if orphans:
        expected["orphan_node"] = orphans
    dead = sum(
        1
        for p in referenced_pairs
        if {p.source, p.target} - mentioned
    )
    if dead:
        expected["dead_end_relationship"] = dead
    return text, expected


def unwrap_annotation(text: str, event) -> str:
    """Replace one annotation with its bare label (clean text unchanged)."""
    if not is_mention(event):
        raise ValueError("only mention annotations can be unwrapped")
    return _splice(text, event.raw_span, event.label)


def reannotate(text: str, event, replacement_event) -> str:
    """Replace one annotation with the canonical form of another event."""
    return _splice(text, event.raw_span, render_annotation(replacement_event))
