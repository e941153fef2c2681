"""Session concept graph built from parse events.

Nodes are keyed by entity id; co-referenced mentions accumulate on one
node whose label is its longest mention (ties keep the earliest).  A
relationship pair referencing an id with no mention yet creates a
placeholder node (empty label) that a later mention resolves.

Every mutation emits sequence-numbered GraphDiff records; replaying the
diff log from an empty graph reproduces the graph byte-exactly in
exported form.  Structural operations that rewrite the underlying
annotated text (trim, merge, sentence correction) also return rewrite
records so the text layer stays in lockstep with the diagram.

All spans here are paragraph-local byte ranges: clean spans index the
paragraph's stripped text, raw spans its annotated text.  Use
GraphAssembler to feed stream-global parse events.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable

from .grammar import (
    EntityMention,
    ParagraphBreak,
    ParseEvent,
    RelationMention,
    Saliency,
    Span,
    rebased,
)


class GraphError(Exception):
    pass


class NotFoundError(GraphError):
    pass


class InvalidOperation(GraphError):
    pass


class DiffKind(enum.Enum):
    NODE_ADDED = "node_added"
    MENTION_ADDED = "mention_added"
    PLACEHOLDER_RESOLVED = "placeholder_resolved"
    LABEL_UPGRADED = "label_upgraded"
    EDGE_ADDED = "edge_added"
    NODE_TRIMMED = "node_trimmed"
    EDGES_REMOVED = "edges_removed"
    NODES_MERGED = "nodes_merged"
    COLLAPSE_CHANGED = "collapse_changed"
    VISIBILITY_CHANGED = "visibility_changed"
    MENTIONS_RETRACTED = "mentions_retracted"
    SPANS_SHIFTED = "spans_shifted"


@dataclass(frozen=True)
class GraphDiff:
    seq: int
    kind: DiffKind
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "kind": self.kind.value, "payload": self.payload}

    @classmethod
    def from_json(cls, doc: dict) -> "GraphDiff":
        return cls(doc["seq"], DiffKind(doc["kind"]), doc["payload"])


@dataclass
class Mention:
    paragraph: int
    clean_span: Span
    raw_span: Span
    text: str

    def to_json(self) -> dict:
        return {
            "paragraph": self.paragraph,
            "clean_span": list(self.clean_span),
            "raw_span": list(self.raw_span),
            "text": self.text,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Mention":
        return cls(
            doc["paragraph"], Span(*doc["clean_span"]), Span(*doc["raw_span"]), doc["text"]
        )


@dataclass
class ConceptNode:
    node_id: int
    label: str
    placeholder: bool
    mentions: list[Mention] = field(default_factory=list)
    collapsed: bool = False
    hidden_by: int | None = None

    def to_json(self) -> dict:
        return {
            "id": self.node_id,
            "label": self.label,
            "placeholder": self.placeholder,
            "collapsed": self.collapsed,
            "hidden_by": self.hidden_by,
            "mentions": [m.to_json() for m in self.mentions],
        }


@dataclass
class RelationEdge:
    edge_id: int
    group_id: int  # one inline annotation == one group
    label: str
    saliency: Saliency
    source: int
    target: int
    paragraph: int
    clean_span: Span
    raw_span: Span

    @property
    def key(self) -> tuple:
        return (self.label, self.saliency.value, self.source, self.target)

    def to_json(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "group_id": self.group_id,
            "label": self.label,
            "saliency": self.saliency.value,
            "source": self.source,
            "target": self.target,
            "paragraph": self.paragraph,
            "clean_span": list(self.clean_span),
            "raw_span": list(self.raw_span),
        }


@dataclass(frozen=True)
class Rewrite:
    """Replace the raw-text range of one annotation with new annotated text.

    The clean span locates the mention in the paragraph's stripped text
    (which trim and merge never change); the raw span is where the bytes
    actually get spliced.
    """

    paragraph: int
    clean_span: Span
    raw_span: Span
    replacement: str

    def to_json(self) -> dict:
        return {
            "paragraph": self.paragraph,
            "clean_span": list(self.clean_span),
            "raw_span": list(self.raw_span),
            "replacement": self.replacement,
        }


def apply_rewrites(raw_text: str, rewrites: Iterable[Rewrite]) -> str:
    """Apply rewrites (all for one paragraph) to its annotated text."""
    data = raw_text.encode("utf-8")
    for rewrite in sorted(rewrites, key=lambda r: r.raw_span.start, reverse=True):
        data = (
            data[: rewrite.raw_span.start]
            + rewrite.replacement.encode("utf-8")
            + data[rewrite.raw_span.end :]
        )
    return data.decode("utf-8")


def _label_of(mentions: list[Mention]) -> str:
    """Longest mention text; ties keep the earliest by position."""
    best = ""
    for m in sorted(mentions, key=lambda m: (m.paragraph, m.clean_span.start)):
        if len(m.text) > len(best):
            best = m.text
    return best


def _render_entity(label: str, entity_id: int) -> str:
    return f"[{label} ($N{entity_id})]"


def _render_relation(label: str, pairs: list[tuple[Saliency, int, int]]) -> str:
    body = "; ".join(f"${s.value}, $N{a}, $N{b}" for s, a, b in pairs)
    return f"[{label} ({body})]"


class SessionGraph:
    """Mutable concept graph with an append-only diff sequence."""

    def __init__(self) -> None:
        self.nodes: dict[int, ConceptNode] = {}
        self.edges: dict[int, RelationEdge] = {}
        self.seq = 0
        self.next_edge_id = 1
        self.next_group_id = 1
        self.paragraphs_seen: set[int] = set()

    # -- diff plumbing ---------------------------------------------------

    def _diff(self, kind: DiffKind, payload: dict) -> GraphDiff:
        self.seq += 1
        return GraphDiff(self.seq, kind, payload)

    # -- event application -----------------------------------------------

    def apply_event(self, event: ParseEvent, paragraph: int) -> list[GraphDiff]:
        """Apply one paragraph-local parse event; returns emitted diffs."""
        if isinstance(event, EntityMention):
            return self._apply_entity(event, paragraph)
        if isinstance(event, RelationMention):
            return self._apply_relation(event, paragraph)
        return []

    def _apply_entity(self, event: EntityMention, paragraph: int) -> list[GraphDiff]:
        self.paragraphs_seen.add(paragraph)
        mention = Mention(paragraph, event.clean_span, event.raw_span, event.label)
        node = self.nodes.get(event.entity_id)
        if node is None:
            self.nodes[event.entity_id] = ConceptNode(
                event.entity_id, event.label, placeholder=False, mentions=[mention]
            )
            return [
                self._diff(
                    DiffKind.NODE_ADDED,
                    {
                        "id": event.entity_id,
                        "label": event.label,
                        "placeholder": False,
                        "paragraph": paragraph,
                        "mention": mention.to_json(),
                    },
                )
            ]
        if node.placeholder:
            node.placeholder = False
            node.label = event.label
            node.mentions.append(mention)
            return [
                self._diff(
                    DiffKind.PLACEHOLDER_RESOLVED,
                    {
                        "id": event.entity_id,
                        "label": event.label,
                        "mention": mention.to_json(),
                    },
                )
            ]
        node.mentions.append(mention)
        diffs = [
            self._diff(
                DiffKind.MENTION_ADDED,
                {"id": event.entity_id, "mention": mention.to_json()},
            )
        ]
        if len(event.label) > len(node.label):
            node.label = event.label
            diffs.append(
                self._diff(
                    DiffKind.LABEL_UPGRADED,
                    {"id": event.entity_id, "label": event.label},
                )
            )
        return diffs

    def _apply_relation(self, event: RelationMention, paragraph: int) -> list[GraphDiff]:
        self.paragraphs_seen.add(paragraph)
        diffs = []
        group_id = self.next_group_id
        self.next_group_id += 1
        for pair in event.pairs:
            for endpoint in (pair.source, pair.target):
                if endpoint not in self.nodes:
                    self.nodes[endpoint] = ConceptNode(
                        endpoint, "", placeholder=True
                    )
                    diffs.append(
                        self._diff(
                            DiffKind.NODE_ADDED,
                            {
                                "id": endpoint,
                                "label": "",
                                "placeholder": True,
                                "paragraph": paragraph,
                                "mention": None,
                            },
                        )
                    )
            edge = RelationEdge(
                edge_id=self.next_edge_id,
                group_id=group_id,
                label=event.label,
                saliency=pair.saliency,
                source=pair.source,
                target=pair.target,
                paragraph=paragraph,
                clean_span=event.clean_span,
                raw_span=event.raw_span,
            )
            self.next_edge_id += 1
            self.edges[edge.edge_id] = edge
            diffs.append(self._diff(DiffKind.EDGE_ADDED, edge.to_json()))
        return diffs

    # -- derived state ----------------------------------------------------

    def node_paragraphs(self, node_id: int) -> set[int]:
        node = self.nodes[node_id]
        out = {m.paragraph for m in node.mentions}
        for edge in self.edges.values():
            if node_id in (edge.source, edge.target):
                out.add(edge.paragraph)
        return out

    def membership(self) -> dict[int, dict]:
        """Per-paragraph node/edge id sets."""
        out: dict[int, dict] = {
            p: {"nodes": set(), "edges": set()} for p in sorted(self.paragraphs_seen)
        }
        for edge in self.edges.values():
            slot = out.setdefault(edge.paragraph, {"nodes": set(), "edges": set()})
            slot["edges"].add(edge.edge_id)
            slot["nodes"].update((edge.source, edge.target))
        for node in self.nodes.values():
            for m in node.mentions:
                slot = out.setdefault(m.paragraph, {"nodes": set(), "edges": set()})
                slot["nodes"].add(node.node_id)
        return out

    def placeholder_ids(self) -> set[int]:
        return {n.node_id for n in self.nodes.values() if n.placeholder}

    def edges_of(self, node_id: int) -> list[RelationEdge]:
        return [
            e for e in self.edges.values() if node_id in (e.source, e.target)
        ]

    # -- views -------------------------------------------------------------

    def visible_subgraph(
        self,
        saliency: str = "all",
        view: str = "merged",
        paragraphs: Iterable[int] | None = None,
    ) -> dict:
        """Snapshot of the currently visible diagram.

        ``saliency``: "all" or "high" (hide low edges, and hide nodes whose
        every in-scope edge is hidden).  ``view``: "split" (one paragraph)
        or "merged" (union over shown paragraphs, nodes unified by id).
        """
        if saliency not in {"all", "high"}:
            raise ValueError(f"unknown saliency filter {saliency!r}")
        known = self.paragraphs_seen
        if view == "split":
            if paragraphs is None:
                raise ValueError("split view needs a paragraph index")
            shown = set(paragraphs) if not isinstance(paragraphs, int) else {paragraphs}
            if len(shown) != 1:
                raise ValueError("split view shows exactly one paragraph")
        elif view == "merged":
            if paragraphs is not None:
                shown = set(paragraphs)
                if not shown:
                    raise ValueError("merged view needs a non-empty paragraph set")
            else:
                shown = set(known)  # everything; empty only for an empty graph
        else:
            raise ValueError(f"unknown view {view!r}")
        unknown = shown - known
        if unknown:
            raise NotFoundError(f"unknown paragraph index {sorted(unknown)}")

        member = self.membership()
        node_ids: set[int] = set()
        edge_ids: set[int] = set()
        for p in shown:
            node_ids |= member.get(p, {}).get("nodes", set())
            edge_ids |= member.get(p, {}).get("edges", set())
        node_ids = {i for i in node_ids if self.nodes[i].hidden_by is None}

        def edge_visible(edge: RelationEdge) -> bool:
            if edge.source == edge.target:
                return False  # self-relations are stored but never rendered
            if edge.source not in node_ids or edge.target not in node_ids:
                return False
            if saliency == "high" and edge.saliency is Saliency.LOW:
                return False
            return True

        visible_edges = [
            self.edges[i] for i in sorted(edge_ids) if edge_visible(self.edges[i])
        ]
        if saliency == "high":
            scoped_degree = {
                i: 0 for i in node_ids
            }
            for i in sorted(edge_ids):
                edge = self.edges[i]
                if edge.source == edge.target:
                    continue
                for endpoint in (edge.source, edge.target):
                    if endpoint in scoped_degree:
                        scoped_degree[endpoint] += 1
            visible_degree = {i: 0 for i in node_ids}
            for edge in visible_edges:
                visible_degree[edge.source] += 1
                visible_degree[edge.target] += 1
            node_ids = {
                i
                for i in node_ids
                if scoped_degree[i] == 0 or visible_degree[i] > 0
            }
            visible_edges = [e for e in visible_edges if edge_visible(e)]
        return {
            "view": view,
            "saliency": saliency,
            "paragraphs": sorted(shown),
            "nodes": [self.nodes[i].to_json() for i in sorted(node_ids)],
            "edges": [e.to_json() for e in visible_edges],
        }

    # -- collapse / expand --------------------------------------------------

    def collapse(self, node_id: int) -> list[GraphDiff]:
        node = self.nodes.get(node_id)
        if node is None:
            raise NotFoundError(f"no node {node_id}")
        if node.placeholder:
            raise InvalidOperation("cannot collapse a placeholder node")
        if node.hidden_by is not None:
            raise InvalidOperation("cannot collapse a hidden node")
        if node.collapsed:
            return []
        visible_edges = [
            e
            for e in self.edges.values()
            if self.nodes[e.source].hidden_by is None
            and self.nodes[e.target].hidden_by is None
            and e.source != e.target
        ]
        neighbors = set()
        for e in visible_edges:
            if e.source == node_id:
                neighbors.add(e.target)
            elif e.target == node_id:
                neighbors.add(e.source)
        leaves = []
        for n in sorted(neighbors):
            incident = [e for e in visible_edges if n in (e.source, e.target)]
            if incident and all(node_id in (e.source, e.target) for e in incident):
                leaves.append(n)
        node.collapsed = True
        diffs = [
            self._diff(
                DiffKind.COLLAPSE_CHANGED, {"id": node_id, "collapsed": True}
            )
        ]
        if leaves:
            spans = []
            for n in leaves:
                self.nodes[n].hidden_by = node_id
                for m in self.nodes[n].mentions:
                    spans.append({"paragraph": m.paragraph, "clean_span": list(m.clean_span)})
            seen_groups = set()
            for e in visible_edges:
                if (e.source in leaves or e.target in leaves) and e.group_id not in seen_groups:
                    seen_groups.add(e.group_id)
                    spans.append(
                        {"paragraph": e.paragraph, "clean_span": list(e.clean_span)}
                    )
            diffs.append(
                self._diff(
                    DiffKind.VISIBILITY_CHANGED,
                    {"by": node_id, "hidden": leaves, "greyed_spans": spans},
                )
            )
        return diffs

    def expand(self, node_id: int) -> list[GraphDiff]:
        node = self.nodes.get(node_id)
        if node is None:
            raise NotFoundError(f"no node {node_id}")
        if node.placeholder:
            raise InvalidOperation("cannot expand a placeholder node")
        if not node.collapsed:
            return []
        restored = sorted(
            n.node_id for n in self.nodes.values() if n.hidden_by == node_id
        )
        for n in restored:
            self.nodes[n].hidden_by = None
        node.collapsed = False
        diffs = [
            self._diff(
                DiffKind.COLLAPSE_CHANGED, {"id": node_id, "collapsed": False}
            )
        ]
        if restored:
            diffs.append(
                self._diff(
                    DiffKind.VISIBILITY_CHANGED,
                    {"by": node_id, "shown": restored},
                )
            )
        return diffs

    # -- trim ---------------------------------------------------------------

    def trim(self, node_id: int) -> tuple[list[GraphDiff], list[Rewrite]]:
        if node_id not in self.nodes:
            raise NotFoundError(f"no node {node_id}")
        removed_edges, rewrites = self._trim_core(node_id)
        diffs = [
            self._diff(
                DiffKind.NODE_TRIMMED,
                {
                    "id": node_id,
                    "removed_edges": removed_edges,
                    "rewrites": [r.to_json() for r in rewrites],
                },
            )
        ]
        return diffs, rewrites

    def _trim_core(self, node_id: int) -> tuple[list[int], list[Rewrite]]:
        node = self.nodes[node_id]
        incident = sorted(
            e.edge_id for e in self.edges.values() if node_id in (e.source, e.target)
        )
        affected_groups = {self.edges[i].group_id for i in incident}
        rewrites: list[Rewrite] = []
        edits: dict[int, list[tuple[Span, int]]] = {}

        for m in node.mentions:
            rewrites.append(Rewrite(m.paragraph, m.clean_span, m.raw_span, m.text))
            edits.setdefault(m.paragraph, []).append(
                (m.raw_span, len(m.text.encode("utf-8")))
            )
        for group_id in sorted(affected_groups):
            group_edges = [
                e for e in self.edges.values() if e.group_id == group_id
            ]
            group_edges.sort(key=lambda e: e.edge_id)
            origin = group_edges[0]
            survivors = [
                e for e in group_edges if node_id not in (e.source, e.target)
            ]
            if survivors:
                replacement = _render_relation(
                    origin.label,
                    [(e.saliency, e.source, e.target) for e in survivors],
                )
            else:
                replacement = origin.label
            rewrites.append(
                Rewrite(origin.paragraph, origin.clean_span, origin.raw_span, replacement)
            )
            edits.setdefault(origin.paragraph, []).append(
                (origin.raw_span, len(replacement.encode("utf-8")))
            )
        for edge_id in incident:
            del self.edges[edge_id]
        del self.nodes[node_id]
        self._remap_raw_spans(edits)
        rewrites.sort(key=lambda r: (r.paragraph, r.raw_span.start))
        return incident, rewrites

    # -- merge ----------------------------------------------------------------

    def merge_nodes(
        self, from_id: int, into_id: int
    ) -> tuple[list[GraphDiff], list[Rewrite]]:
        if from_id == into_id:
            raise InvalidOperation("cannot merge a node into itself")
        for node_id in (from_id, into_id):
            if node_id not in self.nodes:
                raise NotFoundError(f"no node {node_id}")
        removed, rewrites, label = self._merge_core(from_id, into_id)
        diffs = [
            self._diff(
                DiffKind.NODES_MERGED,
                {
                    "from": from_id,
                    "into": into_id,
                    "label": label,
                    "removed_edges": removed,
                    "rewrites": [r.to_json() for r in rewrites],
                },
            )
        ]
        return diffs, rewrites

    def _merge_core(self, from_id: int, into_id: int):
        src = self.nodes[from_id]
        dst = self.nodes[into_id]
        rewrites: list[Rewrite] = []
        edits: dict[int, list[tuple[Span, int]]] = {}

        for m in src.mentions:
            replacement = _render_entity(m.text, into_id)
            rewrites.append(Rewrite(m.paragraph, m.clean_span, m.raw_span, replacement))
            edits.setdefault(m.paragraph, []).append(
                (m.raw_span, len(replacement.encode("utf-8")))
            )

        # remember each affected annotation's origin before any edge of it
        # can be dropped (needed to unwrap fully-emptied annotations)
        group_origins: dict[int, RelationEdge] = {}
        for edge in sorted(self.edges.values(), key=lambda e: e.edge_id):
            if from_id in (edge.source, edge.target):
                group_origins.setdefault(edge.group_id, edge)

        # endpoint rewrite with self-loop and duplicate drops, in edge order
        existing_keys = {
            e.key for e in self.edges.values() if from_id not in (e.source, e.target)
        }
        removed: list[int] = []
        for edge in sorted(self.edges.values(), key=lambda e: e.edge_id):
            if from_id not in (edge.source, edge.target):
                continue
            new_source = into_id if edge.source == from_id else edge.source
            new_target = into_id if edge.target == from_id else edge.target
            if new_source == new_target:
                removed.append(edge.edge_id)
                del self.edges[edge.edge_id]
                continue
            edge.source, edge.target = new_source, new_target
            if edge.key in existing_keys:
                removed.append(edge.edge_id)
                del self.edges[edge.edge_id]
                continue
            existing_keys.add(edge.key)

        for group_id in sorted(group_origins):
            origin = group_origins[group_id]
            group_edges = sorted(
                (e for e in self.edges.values() if e.group_id == group_id),
                key=lambda e: e.edge_id,
            )
            if group_edges:
                replacement = _render_relation(
                    origin.label,
                    [(e.saliency, e.source, e.target) for e in group_edges],
                )
            else:
                # every pair of the annotation dropped: unwrap to its label
                replacement = origin.label
            rewrites.append(
                Rewrite(origin.paragraph, origin.clean_span, origin.raw_span, replacement)
            )
            edits.setdefault(origin.paragraph, []).append(
                (origin.raw_span, len(replacement.encode("utf-8")))
            )

        merged_mentions = sorted(
            dst.mentions + src.mentions,
            key=lambda m: (m.paragraph, m.clean_span.start),
        )
        dst.mentions = merged_mentions
        if merged_mentions:
            dst.placeholder = False
            dst.label = _label_of(merged_mentions)
        del self.nodes[from_id]
        self._remap_raw_spans(edits)
        rewrites.sort(key=lambda r: (r.paragraph, r.raw_span.start))
        return removed, rewrites, dst.label

    # -- retraction and span shifting (used by sentence correction) ----------

    def remove_edges(self, edge_ids: list[int]) -> list[GraphDiff]:
        missing = [i for i in edge_ids if i not in self.edges]
        if missing:
            raise NotFoundError(f"no edges {missing}")
        for i in edge_ids:
            del self.edges[i]
        return [self._diff(DiffKind.EDGES_REMOVED, {"edge_ids": list(edge_ids)})]

    def retract_mentions(
        self, node_id: int, clean_spans: list[Span], paragraph: int
    ) -> list[GraphDiff]:
        """Remove the node's mentions at the given paragraph-local spans;
        prune the node if nothing else references it, demote it to a
        placeholder if edges still do."""
        if node_id not in self.nodes:
            raise NotFoundError(f"no node {node_id}")
        changed, removed_node = self._retract_core(node_id, clean_spans, paragraph)
        if not changed:
            return []
        still = self.nodes.get(node_id)
        return [
            self._diff(
                DiffKind.MENTIONS_RETRACTED,
                {
                    "id": node_id,
                    "paragraph": paragraph,
                    "clean_spans": [list(s) for s in clean_spans],
                    "removed_node": removed_node,
                    "placeholder": still.placeholder if still else False,
                    "label": still.label if still else "",
                },
            )
        ]

    def _retract_core(
        self, node_id: int, clean_spans: list[Span], paragraph: int
    ) -> tuple[bool, bool]:
        node = self.nodes[node_id]
        doomed = {(paragraph, tuple(s)) for s in clean_spans}
        kept = [
            m
            for m in node.mentions
            if (m.paragraph, tuple(m.clean_span)) not in doomed
        ]
        if len(kept) == len(node.mentions):
            return False, False
        node.mentions = kept
        if not kept:
            if self.edges_of(node_id):
                node.placeholder = True
                node.label = ""
                return True, False
            del self.nodes[node_id]
            return True, True
        node.label = _label_of(kept)
        return True, False

    def shift_spans(
        self,
        paragraph: int,
        clean_from: int,
        clean_delta: int,
        raw_from: int,
        raw_delta: int,
    ) -> list[GraphDiff]:
        """Shift stored spans at/after the given offsets (text was edited
        earlier in the paragraph)."""
        self._shift_core(paragraph, clean_from, clean_delta, raw_from, raw_delta)
        return [
            self._diff(
                DiffKind.SPANS_SHIFTED,
                {
                    "paragraph": paragraph,
                    "clean_from": clean_from,
                    "clean_delta": clean_delta,
                    "raw_from": raw_from,
                    "raw_delta": raw_delta,
                },
            )
        ]

    def _shift_core(self, paragraph, clean_from, clean_delta, raw_from, raw_delta):
        def shift_clean(span: Span) -> Span:
            return span.shifted(clean_delta) if span.start >= clean_from else span

        def shift_raw(span: Span) -> Span:
            return span.shifted(raw_delta) if span.start >= raw_from else span

        for node in self.nodes.values():
            for m in node.mentions:
                if m.paragraph == paragraph:
                    m.clean_span = shift_clean(m.clean_span)
                    m.raw_span = shift_raw(m.raw_span)
        for edge in self.edges.values():
            if edge.paragraph == paragraph:
                edge.clean_span = shift_clean(edge.clean_span)
                edge.raw_span = shift_raw(edge.raw_span)

    def _remap_raw_spans(self, edits: dict[int, list[tuple[Span, int]]]) -> None:
        """After splicing rewrites into the raw text, move every stored raw
        span in the affected paragraphs to its new position."""
        for paragraph, items in edits.items():
            items = sorted(items, key=lambda it: it[0].start)

            def remap(span: Span) -> Span:
                delta = 0
                for old, new_len in items:
                    if old == span:
                        return Span(span.start + delta, span.start + delta + new_len)
                    if old.end <= span.start:
                        delta += new_len - (old.end - old.start)
                    elif old.start >= span.end:
                        break
                return span.shifted(delta)

            for node in self.nodes.values():
                for m in node.mentions:
                    if m.paragraph == paragraph:
                        m.raw_span = remap(m.raw_span)
            for edge in self.edges.values():
                if edge.paragraph == paragraph:
                    edge.raw_span = remap(edge.raw_span)

    # -- export / import -------------------------------------------------------

    def to_json(self) -> dict:
        member = self.membership()
        return {
            "format": "annograph-graph",
            "version": 1,
            "seq": self.seq,
            "next_edge_id": self.next_edge_id,
            "next_group_id": self.next_group_id,
            "paragraphs_seen": sorted(self.paragraphs_seen),
            "nodes": [self.nodes[i].to_json() for i in sorted(self.nodes)],
            "edges": [self.edges[i].to_json() for i in sorted(self.edges)],
            "membership": {
                str(p): {
                    "nodes": sorted(slot["nodes"]),
                    "edges": sorted(slot["edges"]),
                }
                for p, slot in member.items()
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SessionGraph":
        if doc.get("format") != "annograph-graph" or doc.get("version") != 1:
            raise ValueError("not a version-1 graph document")
        graph = cls()
        graph.seq = doc["seq"]
        graph.next_edge_id = doc["next_edge_id"]
        graph.next_group_id = doc["next_group_id"]
        graph.paragraphs_seen = set(doc["paragraphs_seen"])
        for n in doc["nodes"]:
            graph.nodes[n["id"]] = ConceptNode(
                node_id=n["id"],
                label=n["label"],
                placeholder=n["placeholder"],
                collapsed=n["collapsed"],
                hidden_by=n["hidden_by"],
                mentions=[Mention.from_json(m) for m in n["mentions"]],
            )
        for e in doc["edges"]:
            graph.edges[e["edge_id"]] = RelationEdge(
                edge_id=e["edge_id"],
                group_id=e["group_id"],
                label=e["label"],
                saliency=Saliency(e["saliency"]),
                source=e["source"],
                target=e["target"],
                paragraph=e["paragraph"],
                clean_span=Span(*e["clean_span"]),
                raw_span=Span(*e["raw_span"]),
            )
        return graph

    def export(self, fmt: str = "json") -> str:
        if fmt == "json":
            return json.dumps(self.to_json(), indent=2, sort_keys=True)
        if fmt == "dot":
            return self.to_dot()
        raise ValueError(f"unknown export format {fmt!r}")

    def to_dot(self) -> str:
        """Split-view DOT: one cluster per paragraph; a node appearing in
        several paragraphs is duplicated per cluster."""

        def quote(s: str) -> str:
            return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

        lines = ["digraph session {", "  rankdir=LR;"]
        member = self.membership()
        for p in sorted(member):
            slot = member[p]
            lines.append(f"  subgraph cluster_p{p} {{")
            lines.append(f"    label={quote(f'paragraph {p}')};")
            for i in sorted(slot["nodes"]):
                node = self.nodes[i]
                label = node.label if not node.placeholder else "..."
                shape = ' shape=box style=dashed' if node.placeholder else ""
                lines.append(f"    p{p}_n{i} [label={quote(label)}{shape}];")
            for i in sorted(slot["edges"]):
                edge = self.edges[i]
                if edge.source == edge.target:
                    continue
                style = " style=dashed" if edge.saliency is Saliency.LOW else ""
                lines.append(
                    f"    p{p}_n{edge.source} -> p{p}_n{edge.target} "
                    f"[label={quote(edge.label)}{style}];"
                )
            lines.append("  }")
        lines.append("}")
        return "\n".join(lines) + "\n"

    # -- comparison helpers ------------------------------------------------------

    def structure_key(self) -> tuple:
        """Identity-free canonical structure for isomorphism checks."""
        nodes = tuple(
            sorted(
                (
                    n.node_id,
                    n.label,
                    n.placeholder,
                    tuple(
                        sorted(
                            (m.paragraph, tuple(m.clean_span), m.text)
                            for m in n.mentions
                        )
                    ),
                )
                for n in self.nodes.values()
            )
        )
        edges = tuple(
            sorted(
                (
                    e.label,
                    e.saliency.value,
                    e.source,
                    e.target,
                    e.paragraph,
                    tuple(e.clean_span),
                )
                for e in self.edges.values()
            )
        )
        groups: dict[int, list] = {}
        for e in self.edges.values():
            groups.setdefault(e.group_id, []).append(e)
        group_key = tuple(
            sorted(
                (
                    g[0].label,
                    g[0].paragraph,
                    tuple(g[0].clean_span),
                    tuple(
                        sorted(
                            (e.saliency.value, e.source, e.target) for e in g
                        )
                    ),
                )
                for g in groups.values()
            )
        )
        return (nodes, edges, group_key)


# --- replay -------------------------------------------------------------------


def replay_diffs(diffs: Iterable[GraphDiff]) -> SessionGraph:
    """Rebuild a graph from its diff log; diff seq must be contiguous."""
    graph = SessionGraph()
    for diff in diffs:
        if diff.seq != graph.seq + 1:
            raise ValueError(
                f"diff seq {diff.seq} does not follow {graph.seq}"
            )
        _apply_replay(graph, diff)
        graph.seq = diff.seq
    return graph


def _apply_replay(graph: SessionGraph, diff: GraphDiff) -> None:
    p = diff.payload
    kind = diff.kind
    if kind is DiffKind.NODE_ADDED:
        mention = Mention.from_json(p["mention"]) if p.get("mention") else None
        node = ConceptNode(
            p["id"], p["label"], p["placeholder"],
            mentions=[mention] if mention else [],
        )
        graph.nodes[p["id"]] = node
        graph.paragraphs_seen.add(p["paragraph"])
    elif kind is DiffKind.MENTION_ADDED:
        m = Mention.from_json(p["mention"])
        graph.nodes[p["id"]].mentions.append(m)
        graph.paragraphs_seen.add(m.paragraph)
    elif kind is DiffKind.PLACEHOLDER_RESOLVED:
        node = graph.nodes[p["id"]]
        node.placeholder = False
        node.label = p["label"]
        m = Mention.from_json(p["mention"])
        node.mentions.append(m)
        graph.paragraphs_seen.add(m.paragraph)
    elif kind is DiffKind.LABEL_UPGRADED:
        graph.nodes[p["id"]].label = p["label"]
    elif kind is DiffKind.EDGE_ADDED:
        edge = RelationEdge(
            edge_id=p["edge_id"],
            group_id=p["group_id"],
            label=p["label"],
            saliency=Saliency(p["saliency"]),
            source=p["source"],
            target=p["target"],
            paragraph=p["paragraph"],
            clean_span=Span(*p["clean_span"]),
            raw_span=Span(*p["raw_span"]),
        )
        graph.edges[edge.edge_id] = edge
        graph.next_edge_id = max(graph.next_edge_id, edge.edge_id + 1)
        graph.next_group_id = max(graph.next_group_id, edge.group_id + 1)
        graph.paragraphs_seen.add(edge.paragraph)
    elif kind is DiffKind.NODE_TRIMMED:
        graph._trim_core(p["id"])
    elif kind is DiffKind.NODES_MERGED:
        graph._merge_core(p["from"], p["into"])
    elif kind is DiffKind.COLLAPSE_CHANGED:
        graph.nodes[p["id"]].collapsed = p["collapsed"]
    elif kind is DiffKind.VISIBILITY_CHANGED:
        for i in p.get("hidden", []):
            graph.nodes[i].hidden_by = p["by"]
        for i in p.get("shown", []):
            graph.nodes[i].hidden_by = None
    elif kind is DiffKind.EDGES_REMOVED:
        for i in p["edge_ids"]:
            del graph.edges[i]
    elif kind is DiffKind.MENTIONS_RETRACTED:
        spans = [Span(*s) for s in p["clean_spans"]]
        graph._retract_core(p["id"], spans, p["paragraph"])
    elif kind is DiffKind.SPANS_SHIFTED:
        graph._shift_core(
            p["paragraph"],
            p["clean_from"],
            p["clean_delta"],
            p["raw_from"],
            p["raw_delta"],
        )
    else:  # pragma: no cover
        raise ValueError(f"unknown diff kind {kind}")


# --- assembling graphs from event streams ----------------------------------


class GraphAssembler:
    """Feeds stream-global parse events into a graph, tracking paragraph
    indices and rebasing spans to paragraph-local coordinates."""

    def __init__(self, graph: SessionGraph | None = None) -> None:
        self.graph = graph if graph is not None else SessionGraph()
        self.paragraph = 0
        self.raw_base = 0
        self.clean_base = 0

    def apply(self, event: ParseEvent) -> list[GraphDiff]:
        if isinstance(event, ParagraphBreak):
            self.paragraph = event.index
            self.raw_base = event.raw_span.end
            self.clean_base = event.clean_span.end
            return []
        local = rebased(event, -self.raw_base, -self.clean_base)
        return self.graph.apply_event(local, self.paragraph)


def build_graph(events: Iterable[ParseEvent]) -> SessionGraph:
    assembler = GraphAssembler()
    for event in events:
        assembler.apply(event)
    return assembler.graph
