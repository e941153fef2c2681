/** Pure scene construction: (session model, view state) -> what to draw.
 *
 * Mirrors the server's visibility rules so that a scene's node and edge
 * sets always agree with a graph snapshot taken at the same point:
 * collapse-hidden nodes are out; self-loop pairs are never rendered; the
 * high-saliency filter hides low edges and any node whose every in-scope
 * edge is hidden (zero-edge nodes stay visible).
 */

import { layeredLayout, PlacedEdge, PlacedNode } from "./layout.js";
import { SessionModel } from "./model.js";
import { EdgeInfo, Hover, NodeInfo, Span, ViewState } from "./types.js";

export interface StyledRun {
  start: number;
  end: number;
  text: string;
  entityId: number | null;
  edgeGroup: number | null;
  greyed: boolean;
  highlighted: boolean;
}

export interface TextBlock {
  paragraph: number;
  status: string;
  mode: "original" | "outline" | "summary";
  runs: StyledRun[]; // original mode
  rawText: string;
  outline: string | null;
  summary: string | null;
}

export interface Diagram {
  key: string; // "p0", "p1", ... or "merged"
  paragraphs: number[];
  nodes: PlacedNode[];
  edges: PlacedEdge[];
}

export interface Highlights {
  nodeIds: Set<number>;
  edgeIds: Set<number>;
  spans: Array<{ paragraph: number; span: Span }>;
}

export interface Scene {
  textBlocks: TextBlock[];
  diagrams: Diagram[];
  highlights: Highlights;
}

export function buildScene(model: SessionModel, view: ViewState): Scene {
  const allParagraphs = [...model.paragraphs.keys()].sort((a, b) => a - b);
  const shown = view.shownParagraphs ?? allParagraphs;
  const highlights = computeHighlights(model, view);
  const diagrams: Diagram[] = [];
  if (view.view === "merged") {
    diagrams.push(buildDiagram(model, view, highlights, shown, "merged"));
  } else {
    for (const p of shown) {
      diagrams.push(buildDiagram(model, view, highlights, [p], `p${p}`));
    }
  }
  const textBlocks = shown.map((p) => buildTextBlock(model, view, highlights, p));
  return { textBlocks, diagrams, highlights };
}

// -- visibility (mirror of the server's view rules) -------------------------

function memberNodes(model: SessionModel, paragraphs: number[]): Set<number> {
  const shown = new Set(paragraphs);
  const ids = new Set<number>();
  for (const node of model.nodes.values()) {
    if (node.mentions.some((m) => shown.has(m.paragraph))) ids.add(node.id);
  }
  for (const edge of model.edges.values()) {
    if (shown.has(edge.paragraph)) {
      ids.add(edge.source);
      ids.add(edge.target);
    }
  }
  return ids;
}

export function visibleElements(
  model: SessionModel,
  view: ViewState,
  paragraphs: number[]
): { nodes: NodeInfo[]; edges: EdgeInfo[] } {
  const shown = new Set(paragraphs);
  let ids = memberNodes(model, paragraphs);
  ids = new Set(
    [...ids].filter((id) => model.nodes.get(id)?.hiddenBy == null)
  );
  const inScope = [...model.edges.values()]
    .filter((e) => shown.has(e.paragraph))
    .sort((a, b) => a.edgeId - b.edgeId);
  const renderable = (e: EdgeInfo) =>
    e.source !== e.target && ids.has(e.source) && ids.has(e.target);
  let edges = inScope.filter(
    (e) => renderable(e) && !(view.saliency === "high" && e.saliency === "L")
  );
  if (view.saliency === "high") {
    const scopedDegree = new Map<number, number>();
    for (const id of ids) scopedDegree.set(id, 0);
    for (const e of inScope) {
      if (e.source === e.target) continue;
      for (const end of [e.source, e.target]) {
        if (scopedDegree.has(end)) scopedDegree.set(end, scopedDegree.get(end)! + 1);
      }
    }
    const visibleDegree = new Map<number, number>();
    for (const e of edges) {
      visibleDegree.set(e.source, (visibleDegree.get(e.source) ?? 0) + 1);
      visibleDegree.set(e.target, (visibleDegree.get(e.target) ?? 0) + 1);
    }
    ids = new Set(
      [...ids].filter(
        (id) => scopedDegree.get(id) === 0 || (visibleDegree.get(id) ?? 0) > 0
      )
    );
    edges = edges.filter(renderable);
  }
  const nodes = [...ids]
    .sort((a, b) => a - b)
    .map((id) => model.nodes.get(id)!)
    .filter(Boolean);
  return { nodes, edges };
}

function buildDiagram(
  model: SessionModel,
  view: ViewState,
  highlights: Highlights,
  paragraphs: number[],
  key: string
): Diagram {
  const { nodes, edges } = visibleElements(model, view, paragraphs);
  const positions = layeredLayout(nodes, edges);
  const placed: PlacedNode[] = nodes.map((node) => {
    const pos = positions.get(node.id)!;
    return {
      id: node.id,
      label: node.placeholder ? "…" : node.label,
      placeholder: node.placeholder,
      collapsed: node.collapsed,
      ...pos,
      highlighted: highlights.nodeIds.has(node.id),
      selected: view.selection === node.id,
    };
  });
  const placedEdges: PlacedEdge[] = edges.map((edge) => ({
    edgeId: edge.edgeId,
    label: edge.label,
    saliency: edge.saliency,
    source: edge.source,
    target: edge.target,
    highlighted: highlights.edgeIds.has(edge.edgeId),
  }));
  return { key, paragraphs, nodes: placed, edges: placedEdges };
}

// -- bidirectional highlighting ---------------------------------------------

function sentenceSpanAt(text: string, byteOffset: number): Span {
  // byte-aligned sentence estimate: split at ., !, ? followed by space
  const encoder = new TextEncoder();
  const bytes = encoder.encode(text);
  let start = 0;
  for (let i = 0; i < bytes.length - 1; i++) {
    const b = bytes[i];
    const isStop = b === 0x2e || b === 0x21 || b === 0x3f;
    if (isStop && (bytes[i + 1] === 0x20 || bytes[i + 1] === 0x0a)) {
      if (i + 1 <= byteOffset) start = i + 2;
      else return [start, i + 1];
    }
  }
  return [start, bytes.length];
}

export function computeHighlights(model: SessionModel, view: ViewState): Highlights {
  const highlights: Highlights = {
    nodeIds: new Set(),
    edgeIds: new Set(),
    spans: [],
  };
  const addNode = (id: number) => {
    const node = model.nodes.get(id);
    if (!node) return;
    highlights.nodeIds.add(id);
    for (const mention of node.mentions) {
      highlights.spans.push({ paragraph: mention.paragraph, span: mention.clean_span });
      highlights.spans.push({
        paragraph: mention.paragraph,
        span: sentenceSpanAt(model.cleanText(mention.paragraph), mention.clean_span[0]),
      });
    }
  };
  const addEdge = (edgeId: number) => {
    const edge = model.edges.get(edgeId);
    if (!edge) return;
    highlights.edgeIds.add(edgeId);
    highlights.spans.push({ paragraph: edge.paragraph, span: edge.cleanSpan });
  };

  if (view.selection != null) {
    addNode(view.selection);
    for (const edge of model.edges.values()) {
      if (edge.source === view.selection || edge.target === view.selection) {
        addEdge(edge.edgeId);
      }
    }
  }
  const hover = view.hover;
  if (!hover) return highlights;
  if (hover.kind === "node") {
    addNode(hover.id);
  } else if (hover.kind === "edge") {
    addEdge(hover.edgeId);
  } else {
    // text hover: a mention token highlights its node and all
    // co-references; a relationship token highlights its edges
    for (const node of model.nodes.values()) {
      for (const m of node.mentions) {
        if (
          m.paragraph === hover.paragraph &&
          m.clean_span[0] <= hover.offset &&
          hover.offset < m.clean_span[1]
        ) {
          addNode(node.id);
        }
      }
    }
    for (const edge of model.edges.values()) {
      if (
        edge.paragraph === hover.paragraph &&
        edge.cleanSpan[0] <= hover.offset &&
        hover.offset < edge.cleanSpan[1]
      ) {
        addEdge(edge.edgeId);
      }
    }
  }
  return highlights;
}

// -- text blocks --------------------------------------------------------------

export function buildTextBlock(
  model: SessionModel,
  view: ViewState,
  highlights: Highlights,
  paragraph: number
): TextBlock {
  const record = model.paragraph(paragraph);
  const mode = view.textMode[paragraph] ?? "original";
  const total = record.cleanBytes.length;

  // cut points from mention spans, edge spans, greyed spans, highlights
  const cuts = new Set<number>([0, total]);
  const spansWith = <T>(items: Array<{ span: Span; value: T }>) => {
    for (const item of items) {
      cuts.add(Math.max(0, Math.min(total, item.span[0])));
      cuts.add(Math.max(0, Math.min(total, item.span[1])));
    }
  };
  const mentionSpans: Array<{ span: Span; value: number }> = [];
  for (const node of model.nodes.values()) {
    for (const m of node.mentions) {
      if (m.paragraph === paragraph) mentionSpans.push({ span: m.clean_span, value: node.id });
    }
  }
  const edgeSpans: Array<{ span: Span; value: number }> = [];
  const seenGroups = new Set<number>();
  for (const edge of model.edges.values()) {
    if (edge.paragraph === paragraph && !seenGroups.has(edge.groupId)) {
      seenGroups.add(edge.groupId);
      edgeSpans.push({ span: edge.cleanSpan, value: edge.groupId });
    }
  }
  const greyedSpans = model.greyed
    .filter((g) => g.paragraph === paragraph)
    .map((g) => ({ span: g.span, value: true }));
  const highlightSpans = highlights.spans
    .filter((h) => h.paragraph === paragraph)
    .map((h) => ({ span: h.span, value: true }));
  spansWith(mentionSpans);
  spansWith(edgeSpans);
  spansWith(greyedSpans);
  spansWith(highlightSpans);

  const points = [...cuts].sort((a, b) => a - b);
  const runs: StyledRun[] = [];
  const covering = (
    items: Array<{ span: Span; value: any }>,
    start: number,
    end: number
  ) => items.find((i) => i.span[0] <= start && end <= i.span[1]);
  for (let i = 0; i + 1 < points.length; i++) {
    const [start, end] = [points[i], points[i + 1]];
    if (start >= end) continue;
    runs.push({
      start,
      end,
      text: model.cleanSlice(paragraph, [start, end]),
      entityId: (covering(mentionSpans, start, end)?.value as number) ?? null,
      edgeGroup: (covering(edgeSpans, start, end)?.value as number) ?? null,
      greyed: Boolean(covering(greyedSpans, start, end)),
      highlighted: Boolean(covering(highlightSpans, start, end)),
    });
  }
  return {
    paragraph,
    status: record.status,
    mode,
    runs,
    rawText: record.rawText,
    outline: record.outline,
    summary: record.summary,
  };
}

/** Spans currently greyed in a paragraph (collapse side effect). */
export function greyedSpansOf(model: SessionModel, paragraph: number): Span[] {
  return model.greyed.filter((g) => g.paragraph === paragraph).map((g) => g.span);
}
