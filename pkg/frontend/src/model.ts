/** Client-side session model folded from the server's wire-event log.
 *
 * The model applies graph diffs from their payloads alone (the server
 * enumerates every effect), so it never re-implements graph mutation
 * rules; structural gestures round-trip through the server and come
 * back as events.  Rebuilding from any log prefix is deterministic,
 * which keeps the UI a pure function of (log prefix, view state).
 *
 * All spans are UTF-8 byte ranges into paragraph-local clean text, so
 * clean text is stored as bytes and decoded per styled run.
 */

import {
  EdgeInfo,
  MentionInfo,
  NodeInfo,
  ParagraphStatus,
  Span,
  WireEvent,
} from "./types.js";

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export interface GreyedSpan {
  paragraph: number;
  span: Span;
  by: number;
}

export interface ParagraphModel {
  index: number;
  status: ParagraphStatus;
  cleanBytes: number[];
  rawText: string;
  summary: string | null;
  summaryEvents: any[] | null;
  outline: string | null;
  diagnostics: any[];
}

export class SessionModel {
  nodes = new Map<number, NodeInfo>();
  edges = new Map<number, EdgeInfo>();
  paragraphs = new Map<number, ParagraphModel>();
  greyed: GreyedSpan[] = [];
  errors: any[] = [];
  lastSeq = 0;

  paragraph(index: number): ParagraphModel {
    let p = this.paragraphs.get(index);
    if (!p) {
      p = {
        index,
        status: "streaming",
        cleanBytes: [],
        rawText: "",
        summary: null,
        summaryEvents: null,
        outline: null,
        diagnostics: [],
      };
      this.paragraphs.set(index, p);
    }
    return p;
  }

  cleanText(index: number): string {
    const p = this.paragraphs.get(index);
    return p ? decoder.decode(new Uint8Array(p.cleanBytes)) : "";
  }

  cleanSlice(index: number, span: Span): string {
    const p = this.paragraphs.get(index);
    if (!p) return "";
    return decoder.decode(new Uint8Array(p.cleanBytes.slice(span[0], span[1])));
  }

  apply(event: WireEvent): void {
    if (event.seq <= this.lastSeq) return; // resumed duplicates are a bug upstream
    this.lastSeq = event.seq;
    switch (event.type) {
      case "parse-event":
        this.applyParse(event.payload);
        break;
      case "graph-diff":
        this.applyDiff(event.payload);
        break;
      case "paragraph-status": {
        const { paragraph, status } = event.payload;
        if (paragraph >= 0) this.paragraph(paragraph).status = status;
        break;
      }
      case "summary-ready": {
        const p = this.paragraph(event.payload.paragraph);
        p.summary = event.payload.text;
        p.summaryEvents = event.payload.events;
        break;
      }
      case "outline-ready":
        this.paragraph(event.payload.paragraph).outline = event.payload.markdown;
        break;
      case "diagnostic":
        this.paragraph(event.payload.paragraph ?? 0).diagnostics.push(event.payload);
        break;
      case "correction-applied": {
        const payload = event.payload;
        if (payload.paragraphs) {
          // trim/merge rewrites: raw text per paragraph, clean unchanged
          for (const [index, raw] of Object.entries(payload.paragraphs)) {
            this.paragraph(Number(index)).rawText = raw as string;
          }
        } else if (typeof payload.paragraph === "number") {
          const p = this.paragraph(payload.paragraph);
          if (typeof payload.raw_text === "string") p.rawText = payload.raw_text;
          if (typeof payload.clean_text === "string") {
            p.cleanBytes = Array.from(encoder.encode(payload.clean_text));
          }
        }
        break;
      }
      case "error":
        this.errors.push(event.payload);
        break;
      case "token":
        break;
    }
  }

  applyAll(events: WireEvent[]): void {
    for (const event of events) this.apply(event);
  }

  private applyParse(payload: any): void {
    const doc = payload.event;
    const paragraph = payload.paragraph ?? 0;
    const p = this.paragraph(paragraph);
    if (doc.type === "plain") {
      p.cleanBytes.push(...encoder.encode(doc.text));
      p.rawText += doc.text;
    } else if (doc.type === "entity" || doc.type === "relation") {
      p.cleanBytes.push(...encoder.encode(doc.label));
      p.rawText += renderAnnotation(doc);
    }
    // paragraph_break and malformed contribute nothing to a paragraph
  }

  private applyDiff(diff: any): void {
    const p = diff.payload;
    switch (diff.kind) {
      case "node_added":
        this.nodes.set(p.id, {
          id: p.id,
          label: p.label,
          placeholder: p.placeholder,
          collapsed: false,
          hiddenBy: null,
          mentions: p.mention ? [asMention(p.mention)] : [],
        });
        break;
      case "mention_added":
        this.nodes.get(p.id)?.mentions.push(asMention(p.mention));
        break;
      case "placeholder_resolved": {
        const node = this.nodes.get(p.id);
        if (node) {
          node.placeholder = false;
          node.label = p.label;
          node.mentions.push(asMention(p.mention));
        }
        break;
      }
      case "label_upgraded": {
        const node = this.nodes.get(p.id);
        if (node) node.label = p.label;
        break;
      }
      case "edge_added":
        this.edges.set(p.edge_id, {
          edgeId: p.edge_id,
          groupId: p.group_id,
          label: p.label,
          saliency: p.saliency,
          source: p.source,
          target: p.target,
          paragraph: p.paragraph,
          cleanSpan: p.clean_span,
        });
        break;
      case "edges_removed":
        for (const id of p.edge_ids) this.edges.delete(id);
        break;
      case "node_trimmed":
        for (const id of p.removed_edges ?? []) this.edges.delete(id);
        this.nodes.delete(p.id);
        break;
      case "nodes_merged": {
        const from = this.nodes.get(p.from);
        const into = this.nodes.get(p.into);
        for (const id of p.removed_edges ?? []) this.edges.delete(id);
        if (from && into) {
          into.mentions = [...into.mentions, ...from.mentions].sort(
            (a, b) => a.paragraph - b.paragraph || a.clean_span[0] - b.clean_span[0]
          );
          into.label = p.label;
          into.placeholder = false;
        }
        this.nodes.delete(p.from);
        for (const edge of this.edges.values()) {
          if (edge.source === p.from) edge.source = p.into;
          if (edge.target === p.from) edge.target = p.into;
        }
        break;
      }
      case "collapse_changed": {
        const node = this.nodes.get(p.id);
        if (node) node.collapsed = p.collapsed;
        break;
      }
      case "visibility_changed":
        for (const id of p.hidden ?? []) {
          const node = this.nodes.get(id);
          if (node) node.hiddenBy = p.by;
        }
        for (const span of p.greyed_spans ?? []) {
          this.greyed.push({
            paragraph: span.paragraph,
            span: span.clean_span,
            by: p.by,
          });
        }
        for (const id of p.shown ?? []) {
          const node = this.nodes.get(id);
          if (node) node.hiddenBy = null;
        }
        if (p.shown) {
          this.greyed = this.greyed.filter((g) => g.by !== p.by);
        }
        break;
      case "mentions_retracted": {
        const node = this.nodes.get(p.id);
        if (!node) break;
        const doomed = new Set(
          (p.clean_spans as Span[]).map((s) => `${p.paragraph}:${s[0]}:${s[1]}`)
        );
        node.mentions = node.mentions.filter(
          (m) => !doomed.has(`${m.paragraph}:${m.clean_span[0]}:${m.clean_span[1]}`)
        );
        if (p.removed_node) this.nodes.delete(p.id);
        else {
          node.placeholder = p.placeholder;
          node.label = p.label;
        }
        break;
      }
      case "spans_shifted": {
        const shift = (span: Span, from: number, delta: number): Span =>
          span[0] >= from ? [span[0] + delta, span[1] + delta] : span;
        for (const node of this.nodes.values()) {
          node.mentions = node.mentions.map((m) =>
            m.paragraph === p.paragraph
              ? { ...m, clean_span: shift(m.clean_span, p.clean_from, p.clean_delta) }
              : m
          );
        }
        for (const edge of this.edges.values()) {
          if (edge.paragraph === p.paragraph) {
            edge.cleanSpan = shift(edge.cleanSpan, p.clean_from, p.clean_delta);
          }
        }
        this.greyed = this.greyed.map((g) =>
          g.paragraph === p.paragraph
            ? { ...g, span: shift(g.span, p.clean_from, p.clean_delta) }
            : g
        );
        break;
      }
    }
  }
}

function asMention(doc: any): MentionInfo {
  return { paragraph: doc.paragraph, clean_span: doc.clean_span, text: doc.text };
}

export function renderAnnotation(doc: any): string {
  if (doc.type === "entity") return `[${doc.label} ($N${doc.id})]`;
  const pairs = doc.pairs
    .map((p: any) => `$${p.saliency}, $N${p.source}, $N${p.target}`)
    .join("; ");
  return `[${doc.label} (${pairs})]`;
}

/** Fold a whole log prefix into a fresh model (the pure-function path). */
export function modelFromLog(events: WireEvent[]): SessionModel {
  const model = new SessionModel();
  model.applyAll(events);
  return model;
}
