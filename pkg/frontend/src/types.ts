/** Wire and view-state types mirroring the server's JSON schemas. */

export type Span = [number, number]; // UTF-8 byte range

export interface WireEvent {
  seq: number;
  type:
    | "token"
    | "parse-event"
    | "graph-diff"
    | "paragraph-status"
    | "summary-ready"
    | "outline-ready"
    | "diagnostic"
    | "correction-applied"
    | "error";
  payload: any;
  request_id?: string;
}

export interface MentionInfo {
  paragraph: number;
  clean_span: Span;
  text: string;
}

export interface NodeInfo {
  id: number;
  label: string;
  placeholder: boolean;
  collapsed: boolean;
  hiddenBy: number | null;
  mentions: MentionInfo[];
}

export type Saliency = "H" | "L";

export interface EdgeInfo {
  edgeId: number;
  groupId: number;
  label: string;
  saliency: Saliency;
  source: number;
  target: number;
  paragraph: number;
  cleanSpan: Span;
}

export type ParagraphStatus = "streaming" | "complete" | "correcting" | "corrected";

export type TextMode = "original" | "outline" | "summary";

export type Hover =
  | { kind: "node"; id: number }
  | { kind: "edge"; edgeId: number }
  | { kind: "span"; paragraph: number; offset: number };

export interface ViewState {
  view: "split" | "merged";
  saliency: "high" | "all";
  textMode: Record<number, TextMode>;
  rawAnnotations: boolean;
  shownParagraphs: number[] | null; // null = all
  selection: number | null;
  hover: Hover | null;
}

export function defaultViewState(): ViewState {
  return {
    view: "split",
    // high-saliency only by default; the filter opens up to "all"
    saliency: "high",
    textMode: {},
    rawAnnotations: false,
    shownParagraphs: null,
    selection: null,
    hover: null,
  };
}

export interface GraphSnapshot {
  view: string;
  saliency: string;
  paragraphs: number[];
  nodes: Array<{
    id: number;
    label: string;
    placeholder: boolean;
    collapsed: boolean;
    hidden_by: number | null;
    mentions: Array<{ paragraph: number; clean_span: Span; text: string }>;
  }>;
  edges: Array<{
    edge_id: number;
    group_id: number;
    label: string;
    saliency: Saliency;
    source: number;
    target: number;
    paragraph: number;
    clean_span: Span;
  }>;
}
