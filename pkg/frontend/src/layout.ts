/** Layered left-to-right layout for one diagram, deterministic in its
 * input, plus position interpolation for animated merge/split
 * transitions. */

import { EdgeInfo, NodeInfo } from "./types.js";

export interface PlacedNode {
  id: number;
  label: string;
  placeholder: boolean;
  collapsed: boolean;
  x: number;
  y: number;
  width: number;
  height: number;
  highlighted: boolean;
  selected: boolean;
}

export interface PlacedEdge {
  edgeId: number;
  label: string;
  saliency: "H" | "L";
  source: number;
  target: number;
  highlighted: boolean;
}

const LAYER_WIDTH = 200;
const ROW_HEIGHT = 64;
const NODE_HEIGHT = 36;

export function layeredLayout(
  nodes: NodeInfo[],
  edges: EdgeInfo[]
): Map<number, { x: number; y: number; width: number; height: number }> {
  const ids = nodes.map((n) => n.id).sort((a, b) => a - b);
  const present = new Set(ids);
  const incoming = new Map<number, number[]>();
  const outgoing = new Map<number, number[]>();
  for (const id of ids) {
    incoming.set(id, []);
    outgoing.set(id, []);
  }
  for (const edge of edges) {
    if (!present.has(edge.source) || !present.has(edge.target)) continue;
    if (edge.source === edge.target) continue;
    outgoing.get(edge.source)!.push(edge.target);
    incoming.get(edge.target)!.push(edge.source);
  }
  // longest-path layering from the roots; cycles fall back to the
  // first unassigned node of the remaining subgraph
  const layer = new Map<number, number>();
  const queue = ids.filter((id) => incoming.get(id)!.length === 0);
  for (const id of queue) layer.set(id, 0);
  let frontier = [...queue];
  let guard = ids.length + 1;
  while (layer.size < ids.length && guard-- > 0) {
    if (frontier.length === 0) {
      const rest = ids.find((id) => !layer.has(id));
      if (rest === undefined) break;
      layer.set(rest, 0);
      frontier = [rest];
      continue;
    }
    const next: number[] = [];
    for (const id of frontier) {
      for (const target of outgoing.get(id)!.sort((a, b) => a - b)) {
        const proposed = layer.get(id)! + 1;
        if (!layer.has(target) || layer.get(target)! < proposed) {
          if (proposed <= ids.length) {
            layer.set(target, proposed);
            next.push(target);
          }
        }
      }
    }
    frontier = next;
  }
  const byLayer = new Map<number, number[]>();
  for (const id of ids) {
    const l = layer.get(id) ?? 0;
    if (!byLayer.has(l)) byLayer.set(l, []);
    byLayer.get(l)!.push(id);
  }
  const out = new Map<number, { x: number; y: number; width: number; height: number }>();
  const labels = new Map(nodes.map((n) => [n.id, n.label] as const));
  for (const [l, members] of [...byLayer.entries()].sort((a, b) => a[0] - b[0])) {
    members.sort((a, b) => a - b);
    members.forEach((id, row) => {
      const label = labels.get(id) ?? "";
      out.set(id, {
        x: l * LAYER_WIDTH + 20,
        y: row * ROW_HEIGHT + 20,
        width: Math.max(60, 14 + label.length * 7),
        height: NODE_HEIGHT,
      });
    });
  }
  return out;
}

/** Linear interpolation between two placements of the same node set,
 * used to animate split<->merged transitions. */
export function interpolatePositions(
  from: Map<number, { x: number; y: number }>,
  to: Map<number, { x: number; y: number }>,
  t: number
): Map<number, { x: number; y: number }> {
  const clamped = Math.max(0, Math.min(1, t));
  const out = new Map<number, { x: number; y: number }>();
  for (const [id, target] of to.entries()) {
    const start = from.get(id) ?? target;
    out.set(id, {
      x: start.x + (target.x - start.x) * clamped,
      y: start.y + (target.y - start.y) * clamped,
    });
  }
  return out;
}
