import { describe, expect, it } from "vitest";

import { layeredLayout, interpolatePositions } from "../src/layout.js";
import { SessionModel } from "../src/model.js";
import { buildScene, visibleElements } from "../src/scene.js";
import { defaultViewState, EdgeInfo, NodeInfo, ViewState } from "../src/types.js";

const encoder = new TextEncoder();

/** Hand-built two-paragraph model: 1-H->2, 1-L->3 in p0; 4-H->5 in p1;
 * node 1 also mentioned in p1 (co-reference across paragraphs). */
function demoModel(): SessionModel {
  const model = new SessionModel();
  const clean0 = "plates shift along faults, releasing stress.";
  const clean1 = "plates meet scales here.";
  const p0 = model.paragraph(0);
  p0.cleanBytes = Array.from(encoder.encode(clean0));
  p0.status = "complete";
  const p1 = model.paragraph(1);
  p1.cleanBytes = Array.from(encoder.encode(clean1));
  p1.status = "complete";
  const nodes: NodeInfo[] = [
    {
      id: 1, label: "plates", placeholder: false, collapsed: false, hiddenBy: null,
      mentions: [
        { paragraph: 0, clean_span: [0, 6], text: "plates" },
        { paragraph: 1, clean_span: [0, 6], text: "plates" },
      ],
    },
    {
      id: 2, label: "faults", placeholder: false, collapsed: false, hiddenBy: null,
      mentions: [{ paragraph: 0, clean_span: [19, 25], text: "faults" }],
    },
    {
      id: 3, label: "stress", placeholder: false, collapsed: false, hiddenBy: null,
      mentions: [{ paragraph: 0, clean_span: [37, 43], text: "stress" }],
    },
    {
      id: 4, label: "scales", placeholder: false, collapsed: false, hiddenBy: null,
      mentions: [{ paragraph: 1, clean_span: [12, 18], text: "scales" }],
    },
  ];
  for (const node of nodes) model.nodes.set(node.id, node);
  const edges: EdgeInfo[] = [
    {
      edgeId: 1, groupId: 1, label: "shift along", saliency: "H",
      source: 1, target: 2, paragraph: 0, cleanSpan: [7, 18],
    },
    {
      edgeId: 2, groupId: 2, label: "releasing", saliency: "L",
      source: 1, target: 3, paragraph: 0, cleanSpan: [27, 36],
    },
    {
      edgeId: 3, groupId: 3, label: "meet", saliency: "H",
      source: 1, target: 4, paragraph: 1, cleanSpan: [7, 11],
    },
  ];
  for (const edge of edges) model.edges.set(edge.edgeId, edge);
  return model;
}

function view(overrides: Partial<ViewState>): ViewState {
  return { ...defaultViewState(), ...overrides };
}

describe("visibility rules", () => {
  it("high saliency hides low edges and their now-isolated nodes", () => {
    const model = demoModel();
    const all = visibleElements(model, view({ saliency: "all" }), [0]);
    expect(all.nodes.map((n) => n.id)).toEqual([1, 2, 3]);
    expect(all.edges.map((e) => e.edgeId)).toEqual([1, 2]);
    const high = visibleElements(model, view({ saliency: "high" }), [0]);
    expect(high.nodes.map((n) => n.id)).toEqual([1, 2]);
    expect(high.edges.map((e) => e.edgeId)).toEqual([1]);
    // the hidden edge set is exactly the low-saliency set
    const hiddenEdges = all.edges.filter((e) => !high.edges.includes(e));
    expect(hiddenEdges.every((e) => e.saliency === "L")).toBe(true);
  });

  it("merged node count equals the id-set union of shown paragraphs", () => {
    const model = demoModel();
    const merged = visibleElements(model, view({ saliency: "all", view: "merged" }), [0, 1]);
    expect(merged.nodes.map((n) => n.id)).toEqual([1, 2, 3, 4]);
    const single = visibleElements(model, view({ saliency: "all" }), [1]);
    expect(single.nodes.map((n) => n.id)).toEqual([1, 4]);
  });

  it("collapse-hidden nodes and their edges disappear", () => {
    const model = demoModel();
    model.nodes.get(2)!.hiddenBy = 1;
    const scene = buildScene(model, view({ saliency: "all", view: "split", shownParagraphs: [0] }));
    const diagram = scene.diagrams[0];
    expect(diagram.nodes.map((n) => n.id)).toEqual([1, 3]);
    expect(diagram.edges.map((e) => e.edgeId)).toEqual([2]);
  });

  it("single-paragraph merged equals split", () => {
    const model = demoModel();
    const split = buildScene(
      model, view({ view: "split", saliency: "all", shownParagraphs: [0] })
    ).diagrams[0];
    const merged = buildScene(
      model, view({ view: "merged", saliency: "all", shownParagraphs: [0] })
    ).diagrams[0];
    expect(split.nodes).toEqual(merged.nodes);
    expect(split.edges).toEqual(merged.edges);
  });
});

describe("bidirectional highlighting", () => {
  it("hovering a node highlights its co-references and their text", () => {
    const model = demoModel();
    const scene = buildScene(model, view({ hover: { kind: "node", id: 1 } }));
    expect(scene.highlights.nodeIds.has(1)).toBe(true);
    const spans = scene.highlights.spans.map((s) => `${s.paragraph}:${s.span[0]}`);
    expect(spans).toContain("0:0");
    expect(spans).toContain("1:0"); // the co-referenced mention in p1
  });

  it("hovering a mention token highlights the node and all mentions", () => {
    const model = demoModel();
    const scene = buildScene(
      model,
      view({ hover: { kind: "span", paragraph: 0, offset: 2 } })
    );
    expect(scene.highlights.nodeIds.has(1)).toBe(true);
    const mentionSpans = scene.highlights.spans.filter(
      (s) => s.span[0] === 0 && s.span[1] === 6
    );
    expect(mentionSpans.length).toBe(2); // one per paragraph
  });

  it("hovering plain text highlights nothing", () => {
    const model = demoModel();
    const scene = buildScene(
      model,
      view({ hover: { kind: "span", paragraph: 0, offset: 26 } })
    );
    expect(scene.highlights.nodeIds.size).toBe(0);
    expect(scene.highlights.edgeIds.size).toBe(0);
  });

  it("hovering an edge highlights its relationship tokens", () => {
    const model = demoModel();
    const scene = buildScene(model, view({ hover: { kind: "edge", edgeId: 1 } }));
    expect(scene.highlights.edgeIds.has(1)).toBe(true);
    expect(
      scene.highlights.spans.some(
        (s) => s.paragraph === 0 && s.span[0] === 7 && s.span[1] === 18
      )
    ).toBe(true);
  });

  it("selection highlights the node and its connected edges", () => {
    const model = demoModel();
    const scene = buildScene(model, view({ selection: 1, saliency: "all" }));
    expect(scene.highlights.edgeIds).toEqual(new Set([1, 2, 3]));
  });
});

describe("text blocks", () => {
  it("styles mention, relation, greyed, and highlighted runs", () => {
    const model = demoModel();
    model.greyed.push({ paragraph: 0, span: [19, 25], by: 1 });
    const scene = buildScene(
      model,
      view({ hover: { kind: "node", id: 3 }, shownParagraphs: [0], saliency: "all" })
    );
    const block = scene.textBlocks[0];
    const text = block.runs.map((r) => r.text).join("");
    expect(text).toBe("plates shift along faults, releasing stress.");
    const faults = block.runs.find((r) => r.text === "faults");
    expect(faults?.greyed).toBe(true);
    expect(faults?.entityId).toBe(2);
    const stress = block.runs.find((r) => r.text === "stress");
    expect(stress?.highlighted).toBe(true);
    const releasing = block.runs.find((r) => r.text === "releasing");
    expect(releasing?.edgeGroup).toBe(2);
  });

  it("switches modes per paragraph", () => {
    const model = demoModel();
    model.paragraph(0).summary = "short version";
    model.paragraph(0).outline = "# outline";
    const scene = buildScene(
      model,
      view({ textMode: { 0: "summary" }, shownParagraphs: [0] })
    );
    expect(scene.textBlocks[0].mode).toBe("summary");
    expect(scene.textBlocks[0].summary).toBe("short version");
  });
});

describe("layout", () => {
  it("is deterministic and layered left to right", () => {
    const model = demoModel();
    const { nodes, edges } = visibleElements(model, view({ saliency: "all" }), [0, 1]);
    const a = layeredLayout(nodes, edges);
    const b = layeredLayout(nodes, edges);
    expect(a).toEqual(b);
    expect(a.get(1)!.x).toBeLessThan(a.get(2)!.x); // source left of target
  });

  it("interpolates between placements", () => {
    const from = new Map([[1, { x: 0, y: 0 }]]);
    const to = new Map([[1, { x: 100, y: 50 }]]);
    const mid = interpolatePositions(from, to, 0.5);
    expect(mid.get(1)).toEqual({ x: 50, y: 25 });
    expect(interpolatePositions(from, to, 1).get(1)).toEqual({ x: 100, y: 50 });
  });
});

describe("placeholders", () => {
  it("renders placeholder nodes as an ellipsis", () => {
    const model = demoModel();
    model.nodes.set(9, {
      id: 9, label: "", placeholder: true, collapsed: false, hiddenBy: null,
      mentions: [],
    });
    model.edges.set(9, {
      edgeId: 9, groupId: 9, label: "points at", saliency: "H",
      source: 1, target: 9, paragraph: 0, cleanSpan: [7, 18],
    });
    const scene = buildScene(
      model, view({ saliency: "all", shownParagraphs: [0] })
    );
    const placeholder = scene.diagrams[0].nodes.find((n) => n.id === 9);
    expect(placeholder?.label).toBe("…");
    expect(placeholder?.placeholder).toBe(true);
  });
});
